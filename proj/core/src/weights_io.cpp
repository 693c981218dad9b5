#include "lsk/weights_io.hpp"

#include <filesystem>
#include <fstream>

namespace lsk {

namespace fs = std::filesystem;
using nlohmann::json;

void save_weight_bundle(const std::string& dir, const json& config_echo,
                        const std::map<std::string, Tensor>& tensors) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create bundle directory " + dir + ": " + ec.message());
  json manifest;
  manifest["config"] = config_echo;
  json files = json::object();
  for (const auto& [name, tensor] : tensors) {
    const std::string file = name + ".lskt";
    write_lskt_file((fs::path(dir) / file).string(), tensor);
    files[name] = file;
  }
  manifest["tensors"] = files;
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

WeightBundle load_weight_bundle(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot open manifest.json in " + dir);
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest.json in " + dir + ": " + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_object())
    throw IoError("manifest.json in " + dir + " has no tensor table");
  WeightBundle bundle;
  bundle.config = manifest.value("config", json::object());
  for (const auto& [name, file] : manifest["tensors"].items())
    bundle.tensors[name] = read_lskt_file((fs::path(dir) / file.get<std::string>()).string());
  return bundle;
}

namespace {

Tensor vector_to_tensor(const std::vector<double>& v) {
  Tensor t({1, 1, 1, static_cast<i64>(v.size())});
  t.data = v;
  return t;
}

std::vector<double> tensor_to_vector(const Tensor& t, i64 expected, const std::string& name) {
  require(t.numel() == expected, "bundle tensor '" + name + "' has " +
                                     std::to_string(t.numel()) + " values, expected " +
                                     std::to_string(expected));
  return t.data;
}

const Tensor& fetch(const std::map<std::string, Tensor>& m, const std::string& name) {
  const auto it = m.find(name);
  if (it == m.end()) throw IoError("weight bundle is missing tensor '" + name + "'");
  return it->second;
}

void conv_to_map(std::map<std::string, Tensor>& out, const std::string& prefix,
                 const ConvWeights& w) {
  out[prefix + ".weight"] = w.weight;
  if (w.has_bias()) out[prefix + ".bias"] = vector_to_tensor(w.bias);
}

ConvWeights conv_from_map(const std::map<std::string, Tensor>& m, const std::string& prefix,
                          ConvKind kind, int in_ch, int out_ch, int k, int dilation) {
  ConvWeights w = make_conv(kind, in_ch, out_ch, k, dilation, /*with_bias=*/false);
  const Tensor& weight = fetch(m, prefix + ".weight");
  require(weight.shape == w.weight.shape, "bundle tensor '" + prefix + ".weight' has shape " +
                                              weight.shape.str() + ", expected " +
                                              w.weight.shape.str());
  w.weight = weight;
  const auto bias_it = m.find(prefix + ".bias");
  if (bias_it != m.end())
    w.bias = tensor_to_vector(bias_it->second, out_ch, prefix + ".bias");
  w.validate();
  return w;
}

void affine_to_map(std::map<std::string, Tensor>& out, const std::string& prefix,
                   const ChannelAffine& a) {
  out[prefix + ".scale"] = vector_to_tensor(a.scale);
  out[prefix + ".shift"] = vector_to_tensor(a.shift);
}

ChannelAffine affine_from_map(const std::map<std::string, Tensor>& m, const std::string& prefix,
                              int channels) {
  ChannelAffine a;
  a.scale = tensor_to_vector(fetch(m, prefix + ".scale"), channels, prefix + ".scale");
  a.shift = tensor_to_vector(fetch(m, prefix + ".shift"), channels, prefix + ".shift");
  return a;
}

json plan_to_json(const DecompositionPlan& plan) {
  json arr = json::array();
  for (const KernelSpec& s : plan.specs) arr.push_back(json::array({s.k, s.d}));
  return arr;
}

DecompositionPlan plan_from_json(const json& j) {
  std::vector<KernelSpec> specs;
  for (const auto& pair : j) {
    require(pair.is_array() && pair.size() == 2, "plan entries must be [k, d] pairs");
    specs.push_back({pair[0].get<int>(), pair[1].get<int>()});
  }
  return DecompositionPlan::from_specs(std::move(specs));
}

}  // namespace

json lsk_config_to_json(const LskConfig& cfg) {
  json j;
  j["channels"] = cfg.channels;
  j["plan"] = plan_to_json(cfg.plan);
  j["selection_kernel"] = cfg.selection_kernel;
  j["selection_mode"] = selection_mode_name(cfg.selection_mode);
  j["pooling"] = pool_mode_name(cfg.pooling);
  j["branch_channels"] = cfg.branch_channels;
  return j;
}

LskConfig lsk_config_from_json(const json& j) {
  LskConfig cfg;
  cfg.channels = j.at("channels").get<int>();
  cfg.plan = plan_from_json(j.at("plan"));
  cfg.selection_kernel = j.value("selection_kernel", 7);
  cfg.selection_mode = selection_mode_from_name(j.value("selection_mode", "spatial"));
  cfg.pooling = pool_mode_from_name(j.value("pooling", "both"));
  cfg.branch_channels = j.value("branch_channels", 0);
  cfg.validate();
  return cfg;
}

std::map<std::string, Tensor> lsk_weights_to_tensors(const LskWeights& w) {
  std::map<std::string, Tensor> m;
  for (std::size_t i = 0; i < w.dw.size(); ++i) conv_to_map(m, "dw." + std::to_string(i), w.dw[i]);
  for (std::size_t i = 0; i < w.proj.size(); ++i)
    conv_to_map(m, "proj." + std::to_string(i), w.proj[i]);
  if (w.select.out_channels > 0) conv_to_map(m, "select", w.select);
  if (w.fuse.out_channels > 0) conv_to_map(m, "fuse", w.fuse);
  if (w.cs_reduce.out_channels > 0) conv_to_map(m, "cs_reduce", w.cs_reduce);
  for (std::size_t i = 0; i < w.cs_logits.size(); ++i)
    conv_to_map(m, "cs_logits." + std::to_string(i), w.cs_logits[i]);
  return m;
}

LskWeights lsk_weights_from_tensors(const LskConfig& cfg,
                                    const std::map<std::string, Tensor>& tensors) {
  cfg.validate();
  LskWeights w;
  const int C = cfg.channels, Cb = cfg.branch_width(), n = cfg.branches();
  for (int i = 0; i < n; ++i) {
    const KernelSpec s = cfg.plan.specs[static_cast<std::size_t>(i)];
    w.dw.push_back(
        conv_from_map(tensors, "dw." + std::to_string(i), ConvKind::kDepthwise, C, C, s.k, s.d));
  }
  for (int i = 0; i < n; ++i)
    w.proj.push_back(
        conv_from_map(tensors, "proj." + std::to_string(i), ConvKind::kDense, C, Cb, 1, 1));
  const bool spatial = cfg.selection_mode == SelectionMode::kSpatial ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  if (spatial)
    w.select = conv_from_map(tensors, "select", ConvKind::kDense, cfg.pooled_channels(), n,
                             cfg.selection_kernel, 1);
  w.fuse = conv_from_map(tensors, "fuse", ConvKind::kDense, Cb, C, 1, 1);
  const bool channel = cfg.selection_mode == SelectionMode::kChannel ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  if (channel) {
    w.cs_reduce = conv_from_map(tensors, "cs_reduce", ConvKind::kDense, Cb, cfg.cs_hidden(), 1, 1);
    for (int i = 0; i < n; ++i)
      w.cs_logits.push_back(conv_from_map(tensors, "cs_logits." + std::to_string(i),
                                          ConvKind::kDense, cfg.cs_hidden(), Cb, 1, 1));
  }
  w.validate_against(cfg);
  return w;
}

void save_lsk_weights(const std::string& dir, const LskConfig& cfg, const LskWeights& w) {
  w.validate_against(cfg);
  save_weight_bundle(dir, lsk_config_to_json(cfg), lsk_weights_to_tensors(w));
}

LskWeights load_lsk_weights(const std::string& dir, const LskConfig& cfg) {
  WeightBundle bundle = load_weight_bundle(dir);
  if (!bundle.config.empty()) {
    const json expect = lsk_config_to_json(cfg);
    require(bundle.config == expect,
            "weight bundle config echo does not match the requested config: bundle has " +
                bundle.config.dump() + ", expected " + expect.dump());
  }
  return lsk_weights_from_tensors(cfg, bundle.tensors);
}

json backbone_config_to_json(const BackboneConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["channels"] = cfg.channels;
  j["depths"] = cfg.depths;
  j["plan"] = plan_to_json(cfg.plan);
  j["ffn_ratio"] = cfg.ffn_ratio;
  j["selection_kernel"] = cfg.selection_kernel;
  j["selection_mode"] = selection_mode_name(cfg.selection_mode);
  j["pooling"] = pool_mode_name(cfg.pooling);
  return j;
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig cfg;
  cfg.name = j.value("name", "custom");
  const auto ch = j.at("channels");
  const auto de = j.at("depths");
  require(ch.is_array() && ch.size() == 4, "backbone config: channels must have 4 entries");
  require(de.is_array() && de.size() == 4, "backbone config: depths must have 4 entries");
  for (int i = 0; i < 4; ++i) {
    cfg.channels[static_cast<std::size_t>(i)] = ch[static_cast<std::size_t>(i)].get<int>();
    cfg.depths[static_cast<std::size_t>(i)] = de[static_cast<std::size_t>(i)].get<int>();
  }
  cfg.plan = plan_from_json(j.at("plan"));
  if (j.contains("ffn_ratio")) {
    const auto fr = j.at("ffn_ratio");
    require(fr.is_array() && fr.size() == 4, "backbone config: ffn_ratio must have 4 entries");
    for (int i = 0; i < 4; ++i)
      cfg.ffn_ratio[static_cast<std::size_t>(i)] = fr[static_cast<std::size_t>(i)].get<double>();
  }
  cfg.selection_kernel = j.value("selection_kernel", 7);
  cfg.selection_mode = selection_mode_from_name(j.value("selection_mode", "spatial"));
  cfg.pooling = pool_mode_from_name(j.value("pooling", "both"));
  cfg.validate();
  return cfg;
}

namespace {

void lsk_to_map_prefixed(std::map<std::string, Tensor>& out, const std::string& prefix,
                         const LskWeights& w) {
  for (auto& [name, tensor] : lsk_weights_to_tensors(w)) out[prefix + name] = tensor;
}

LskWeights lsk_from_map_prefixed(const std::map<std::string, Tensor>& m,
                                 const std::string& prefix, const LskConfig& cfg) {
  std::map<std::string, Tensor> scoped;
  for (const auto& [name, tensor] : m)
    if (name.rfind(prefix, 0) == 0) scoped[name.substr(prefix.size())] = tensor;
  return lsk_weights_from_tensors(cfg, scoped);
}

void block_to_map(std::map<std::string, Tensor>& out, const std::string& prefix,
                  const LskBlockWeights& w) {
  conv_to_map(out, prefix + "pre", w.pre);
  lsk_to_map_prefixed(out, prefix + "lsk.", w.lsk);
  conv_to_map(out, prefix + "post", w.post);
  conv_to_map(out, prefix + "ffn.fc1", w.ffn_fc1);
  conv_to_map(out, prefix + "ffn.dw", w.ffn_dw);
  conv_to_map(out, prefix + "ffn.fc2", w.ffn_fc2);
}

LskBlockWeights block_from_map(const std::map<std::string, Tensor>& m, const std::string& prefix,
                               const LskBlockConfig& cfg) {
  const int C = cfg.channels();
  const int hidden = cfg.ffn_hidden();
  LskBlockWeights w;
  w.pre = conv_from_map(m, prefix + "pre", ConvKind::kDense, C, C, 1, 1);
  w.lsk = lsk_from_map_prefixed(m, prefix + "lsk.", cfg.lsk);
  w.post = conv_from_map(m, prefix + "post", ConvKind::kDense, C, C, 1, 1);
  w.ffn_fc1 = conv_from_map(m, prefix + "ffn.fc1", ConvKind::kDense, C, hidden, 1, 1);
  w.ffn_dw = conv_from_map(m, prefix + "ffn.dw", ConvKind::kDepthwise, hidden, hidden, 3, 1);
  w.ffn_fc2 = conv_from_map(m, prefix + "ffn.fc2", ConvKind::kDense, hidden, C, 1, 1);
  w.validate_against(cfg);
  return w;
}

}  // namespace

std::map<std::string, Tensor> backbone_weights_to_tensors(const BackboneWeights& w) {
  std::map<std::string, Tensor> m;
  conv_to_map(m, "stem.conv0", w.stem0);
  affine_to_map(m, "stem.norm0", w.stem_norm0);
  conv_to_map(m, "stem.conv1", w.stem1);
  affine_to_map(m, "stem.norm1", w.stem_norm1);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string sp = "stage" + std::to_string(s + 1) + ".";
    const BackboneStageWeights& st = w.stages[s];
    if (st.down) conv_to_map(m, sp + "down", *st.down);
    if (st.down_norm) affine_to_map(m, sp + "down_norm", *st.down_norm);
    for (std::size_t b = 0; b < st.blocks.size(); ++b)
      block_to_map(m, sp + "block" + std::to_string(b) + ".", st.blocks[b]);
    affine_to_map(m, sp + "out_norm", st.out_norm);
  }
  return m;
}

BackboneWeights backbone_weights_from_tensors(const BackboneConfig& cfg,
                                              const std::map<std::string, Tensor>& tensors) {
  cfg.validate();
  BackboneWeights w;
  const int mid = cfg.stem_mid_channels();
  w.stem0 = conv_from_map(tensors, "stem.conv0", ConvKind::kDense, 3, mid, 3, 1);
  w.stem_norm0 = affine_from_map(tensors, "stem.norm0", mid);
  w.stem1 = conv_from_map(tensors, "stem.conv1", ConvKind::kDense, mid, cfg.channels[0], 3, 1);
  w.stem_norm1 = affine_from_map(tensors, "stem.norm1", cfg.channels[0]);
  for (int s = 0; s < 4; ++s) {
    const std::string sp = "stage" + std::to_string(s + 1) + ".";
    BackboneStageWeights& st = w.stages[static_cast<std::size_t>(s)];
    const int C = cfg.channels[static_cast<std::size_t>(s)];
    if (s > 0) {
      st.down = conv_from_map(tensors, sp + "down", ConvKind::kDense,
                              cfg.channels[static_cast<std::size_t>(s) - 1], C, 3, 1);
      st.down_norm = affine_from_map(tensors, sp + "down_norm", C);
    }
    const LskBlockConfig bc = cfg.block_config(s);
    for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b)
      st.blocks.push_back(block_from_map(tensors, sp + "block" + std::to_string(b) + ".", bc));
    st.out_norm = affine_from_map(tensors, sp + "out_norm", C);
  }
  return w;
}

void save_backbone_weights(const std::string& dir, const BackboneConfig& cfg,
                           const BackboneWeights& w) {
  save_weight_bundle(dir, backbone_config_to_json(cfg), backbone_weights_to_tensors(w));
}

BackboneWeights load_backbone_weights(const std::string& dir, const BackboneConfig& cfg) {
  WeightBundle bundle = load_weight_bundle(dir);
  if (!bundle.config.empty()) {
    const json expect = backbone_config_to_json(cfg);
    require(bundle.config == expect,
            "weight bundle config echo does not match the requested backbone config");
  }
  return backbone_weights_from_tensors(cfg, bundle.tensors);
}

}  // namespace lsk
