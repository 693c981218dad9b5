// lsk: command-line front end for the LSK library.
//
// Subcommands: plan, cost, forward, gradcheck, analyze, export.
// Exit codes: 0 success, 1 failed check, 2 contract violation (including bad
// flags), 3 I/O or format error. Every run echoes its resolved configuration
// so results are replayable.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lsk/analysis.hpp"
#include "lsk/config.hpp"
#include "lsk/gradcheck.hpp"
#include "lsk/report.hpp"
#include "lsk/weights_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lsk;

namespace {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string checksum(const Tensor& t) {
  std::uint64_t h = fnv1a(&t.shape, sizeof(t.shape));
  h = fnv1a(t.data.data(), t.data.size() * sizeof(double), h);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void echo_config(const json& cfg, bool as_json, json& out) {
  if (as_json) {
    out["config"] = cfg;
  } else {
    std::cout << "config: " << cfg.dump() << "\n";
  }
}

void finish(bool as_json, const json& out) {
  if (as_json) std::cout << out.dump(2) << "\n";
}

std::vector<KernelSpec> parse_plan_arg(const std::string& text) {
  std::string cleaned;
  for (char c : text) {
    if (c == '(' || c == ')' || c == ' ') continue;
    cleaned += c;
  }
  // "5x1,7x3" or "->"-joined or flat "5,1,7,3"
  for (std::size_t pos; (pos = cleaned.find("->")) != std::string::npos;)
    cleaned.replace(pos, 2, ",");
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  std::string tok;
  while (std::getline(in, tok, ','))
    if (!tok.empty()) tokens.push_back(tok);
  std::vector<KernelSpec> specs;
  if (!tokens.empty() && tokens.front().find('x') != std::string::npos) {
    for (const std::string& t : tokens) {
      const auto sep = t.find('x');
      require(sep != std::string::npos, "plan token '" + t + "' must look like 5x1");
      specs.push_back({std::stoi(t.substr(0, sep)), std::stoi(t.substr(sep + 1))});
    }
  } else {
    require(tokens.size() % 2 == 0, "flat plan list must have an even number of entries");
    for (std::size_t i = 0; i + 1 < tokens.size(); i += 2)
      specs.push_back({std::stoi(tokens[i]), std::stoi(tokens[i + 1])});
  }
  require(!specs.empty(), "plan '" + text + "' is empty");
  return specs;
}

json cost_report_to_json(const CostReport& r) {
  json j;
  j["params_without_bias"] = r.params_without_bias;
  j["params_with_bias"] = r.params_with_bias;
  j["flops"] = r.flops;
  json ledger = json::array();
  for (const CostLine& line : r.ledger) {
    json l;
    l["name"] = line.name;
    l["weight_params"] = line.weight_params;
    l["bias_params"] = line.bias_params;
    l["flops"] = line.flops;
    if (!line.note.empty()) l["note"] = line.note;
    ledger.push_back(std::move(l));
  }
  j["ledger"] = std::move(ledger);
  return j;
}

void print_cost_table(const CostReport& r) {
  std::printf("%-40s %14s %10s %18s\n", "layer", "weight params", "bias", "flops");
  for (const CostLine& line : r.ledger)
    std::printf("%-40s %14lld %10lld %18lld  %s\n", line.name.c_str(),
                static_cast<long long>(line.weight_params),
                static_cast<long long>(line.bias_params), static_cast<long long>(line.flops),
                line.note.c_str());
  std::printf("%-40s %14lld %10lld %18lld\n", "total", static_cast<long long>(r.params_without_bias),
              static_cast<long long>(r.params_with_bias - r.params_without_bias),
              static_cast<long long>(r.flops));
}

std::string plan_flag_string(const DecompositionPlan& plan) {
  std::string s;
  for (std::size_t i = 0; i < plan.specs.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(plan.specs[i].k) + "x" + std::to_string(plan.specs[i].d);
  }
  return s;
}

// ---- plan ----

int run_plan(int rf, int max_branches, const std::vector<int>& ks, const std::string& objective,
             int channels, int hw, int branch_channels, int limit, bool as_json) {
  SearchQuery q;
  q.target_rf = rf;
  q.max_branches = max_branches;
  q.k_candidates = ks;
  q.objective = objective == "flops" ? CostObjective::kMinFlops : CostObjective::kMinParams;
  q.cost.channels = channels;
  q.cost.height = q.cost.width = hw;
  q.cost.branch_channels = branch_channels;

  json cfg;
  cfg["command"] = "plan";
  cfg["rf"] = rf;
  cfg["max_branches"] = max_branches;
  cfg["k_candidates"] = q.k_candidates.empty() ? default_k_candidates() : q.k_candidates;
  cfg["objective"] = objective;
  cfg["channels"] = channels;
  cfg["hw"] = hw;
  cfg["branch_channels"] = branch_channels;
  cfg["limit"] = limit;
  json out;
  echo_config(cfg, as_json, out);

  const auto results = search_decompositions(q);
  if (results.empty()) {
    if (as_json) {
      out["results"] = json::array();
      out["note"] = "no valid decompositions for the given constraints";
      finish(as_json, out);
    } else {
      std::cout << "no valid decompositions for RF " << rf << " with <= " << max_branches
                << " branches\n";
    }
    return 0;
  }
  json arr = json::array();
  if (!as_json)
    std::printf("%-28s %4s %3s %12s %12s %16s\n", "plan", "RF", "N", "#P(no bias)", "#P",
                "FLOPs");
  int rank = 0;
  for (const SearchResult& r : results) {
    if (limit > 0 && rank >= limit) break;
    ++rank;
    if (as_json) {
      json item;
      item["plan"] = plan_flag_string(r.plan);
      item["rf"] = r.plan.total_rf();
      item["branches"] = r.plan.branches();
      item["params_without_bias"] = r.cost.params_without_bias;
      item["params_with_bias"] = r.cost.params_with_bias;
      item["flops"] = r.cost.flops;
      arr.push_back(std::move(item));
    } else {
      std::printf("%-28s %4d %3d %12lld %12lld %16lld\n", r.plan.str().c_str(),
                  r.plan.total_rf(), r.plan.branches(),
                  static_cast<long long>(r.cost.params_without_bias),
                  static_cast<long long>(r.cost.params_with_bias),
                  static_cast<long long>(r.cost.flops));
    }
  }
  if (as_json) {
    out["results"] = std::move(arr);
    finish(as_json, out);
  }
  return 0;
}

// ---- cost ----

int run_cost(const std::string& plan_arg, const std::string& preset,
             const std::string& config_path, bool table3, int channels, int hw,
             int branch_channels, bool no_projections, bool no_selection, int selection_kernel,
             const std::string& pooling, bool as_json) {
  json cfg;
  cfg["command"] = "cost";
  json out;

  if (table3) {
    // reconciliation of the published efficiency table: the implementation
    // convention behind those counts projects branches to half width
    cfg["mode"] = "table3";
    cfg["channels"] = 64;
    cfg["branch_channels"] = 32;
    echo_config(cfg, as_json, out);
    CostOptions opt;
    opt.channels = 64;
    opt.branch_channels = 32;
    struct Row {
      const char* rf;
      std::vector<KernelSpec> specs;
    };
    const Row rows[] = {
        {"23", {{23, 1}}},
        {"23", {{5, 1}, {7, 3}}},
        {"29", {{29, 1}}},
        {"29", {{3, 1}, {5, 2}, {7, 3}}},
    };
    json arr = json::array();
    if (!as_json)
      std::printf("%-4s %-28s %12s %16s\n", "RF", "(k,d) sequence", "#P(no bias)", "FLOPs");
    for (const Row& row : rows) {
      const auto plan = DecompositionPlan::from_specs(row.specs);
      const CostReport r = cost_of_plan(plan, opt);
      if (as_json) {
        json item;
        item["rf"] = row.rf;
        item["plan"] = plan_flag_string(plan);
        item["params_without_bias"] = r.params_without_bias;
        item["flops"] = r.flops;
        arr.push_back(std::move(item));
      } else {
        std::printf("%-4s %-28s %12lld %16lld\n", row.rf, plan.str().c_str(),
                    static_cast<long long>(r.params_without_bias),
                    static_cast<long long>(r.flops));
      }
    }
    const char* note =
        "convention: depthwise + half-width 1x1 projections + selection convs, "
        "MAC=1 FLOPs at 1024x1024";
    if (as_json) {
      out["rows"] = std::move(arr);
      out["note"] = note;
      finish(as_json, out);
    } else {
      std::cout << "note: " << note << "\n";
    }
    return 0;
  }

  if (!preset.empty() || !config_path.empty()) {
    const BackboneConfig bc =
        !config_path.empty() ? load_backbone_config(config_path) : preset_backbone(preset);
    cfg["mode"] = "backbone";
    cfg["backbone"] = backbone_config_to_json(bc);
    cfg["input_hw"] = hw;
    echo_config(cfg, as_json, out);
    const CostReport r = backbone_cost(bc, hw, hw);
    if (as_json) {
      out["report"] = cost_report_to_json(r);
      finish(as_json, out);
    } else {
      print_cost_table(r);
    }
    return 0;
  }

  require(!plan_arg.empty(), "cost: provide --plan, --preset, --config, or --table3");
  const auto plan = DecompositionPlan::from_specs(parse_plan_arg(plan_arg));
  CostOptions opt;
  opt.channels = channels;
  opt.height = opt.width = hw;
  opt.branch_channels = branch_channels;
  opt.include_projections = !no_projections;
  opt.include_selection = !no_selection;
  opt.selection_kernel = selection_kernel;
  opt.pooling = pool_mode_from_name(pooling);
  cfg["mode"] = "plan";
  cfg["plan"] = plan_flag_string(plan);
  cfg["channels"] = channels;
  cfg["hw"] = hw;
  cfg["branch_channels"] = branch_channels;
  cfg["include_projections"] = opt.include_projections;
  cfg["include_selection"] = opt.include_selection;
  cfg["selection_kernel"] = selection_kernel;
  cfg["pooling"] = pooling;
  echo_config(cfg, as_json, out);
  const CostReport r = cost_of_plan(plan, opt);
  if (as_json) {
    out["rf"] = plan.total_rf();
    out["report"] = cost_report_to_json(r);
    finish(as_json, out);
  } else {
    std::cout << "plan " << plan.str() << "  RF " << plan.total_rf() << "\n";
    print_cost_table(r);
  }
  return 0;
}

// ---- forward ----

int run_forward(const std::string& preset, const std::string& config_path,
                const std::string& input, std::uint64_t seed, const std::string& weights_dir,
                const std::string& out_dir, bool save_trace, bool save_pyramid,
                bool save_weights, const std::string& image_id, bool as_json) {
  const BackboneConfig bc =
      !config_path.empty() ? load_backbone_config(config_path) : preset_backbone(preset);
  json cfg;
  cfg["command"] = "forward";
  cfg["backbone"] = backbone_config_to_json(bc);
  cfg["input"] = input;
  cfg["seed"] = seed;
  cfg["image_id"] = image_id;
  cfg["save_trace"] = save_trace;
  cfg["save_pyramid"] = save_pyramid;
  cfg["save_weights"] = save_weights;
  if (!weights_dir.empty()) cfg["weights"] = weights_dir;
  if (!out_dir.empty()) cfg["out"] = out_dir;
  json out;
  echo_config(cfg, as_json, out);

  const Tensor x = parse_tensor_literal(input);
  const BackboneWeights w = weights_dir.empty() ? build_backbone(bc, seed)
                                                : load_backbone_weights(weights_dir, bc);
  ActivationTrace trace;
  const FeaturePyramid pyr = backbone_forward(x, bc, w, &trace);

  json stages = json::array();
  for (int s = 0; s < 4; ++s) {
    const Tensor& t = pyr.stages[static_cast<std::size_t>(s)];
    json item;
    item["stage"] = s + 1;
    item["shape"] = t.shape.str();
    item["checksum"] = checksum(t);
    stages.push_back(item);
    if (!as_json)
      std::cout << "stage " << (s + 1) << "  " << t.shape.str() << "  checksum "
                << checksum(t) << "\n";
  }

  if (save_trace || save_pyramid || save_weights)
    require(!out_dir.empty(), "forward: --out is required when saving outputs");

  json written = json::array();
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  }
  if (save_pyramid) {
    for (int s = 0; s < 4; ++s) {
      const std::string path =
          (fs::path(out_dir) / (image_id + "_stage" + std::to_string(s + 1) + ".lskt")).string();
      write_lskt_file(path, pyr.stages[static_cast<std::size_t>(s)]);
      written.push_back(path);
    }
  }
  if (save_weights) {
    const std::string wdir = (fs::path(out_dir) / "weights").string();
    save_backbone_weights(wdir, bc, w);
    written.push_back(wdir);
  }
  if (save_trace) {
    const fs::path maps_dir = fs::path(out_dir) / "maps";
    std::error_code ec;
    fs::create_directories(maps_dir, ec);
    if (ec) throw IoError("cannot create " + maps_dir.string());
    json blocks = json::array();
    for (const BlockTraceEntry& e : trace) {
      json jb;
      jb["stage"] = e.stage;
      jb["block"] = e.block;
      jb["rf"] = e.trace.rf;
      json maps = json::array();
      for (std::size_t b = 0; b < e.trace.selection_maps.size(); ++b) {
        const std::string rel = "maps/" + image_id + "_s" + std::to_string(e.stage) + "b" +
                                std::to_string(e.block) + "_n" + std::to_string(b) + ".lskt";
        write_lskt_file((fs::path(out_dir) / rel).string(), e.trace.selection_maps[b]);
        maps.push_back(rel);
      }
      jb["maps"] = std::move(maps);
      blocks.push_back(std::move(jb));
    }
    json manifest;
    manifest["image_id"] = image_id;
    manifest["input"] = {{"h", x.shape.h}, {"w", x.shape.w}};
    manifest["blocks"] = std::move(blocks);
    const std::string mpath = (fs::path(out_dir) / ("trace_" + image_id + ".json")).string();
    std::ofstream mf(mpath);
    if (!mf) throw IoError("cannot write " + mpath);
    mf << manifest.dump(2) << "\n";
    written.push_back(mpath);
  }

  if (as_json) {
    out["stages"] = std::move(stages);
    out["written"] = std::move(written);
    finish(as_json, out);
  }
  return 0;
}

// ---- gradcheck ----

int run_gradcheck(const std::string& op, int k, int d, bool dense, const std::string& pool_mode,
                  const std::string& plan_arg, int channels, std::uint64_t seed, double tol,
                  bool as_json) {
  json cfg;
  cfg["command"] = "gradcheck";
  cfg["op"] = op;
  cfg["seed"] = seed;
  json out;

  GradCheckReport report;
  double used_tol = tol;

  if (op == "conv2d") {
    cfg["k"] = k;
    cfg["d"] = d;
    cfg["dense"] = dense;
    echo_config(cfg, as_json, out);
    Tensor x = seeded_normal({1, 3, 6, 6}, seed, 0.0, 1.0);
    ConvWeights w = dense ? make_conv_seeded(ConvKind::kDense, 3, 2, k, d, seed + 1)
                          : make_conv_seeded(ConvKind::kDepthwise, 3, 3, k, d, seed + 1);
    SplitMix64 rng(seed + 2);
    for (double& v : w.weight.data) v = rng.next_normal(0.0, 0.5);
    const Tensor up = seeded_normal({1, w.out_channels, 6, 6}, seed + 3, 0.0, 1.0);
    const ConvVjp vjp = conv2d_vjp(x, w, up);
    auto loss = [&]() {
      double acc = 0.0;
      const Tensor y = conv2d_forward(x, w);
      for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * up.data[i];
      return acc;
    };
    std::vector<ParamView> views = {
        {"x", x.data.data(), x.numel(), vjp.grad_input.data.data()},
        {"weight", w.weight.data.data(), w.weight.numel(), vjp.grad_weight.data.data()},
        {"bias", w.bias.data(), static_cast<i64>(w.bias.size()), vjp.grad_bias.data()},
    };
    report = check_gradients(loss, views);
  } else if (op == "pool") {
    cfg["mode"] = pool_mode;
    echo_config(cfg, as_json, out);
    const PoolMode mode = pool_mode_from_name(pool_mode);
    Tensor x = seeded_normal({1, 4, 5, 5}, seed, 0.0, 1.0);
    const Shape out_shape{1, mode == PoolMode::kBoth ? 2 : 1, 5, 5};
    const Tensor up = seeded_normal(out_shape, seed + 1, 0.0, 1.0);
    const Tensor gx = channel_pool_vjp(x, mode, up);
    auto loss = [&]() {
      double acc = 0.0;
      const Tensor y = channel_pool(x, mode);
      for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * up.data[i];
      return acc;
    };
    std::vector<ParamView> views = {{"x", x.data.data(), x.numel(), gx.data.data()}};
    report = check_gradients(loss, views);
  } else if (op == "sigmoid" || op == "gelu") {
    echo_config(cfg, as_json, out);
    Tensor x = seeded_normal({1, 3, 5, 5}, seed, 0.0, 1.0);
    const Tensor up = seeded_normal({1, 3, 5, 5}, seed + 1, 0.0, 1.0);
    const bool is_sigmoid = op == "sigmoid";
    const Tensor gx = is_sigmoid ? sigmoid_vjp(x, up) : gelu_vjp(x, up);
    auto loss = [&]() {
      double acc = 0.0;
      const Tensor y = is_sigmoid ? sigmoid(x) : gelu(x);
      for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * up.data[i];
      return acc;
    };
    std::vector<ParamView> views = {{"x", x.data.data(), x.numel(), gx.data.data()}};
    report = check_gradients(loss, views);
  } else if (op == "lsk" || op == "block") {
    cfg["plan"] = plan_arg;
    cfg["channels"] = channels;
    echo_config(cfg, as_json, out);
    LskConfig lc;
    lc.channels = channels;
    lc.plan = DecompositionPlan::from_specs(parse_plan_arg(plan_arg));
    Tensor x = seeded_normal({1, channels, 6, 6}, seed, 0.0, 0.5);
    const Tensor up = seeded_normal({1, channels, 6, 6}, seed + 1, 0.0, 1.0);
    if (op == "lsk") {
      LskWeights w = make_lsk_weights(lc, seed + 2);
      const LskVjpResult res = lsk_vjp(x, lc, w, up);
      auto loss = [&]() {
        double acc = 0.0;
        const Tensor y = lsk_forward(x, lc, w).y;
        for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * up.data[i];
        return acc;
      };
      std::vector<ParamView> views = {
          {"x", x.data.data(), x.numel(), res.grad_input.data.data()},
          {"fuse.weight", w.fuse.weight.data.data(), w.fuse.weight.numel(),
           res.grads.fuse.weight.data.data()},
          {"select.weight", w.select.weight.data.data(), w.select.weight.numel(),
           res.grads.select.weight.data.data()},
          {"dw0.weight", w.dw[0].weight.data.data(), w.dw[0].weight.numel(),
           res.grads.dw[0].weight.data.data()},
      };
      report = check_gradients(loss, views);
    } else {
      LskBlockConfig bc;
      bc.lsk = lc;
      bc.ffn_ratio = 2.0;
      LskBlockWeights w = make_lsk_block_weights(bc, seed + 2);
      const LskBlockVjpResult res = lsk_block_vjp(x, bc, w, up);
      auto loss = [&]() {
        double acc = 0.0;
        const Tensor y = lsk_block_forward(x, bc, w);
        for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * up.data[i];
        return acc;
      };
      std::vector<ParamView> views = {
          {"x", x.data.data(), x.numel(), res.grad_input.data.data()},
          {"pre.weight", w.pre.weight.data.data(), w.pre.weight.numel(),
           res.grads.pre.weight.data.data()},
          {"ffn.fc1.weight", w.ffn_fc1.weight.data.data(), w.ffn_fc1.weight.numel(),
           res.grads.ffn_fc1.weight.data.data()},
      };
      report = check_gradients(loss, views, 1e-5, 2);
    }
  } else if (op == "backbone") {
    echo_config(cfg, as_json, out);
    used_tol = tol > 0 ? tol : 1e-5;
    BackboneConfig bc;
    bc.name = "gradcheck";
    bc.channels = {4, 5, 6, 7};
    bc.depths = {1, 1, 1, 1};
    bc.plan = DecompositionPlan::from_specs({{3, 1}});
    bc.ffn_ratio = {1.0, 1.0, 1.0, 1.0};
    BackboneWeights w = build_backbone(bc, seed);
    Tensor x = seeded_normal({1, 3, 32, 32}, seed + 1, 0.0, 0.5);
    std::array<Tensor, 4> up = {
        seeded_normal({1, 4, 8, 8}, seed + 2, 0.0, 1.0),
        seeded_normal({1, 5, 4, 4}, seed + 3, 0.0, 1.0),
        seeded_normal({1, 6, 2, 2}, seed + 4, 0.0, 1.0),
        seeded_normal({1, 7, 1, 1}, seed + 5, 0.0, 1.0),
    };
    const BackboneVjpResult res = backbone_vjp(x, bc, w, up);
    auto loss = [&]() {
      const FeaturePyramid pyr = backbone_forward(x, bc, w);
      double acc = 0.0;
      for (int s = 0; s < 4; ++s) {
        const Tensor& t = pyr.stages[static_cast<std::size_t>(s)];
        const Tensor& u = up[static_cast<std::size_t>(s)];
        for (std::size_t i = 0; i < t.data.size(); ++i) acc += t.data[i] * u.data[i];
      }
      return acc;
    };
    std::vector<ParamView> views = {
        {"x", x.data.data(), x.numel(), res.grad_input.data.data()},
        {"stem0.weight", w.stem0.weight.data.data(), w.stem0.weight.numel(),
         res.grads.stem0.weight.data.data()},
    };
    report = check_gradients(loss, views, 1e-5, 7);
  } else {
    fail_contract("unknown gradcheck op '" + op +
                  "' (conv2d, pool, sigmoid, gelu, lsk, block, backbone)");
  }

  if (used_tol <= 0) used_tol = 1e-6;
  const bool pass = report.passed(used_tol);
  if (as_json) {
    out["max_rel_err"] = report.max_rel_err;
    out["coords_checked"] = report.coords_checked;
    out["tolerance"] = used_tol;
    out["pass"] = pass;
    finish(as_json, out);
  } else {
    std::printf("max rel. error %.3e over %lld coordinates (tolerance %.0e): %s\n",
                report.max_rel_err, static_cast<long long>(report.coords_checked), used_tol,
                pass ? "PASS" : "FAIL");
  }
  return pass ? 0 : 1;
}

// ---- analyze / export ----

ImageTrace load_trace_manifest(const fs::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot open trace manifest " + manifest_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed trace manifest " + manifest_path.string() + ": " + e.what());
  }
  ImageTrace t;
  t.image_id = j.at("image_id").get<std::string>();
  t.input_h = j.at("input").at("h").get<int>();
  t.input_w = j.at("input").at("w").get<int>();
  const fs::path base = manifest_path.parent_path();
  for (const json& jb : j.at("blocks")) {
    BlockTraceEntry e;
    e.stage = jb.at("stage").get<int>();
    e.block = jb.at("block").get<int>();
    e.trace.rf = jb.at("rf").get<std::vector<int>>();
    for (const json& m : jb.at("maps"))
      e.trace.selection_maps.push_back(read_lskt_file((base / m.get<std::string>()).string()));
    t.blocks.push_back(std::move(e));
  }
  return t;
}

std::vector<ImageTrace> load_trace_dir(const std::string& dir) {
  std::vector<fs::path> manifests;
  if (!fs::is_directory(dir)) throw IoError("trace directory does not exist: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("trace_", 0) == 0 && name.ends_with(".json"))
      manifests.push_back(entry.path());
  }
  std::sort(manifests.begin(), manifests.end());
  std::vector<ImageTrace> traces;
  for (const fs::path& m : manifests) traces.push_back(load_trace_manifest(m));
  if (traces.empty()) throw IoError("no trace_*.json manifests found in " + dir);
  return traces;
}

int run_analyze(const std::string& trace_dir, const std::string& annotations_dir,
                const std::string& out_dir, const std::string& rf_weighting, bool render,
                bool as_json) {
  json cfg;
  cfg["command"] = "analyze";
  cfg["trace"] = trace_dir;
  cfg["annotations"] = annotations_dir;
  cfg["rf_weighting"] = rf_weighting;
  cfg["render"] = render;
  if (!out_dir.empty()) cfg["out"] = out_dir;
  json out;
  echo_config(cfg, as_json, out);

  const std::vector<ImageTrace> traces = load_trace_dir(trace_dir);
  std::map<std::string, std::vector<BoxAnnotation>> annotations;
  for (const ImageTrace& t : traces) {
    const fs::path path = fs::path(annotations_dir) / (t.image_id + ".txt");
    if (fs::exists(path)) annotations[t.image_id] = load_dota_annotations(path.string());
  }
  require(!annotations.empty(), "analyze: no annotation files matched the traced images");

  const RfWeighting weighting =
      rf_weighting == "rf-area" ? RfWeighting::kArea : RfWeighting::kLinear;
  const auto rc = rf_box_ratio(traces, annotations, weighting);

  // the kernel-selection difference is defined for two-branch traces only
  bool two_branches = true;
  for (const ImageTrace& t : traces)
    for (const BlockTraceEntry& e : t.blocks)
      if (e.trace.selection_maps.size() != 2) two_branches = false;
  std::map<std::string, std::vector<DeltaEntry>> delta;
  if (two_branches) delta = kernel_selection_difference(traces, annotations);

  json jrc = json::object();
  for (const auto& [cat, e] : rc) {
    jrc[cat] = {{"value", e.value}, {"normalized", e.normalized}, {"images", e.images}};
    if (!as_json)
      std::printf("R_c %-20s %12.6g  (normalized %.4f, images %d)\n", cat.c_str(), e.value,
                  e.normalized, e.images);
  }
  out["rf_box_ratio"] = std::move(jrc);
  if (two_branches) {
    json jd = json::object();
    for (const auto& [cat, entries] : delta) {
      json arr = json::array();
      for (const DeltaEntry& e : entries) {
        arr.push_back({{"stage", e.stage},
                       {"block", e.block},
                       {"value", e.value},
                       {"normalized", e.normalized}});
        if (!as_json)
          std::printf("dA  %-20s B_%d_%d %10.6g  (normalized %.4f)\n", cat.c_str(), e.stage + 1,
                      e.block + 1, e.value, e.normalized);
      }
      jd[cat] = std::move(arr);
    }
    out["kernel_selection_difference"] = std::move(jd);
  } else {
    out["kernel_selection_difference_skipped"] = "traces do not have exactly two branches";
    if (!as_json)
      std::cout << "kernel selection difference skipped: traces are not two-branch\n";
  }

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir);
    {
      std::ofstream f(fs::path(out_dir) / "analysis.json");
      if (!f) throw IoError("cannot write analysis.json");
      json doc;
      doc["rf_box_ratio"] = out["rf_box_ratio"];
      if (two_branches) doc["kernel_selection_difference"] = out["kernel_selection_difference"];
      f << doc.dump(2) << "\n";
    }
    if (render) {
      std::vector<BarDatum> bars;
      std::vector<std::vector<std::string>> rows;
      for (const auto& [cat, e] : rc) {
        bars.push_back({cat, e.normalized});
        rows.push_back({cat, format_g(e.value), format_g(e.normalized)});
      }
      std::ofstream svg(fs::path(out_dir) / "rf_box_ratio.svg");
      svg << svg_bar_chart("normalized R_c by category", bars);
      std::ofstream csv(fs::path(out_dir) / "rf_box_ratio.csv");
      csv << csv_table({"category", "value", "normalized"}, rows);
    }
  }
  finish(as_json, out);
  return 0;
}

int run_export(const std::string& trace_dir, const std::string& image_id,
               const std::string& out_dir, bool as_json) {
  json cfg;
  cfg["command"] = "export";
  cfg["trace"] = trace_dir;
  cfg["image"] = image_id;
  cfg["out"] = out_dir;
  json out;
  echo_config(cfg, as_json, out);

  const ImageTrace trace =
      load_trace_manifest(fs::path(trace_dir) / ("trace_" + image_id + ".json"));
  const auto written = export_activation_maps(trace, out_dir);
  if (as_json) {
    out["written"] = written;
    finish(as_json, out);
  } else {
    for (const std::string& path : written) std::cout << path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LSK: decomposed large-kernel selection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // parent flags like --json may trail subcommand args

  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable JSON on stdout");

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "search legal kernel decompositions");
  int rf = 23, max_branches = 2, channels = 64, hw = 1024, branch_channels = 0, limit = 0;
  std::vector<int> ks;
  std::string objective = "params";
  plan_cmd->add_option("--rf", rf, "target receptive field");
  plan_cmd->add_option("--max-branches", max_branches, "maximum decomposition length");
  plan_cmd->add_option("--k", ks, "candidate kernel sizes (odd)")->delimiter(',');
  plan_cmd->add_option("--objective", objective, "params | flops")
      ->check(CLI::IsMember({"params", "flops"}));
  plan_cmd->add_option("--channels", channels, "channel count for costing");
  plan_cmd->add_option("--hw", hw, "declared input size for the FLOP column");
  plan_cmd->add_option("--branch-channels", branch_channels,
                       "projection width for costing (0 = channels)");
  plan_cmd->add_option("--limit", limit, "print at most this many results (0 = all)");

  // cost
  auto* cost_cmd = app.add_subcommand("cost", "parameter/FLOP report for a plan or backbone");
  std::string plan_arg, preset, config_path, pooling = "both";
  bool table3 = false, no_projections = false, no_selection = false;
  int selection_kernel = 7;
  cost_cmd->add_option("--plan", plan_arg, "kernel plan, e.g. 5x1,7x3");
  cost_cmd->add_option("--preset", preset, "backbone preset (lsknet-t, lsknet-s)");
  cost_cmd->add_option("--config", config_path, "backbone config file (TOML)");
  cost_cmd->add_flag("--table3", table3, "published efficiency-table reconciliation");
  cost_cmd->add_option("--channels", channels, "channel count");
  cost_cmd->add_option("--hw", hw, "declared input size");
  cost_cmd->add_option("--branch-channels", branch_channels, "projection width (0 = channels)");
  cost_cmd->add_flag("--no-projections", no_projections, "exclude per-branch 1x1 projections");
  cost_cmd->add_flag("--no-selection", no_selection, "exclude selection and fusion convs");
  cost_cmd->add_option("--selection-kernel", selection_kernel, "selection conv kernel size");
  cost_cmd->add_option("--pooling", pooling, "avg | max | both")
      ->check(CLI::IsMember({"avg", "max", "both"}));

  // forward
  auto* fwd_cmd = app.add_subcommand("forward", "run a backbone forward pass");
  std::string input = "zeros:1x3x64x64", out_dir, weights_dir, image_id = "img0";
  std::uint64_t seed = 0;
  bool save_trace = false, save_pyramid = false, save_weights = false;
  fwd_cmd->add_option("--preset", preset, "backbone preset (lsknet-t, lsknet-s)");
  fwd_cmd->add_option("--config", config_path, "backbone config file (TOML)");
  fwd_cmd->add_option("--input", input,
                      "tensor literal (zeros:NxCxHxW, ones:..., seed:s:normal:...) or LSKT path");
  fwd_cmd->add_option("--seed", seed, "weight initialization seed");
  fwd_cmd->add_option("--weights", weights_dir, "load a saved weight bundle instead of seeding");
  fwd_cmd->add_option("--out", out_dir, "output directory");
  fwd_cmd->add_flag("--save-trace", save_trace, "write selection-map trace + manifest");
  fwd_cmd->add_flag("--save-pyramid", save_pyramid, "write stage outputs as LSKT");
  fwd_cmd->add_flag("--save-weights", save_weights, "write the weight bundle");
  fwd_cmd->add_option("--image-id", image_id, "identifier used in trace/output names");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string op = "conv2d", pool_mode = "both", grad_plan = "3x1,5x2";
  int gk = 3, gd = 1, gchannels = 3;
  bool dense = false;
  double tol = 0.0;
  grad_cmd->add_option("--op", op, "conv2d | pool | sigmoid | gelu | lsk | block | backbone");
  grad_cmd->add_option("--k", gk, "kernel size (conv2d)");
  grad_cmd->add_option("--d", gd, "dilation (conv2d)");
  grad_cmd->add_flag("--dense", dense, "dense instead of depthwise (conv2d)");
  grad_cmd->add_option("--mode", pool_mode, "pooling mode (pool)");
  grad_cmd->add_option("--plan", grad_plan, "kernel plan (lsk, block)");
  grad_cmd->add_option("--channels", gchannels, "channels (lsk, block)");
  grad_cmd->add_option("--seed", seed, "instance seed");
  grad_cmd->add_option("--tol", tol, "tolerance (default 1e-6; backbone 1e-5)");

  // analyze
  auto* an_cmd = app.add_subcommand("analyze", "activation-trace metrics");
  std::string trace_dir, annotations_dir, rf_weighting = "rf";
  bool render = false;
  an_cmd->add_option("--trace", trace_dir, "trace directory (trace_*.json)")->required();
  an_cmd->add_option("--annotations", annotations_dir, "DOTA-style annotation directory")
      ->required();
  an_cmd->add_option("--out", out_dir, "output directory for analysis.json / renders");
  an_cmd->add_option("--rf-weighting", rf_weighting, "rf | rf-area")
      ->check(CLI::IsMember({"rf", "rf-area"}));
  an_cmd->add_flag("--render", render, "emit SVG/CSV renderings");

  // export
  auto* ex_cmd = app.add_subcommand("export", "export selection maps as LSKT + PGM");
  ex_cmd->add_option("--trace", trace_dir, "trace directory")->required();
  ex_cmd->add_option("--image", image_id, "image id to export")->required();
  ex_cmd->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (plan_cmd->parsed())
      return run_plan(rf, max_branches, ks, objective, channels, hw, branch_channels, limit,
                      as_json);
    if (cost_cmd->parsed())
      return run_cost(plan_arg, preset, config_path, table3, channels, hw, branch_channels,
                      no_projections, no_selection, selection_kernel, pooling, as_json);
    if (fwd_cmd->parsed()) {
      require(!preset.empty() || !config_path.empty(), "forward: provide --preset or --config");
      return run_forward(preset, config_path, input, seed, weights_dir, out_dir, save_trace,
                         save_pyramid, save_weights, image_id, as_json);
    }
    if (grad_cmd->parsed())
      return run_gradcheck(op, gk, gd, dense, pool_mode, grad_plan, gchannels, seed, tol,
                           as_json);
    if (an_cmd->parsed())
      return run_analyze(trace_dir, annotations_dir, out_dir, rf_weighting, render, as_json);
    if (ex_cmd->parsed()) return run_export(trace_dir, image_id, out_dir, as_json);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "flag error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
