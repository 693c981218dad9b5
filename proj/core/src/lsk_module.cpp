#include "lsk/lsk_module.hpp"

#include <cmath>

namespace lsk {

const char* selection_mode_name(SelectionMode m) {
  switch (m) {
    case SelectionMode::kSpatial: return "spatial";
    case SelectionMode::kChannel: return "channel";
    case SelectionMode::kSpatialChannel: return "spatial+channel";
    case SelectionMode::kNone: return "none";
  }
  return "?";
}

const char* pool_mode_name(PoolMode m) {
  switch (m) {
    case PoolMode::kAvg: return "avg";
    case PoolMode::kMax: return "max";
    case PoolMode::kBoth: return "both";
  }
  return "?";
}

SelectionMode selection_mode_from_name(const std::string& name) {
  if (name == "spatial") return SelectionMode::kSpatial;
  if (name == "channel") return SelectionMode::kChannel;
  if (name == "spatial+channel") return SelectionMode::kSpatialChannel;
  if (name == "none") return SelectionMode::kNone;
  fail_contract("unknown selection mode '" + name + "' (spatial, channel, spatial+channel, none)");
}

PoolMode pool_mode_from_name(const std::string& name) {
  if (name == "avg") return PoolMode::kAvg;
  if (name == "max") return PoolMode::kMax;
  if (name == "both") return PoolMode::kBoth;
  fail_contract("unknown pooling mode '" + name + "' (avg, max, both)");
}

void LskConfig::validate() const {
  require(channels >= 1, "LskConfig: channels must be >= 1");
  require(plan.branches() >= 1, "LskConfig: plan must have at least one branch");
  require(selection_kernel >= 1 && selection_kernel % 2 == 1,
          "LskConfig: selection_kernel must be odd, got " + std::to_string(selection_kernel));
  require(branch_channels >= 0, "LskConfig: branch_channels must be >= 0");
}

void LskWeights::validate_against(const LskConfig& cfg) const {
  cfg.validate();
  const int n = cfg.branches();
  require(static_cast<int>(dw.size()) == n, "LskWeights: expected " + std::to_string(n) +
                                                " depthwise convs, got " +
                                                std::to_string(dw.size()));
  require(static_cast<int>(proj.size()) == n, "LskWeights: expected " + std::to_string(n) +
                                                  " projections, got " +
                                                  std::to_string(proj.size()));
  for (int i = 0; i < n; ++i) {
    const KernelSpec s = cfg.plan.specs[static_cast<std::size_t>(i)];
    const ConvWeights& c = dw[static_cast<std::size_t>(i)];
    require(c.kind == ConvKind::kDepthwise && c.k == s.k && c.dilation == s.d &&
                c.in_channels == cfg.channels,
            "LskWeights: dw." + std::to_string(i) + " does not match plan spec (" +
                std::to_string(s.k) + "," + std::to_string(s.d) + ") at " +
                std::to_string(cfg.channels) + " channels");
    const ConvWeights& p = proj[static_cast<std::size_t>(i)];
    require(p.kind == ConvKind::kDense && p.k == 1 && p.in_channels == cfg.channels &&
                p.out_channels == cfg.branch_width(),
            "LskWeights: proj." + std::to_string(i) + " must be 1x1 " +
                std::to_string(cfg.channels) + "->" + std::to_string(cfg.branch_width()));
  }
  const bool spatial = cfg.selection_mode == SelectionMode::kSpatial ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  if (spatial) {
    require(select.kind == ConvKind::kDense && select.k == cfg.selection_kernel &&
                select.in_channels == cfg.pooled_channels() && select.out_channels == n,
            "LskWeights: select must be " + std::to_string(cfg.pooled_channels()) + "->" +
                std::to_string(n) + " with k=" + std::to_string(cfg.selection_kernel));
  }
  require(fuse.kind == ConvKind::kDense && fuse.k == 1 &&
              fuse.in_channels == cfg.branch_width() && fuse.out_channels == cfg.channels,
          "LskWeights: fuse must be 1x1 " + std::to_string(cfg.branch_width()) + "->" +
              std::to_string(cfg.channels));
  const bool channel = cfg.selection_mode == SelectionMode::kChannel ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  if (channel) {
    require(cs_reduce.in_channels == cfg.branch_width() &&
                cs_reduce.out_channels == cfg.cs_hidden() && cs_reduce.k == 1,
            "LskWeights: cs_reduce must be 1x1 " + std::to_string(cfg.branch_width()) + "->" +
                std::to_string(cfg.cs_hidden()));
    require(static_cast<int>(cs_logits.size()) == n,
            "LskWeights: expected " + std::to_string(n) + " cs_logits convs");
    for (const ConvWeights& c : cs_logits)
      require(c.k == 1 && c.in_channels == cfg.cs_hidden() &&
                  c.out_channels == cfg.branch_width(),
              "LskWeights: cs_logits must be 1x1 hidden->branch width");
  }
}

i64 LskWeights::param_count(bool with_bias) const {
  i64 total = 0;
  for (const auto& c : dw) total += c.param_count(with_bias);
  for (const auto& c : proj) total += c.param_count(with_bias);
  if (select.out_channels > 0) total += select.param_count(with_bias);
  if (fuse.out_channels > 0) total += fuse.param_count(with_bias);
  if (cs_reduce.out_channels > 0) total += cs_reduce.param_count(with_bias);
  for (const auto& c : cs_logits) total += c.param_count(with_bias);
  return total;
}

namespace {

ConvWeights seeded_conv_from(ConvKind kind, int in_ch, int out_ch, int k, int dilation,
                             SplitMix64& rng) {
  ConvWeights w = make_conv(kind, in_ch, out_ch, k, dilation, /*with_bias=*/true);
  for (double& v : w.weight.data) v = rng.next_trunc_normal(0.0, 0.02);
  return w;
}

}  // namespace

LskWeights make_lsk_weights_from(const LskConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  const int n = cfg.branches();
  const int C = cfg.channels;
  const int Cb = cfg.branch_width();
  LskWeights w;
  for (int i = 0; i < n; ++i) {
    const KernelSpec s = cfg.plan.specs[static_cast<std::size_t>(i)];
    w.dw.push_back(seeded_conv_from(ConvKind::kDepthwise, C, C, s.k, s.d, rng));
  }
  for (int i = 0; i < n; ++i)
    w.proj.push_back(seeded_conv_from(ConvKind::kDense, C, Cb, 1, 1, rng));
  const bool spatial = cfg.selection_mode == SelectionMode::kSpatial ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  if (spatial)
    w.select = seeded_conv_from(ConvKind::kDense, cfg.pooled_channels(), n,
                                cfg.selection_kernel, 1, rng);
  w.fuse = seeded_conv_from(ConvKind::kDense, Cb, C, 1, 1, rng);
  const bool channel = cfg.selection_mode == SelectionMode::kChannel ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  if (channel) {
    w.cs_reduce = seeded_conv_from(ConvKind::kDense, Cb, cfg.cs_hidden(), 1, 1, rng);
    for (int i = 0; i < n; ++i)
      w.cs_logits.push_back(seeded_conv_from(ConvKind::kDense, cfg.cs_hidden(), Cb, 1, 1, rng));
  }
  w.validate_against(cfg);
  return w;
}

LskWeights make_lsk_weights(const LskConfig& cfg, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return make_lsk_weights_from(cfg, rng);
}

LskWeights make_zero_lsk_weights(const LskConfig& cfg) {
  SplitMix64 rng(0);
  LskWeights w = make_lsk_weights_from(cfg, rng);
  auto clear = [](ConvWeights& c) {
    for (double& v : c.weight.data) v = 0.0;
    for (double& v : c.bias) v = 0.0;
  };
  for (auto& c : w.dw) clear(c);
  for (auto& c : w.proj) clear(c);
  if (w.select.out_channels > 0) clear(w.select);
  clear(w.fuse);
  if (w.cs_reduce.out_channels > 0) clear(w.cs_reduce);
  for (auto& c : w.cs_logits) clear(c);
  return w;
}

namespace {

// y[n,c,h,w] = x[n,c,h,w] * mask[n,0,h,w]
Tensor mul_spatial_mask(const Tensor& x, const Tensor& mask) {
  Tensor y(x.shape);
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c)
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx)
          y.at(n, c, yy, xx) = x.at(n, c, yy, xx) * mask.at(n, 0, yy, xx);
  return y;
}

// d(mask)[n,0,h,w] = sum_c up[n,c,h,w] * x[n,c,h,w]
Tensor mask_grad_from(const Tensor& up, const Tensor& x) {
  Tensor g({x.shape.n, 1, x.shape.h, x.shape.w});
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c)
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx)
          g.at(n, 0, yy, xx) += up.at(n, c, yy, xx) * x.at(n, c, yy, xx);
  return g;
}

// y[n,c,h,w] = x[n,c,h,w] * wgt[n,c,0,0]
Tensor mul_channel_weight(const Tensor& x, const Tensor& wgt) {
  Tensor y(x.shape);
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c)
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx)
          y.at(n, c, yy, xx) = x.at(n, c, yy, xx) * wgt.at(n, c, 0, 0);
  return y;
}

// d(wgt)[n,c,0,0] = sum_{h,w} up[n,c,h,w] * x[n,c,h,w]
Tensor channel_weight_grad_from(const Tensor& up, const Tensor& x) {
  Tensor g({x.shape.n, x.shape.c, 1, 1});
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c)
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx)
          g.at(n, c, 0, 0) += up.at(n, c, yy, xx) * x.at(n, c, yy, xx);
  return g;
}

// global average pool over (h, w): (n,c,h,w) -> (n,c,1,1)
Tensor global_avg_pool(const Tensor& x) {
  Tensor y({x.shape.n, x.shape.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(x.shape.h * x.shape.w);
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c) {
      double acc = 0.0;
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx) acc += x.at(n, c, yy, xx);
      y.at(n, c, 0, 0) = acc * inv;
    }
  return y;
}

Tensor global_avg_pool_vjp(const Shape& in_shape, const Tensor& up) {
  Tensor g(in_shape);
  const double inv = 1.0 / static_cast<double>(in_shape.h * in_shape.w);
  for (i64 n = 0; n < in_shape.n; ++n)
    for (i64 c = 0; c < in_shape.c; ++c) {
      const double v = up.at(n, c, 0, 0) * inv;
      for (i64 yy = 0; yy < in_shape.h; ++yy)
        for (i64 xx = 0; xx < in_shape.w; ++xx) g.at(n, c, yy, xx) = v;
    }
  return g;
}

// softmax across the branch axis of N tensors shaped (n,c,1,1)
std::vector<Tensor> branch_softmax(const std::vector<Tensor>& logits) {
  const Shape s = logits.front().shape;
  std::vector<Tensor> out(logits.size(), Tensor(s));
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c) {
      double mx = logits[0].at(n, c, 0, 0);
      for (const Tensor& t : logits) mx = std::max(mx, t.at(n, c, 0, 0));
      double denom = 0.0;
      for (const Tensor& t : logits) denom += std::exp(t.at(n, c, 0, 0) - mx);
      for (std::size_t i = 0; i < logits.size(); ++i)
        out[i].at(n, c, 0, 0) = std::exp(logits[i].at(n, c, 0, 0) - mx) / denom;
    }
  return out;
}

// VJP of branch_softmax: dl_i = s_i * (dg_i - sum_j dg_j * s_j)
std::vector<Tensor> branch_softmax_vjp(const std::vector<Tensor>& softmax,
                                       const std::vector<Tensor>& up) {
  const Shape s = softmax.front().shape;
  std::vector<Tensor> out(softmax.size(), Tensor(s));
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < softmax.size(); ++j)
        dot += up[j].at(n, c, 0, 0) * softmax[j].at(n, c, 0, 0);
      for (std::size_t i = 0; i < softmax.size(); ++i)
        out[i].at(n, c, 0, 0) =
            softmax[i].at(n, c, 0, 0) * (up[i].at(n, c, 0, 0) - dot);
    }
  return out;
}

struct LskTape {
  std::vector<Tensor> u;       // u[0] = x, u[i+1] = dw_i(u[i])
  std::vector<Tensor> ut;      // branch projections (n,Cb,h,w)
  std::vector<Tensor> masks;   // spatial sigmoid maps (n,1,h,w)
  Tensor cat, pooled, sa_hat;  // spatial selection path
  std::vector<Tensor> weighted;  // per-branch mask * ut (spatial modes)
  Tensor mix;                    // input to fuse
  // channel-selection path
  Tensor cs_sum, cs_gap, cs_red, cs_act;
  std::vector<Tensor> cs_logit, cs_weight;
  Tensor fused;  // S
  Tensor y;
};

LskTape lsk_forward_tape(const Tensor& x, const LskConfig& cfg, const LskWeights& w) {
  w.validate_against(cfg);
  require(x.shape.c == cfg.channels, "lsk_forward: input has " + std::to_string(x.shape.c) +
                                         " channels, config expects " +
                                         std::to_string(cfg.channels));
  const int n_branches = cfg.branches();
  LskTape t;

  // serial chain of decomposed depthwise convs, then per-branch 1x1 mixing
  t.u.reserve(static_cast<std::size_t>(n_branches) + 1);
  t.u.push_back(x);
  for (int i = 0; i < n_branches; ++i)
    t.u.push_back(conv2d_forward(t.u.back(), w.dw[static_cast<std::size_t>(i)]));
  for (int i = 0; i < n_branches; ++i)
    t.ut.push_back(conv2d_forward(t.u[static_cast<std::size_t>(i) + 1],
                                  w.proj[static_cast<std::size_t>(i)]));

  const bool spatial = cfg.selection_mode == SelectionMode::kSpatial ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  const bool channel = cfg.selection_mode == SelectionMode::kChannel ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;

  if (spatial) {
    t.cat = concat_channels(t.ut);
    t.pooled = channel_pool(t.cat, cfg.pooling);
    t.sa_hat = conv2d_forward(t.pooled, w.select);
    for (int i = 0; i < n_branches; ++i)
      t.masks.push_back(sigmoid(slice_channels(t.sa_hat, i, i + 1)));
    for (int i = 0; i < n_branches; ++i)
      t.weighted.push_back(
          mul_spatial_mask(t.ut[static_cast<std::size_t>(i)], t.masks[static_cast<std::size_t>(i)]));
  } else if (cfg.selection_mode == SelectionMode::kNone) {
    for (int i = 0; i < n_branches; ++i)
      t.masks.push_back(full({x.shape.n, 1, x.shape.h, x.shape.w}, 1.0));
    t.weighted = t.ut;
  } else {
    t.weighted = t.ut;  // pure channel selection weights the raw branches
  }

  if (channel) {
    t.cs_sum = t.weighted.front();
    for (std::size_t i = 1; i < t.weighted.size(); ++i)
      t.cs_sum = elementwise_add(t.cs_sum, t.weighted[i]);
    t.cs_gap = global_avg_pool(t.cs_sum);
    t.cs_red = conv2d_forward(t.cs_gap, w.cs_reduce);
    t.cs_act = gelu(t.cs_red);
    for (int i = 0; i < n_branches; ++i)
      t.cs_logit.push_back(conv2d_forward(t.cs_act, w.cs_logits[static_cast<std::size_t>(i)]));
    t.cs_weight = branch_softmax(t.cs_logit);
    t.mix = mul_channel_weight(t.weighted[0], t.cs_weight[0]);
    for (int i = 1; i < n_branches; ++i)
      t.mix = elementwise_add(
          t.mix, mul_channel_weight(t.weighted[static_cast<std::size_t>(i)],
                                    t.cs_weight[static_cast<std::size_t>(i)]));
  } else {
    t.mix = t.weighted.front();
    for (std::size_t i = 1; i < t.weighted.size(); ++i)
      t.mix = elementwise_add(t.mix, t.weighted[i]);
  }

  t.fused = conv2d_forward(t.mix, w.fuse);
  t.y = elementwise_mul(x, t.fused);
  return t;
}

LskTrace trace_from_tape(const LskTape& t, const LskConfig& cfg) {
  LskTrace tr;
  tr.rf = cfg.plan.rf;
  if (cfg.selection_mode == SelectionMode::kChannel) {
    tr.selection_maps = t.cs_weight;
  } else {
    tr.selection_maps = t.masks;
  }
  return tr;
}

}  // namespace

LskOut lsk_forward(const Tensor& x, const LskConfig& cfg, const LskWeights& w) {
  LskTape t = lsk_forward_tape(x, cfg, w);
  LskOut out;
  out.trace = trace_from_tape(t, cfg);
  out.y = std::move(t.y);
  return out;
}

LskOut channel_selection_forward(const Tensor& x, LskConfig cfg, const LskWeights& w) {
  cfg.selection_mode = SelectionMode::kChannel;
  return lsk_forward(x, cfg, w);
}

namespace {

ConvGrads to_grads(ConvVjp&& v) {
  return ConvGrads{std::move(v.grad_weight), std::move(v.grad_bias)};
}

ConvGrads zero_grads_like(const ConvWeights& w) {
  ConvGrads g;
  g.weight = zeros(w.weight.shape);
  g.bias.assign(w.bias.size(), 0.0);
  return g;
}

}  // namespace

LskVjpResult lsk_vjp(const Tensor& x, const LskConfig& cfg, const LskWeights& w,
                     const Tensor& upstream) {
  LskTape t = lsk_forward_tape(x, cfg, w);
  require(upstream.shape == t.y.shape, "lsk_vjp: upstream shape " + upstream.shape.str() +
                                           " does not match output " + t.y.shape.str());
  const int n_branches = cfg.branches();
  const bool spatial = cfg.selection_mode == SelectionMode::kSpatial ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;
  const bool channel = cfg.selection_mode == SelectionMode::kChannel ||
                       cfg.selection_mode == SelectionMode::kSpatialChannel;

  LskVjpResult res;
  res.grads.select = zero_grads_like(w.select);
  res.grads.cs_reduce = zero_grads_like(w.cs_reduce);

  // y = x . S
  Tensor d_fused = elementwise_mul(upstream, x);
  res.grad_input = elementwise_mul(upstream, t.fused);

  // S = fuse(mix)
  ConvVjp fuse_vjp = conv2d_vjp(t.mix, w.fuse, d_fused);
  res.grads.fuse = ConvGrads{std::move(fuse_vjp.grad_weight), std::move(fuse_vjp.grad_bias)};
  Tensor d_mix = std::move(fuse_vjp.grad_input);

  // gradient flowing into each weighted branch and (separately) each ut
  std::vector<Tensor> d_weighted;
  std::vector<Tensor> d_ut(static_cast<std::size_t>(n_branches));

  if (channel) {
    // mix = sum_i cs_weight_i . weighted_i
    std::vector<Tensor> d_cs_weight;
    d_weighted.reserve(static_cast<std::size_t>(n_branches));
    for (int i = 0; i < n_branches; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      d_weighted.push_back(mul_channel_weight(d_mix, t.cs_weight[idx]));
      d_cs_weight.push_back(channel_weight_grad_from(d_mix, t.weighted[idx]));
    }
    // softmax -> logits -> bottleneck -> gap -> cs_sum
    std::vector<Tensor> d_logits = branch_softmax_vjp(t.cs_weight, d_cs_weight);
    Tensor d_cs_act = zeros(t.cs_act.shape);
    for (int i = 0; i < n_branches; ++i) {
      ConvVjp v = conv2d_vjp(t.cs_act, w.cs_logits[static_cast<std::size_t>(i)],
                             d_logits[static_cast<std::size_t>(i)]);
      d_cs_act = elementwise_add(d_cs_act, v.grad_input);
      res.grads.cs_logits.push_back(to_grads(std::move(v)));
    }
    Tensor d_cs_red = gelu_vjp(t.cs_red, d_cs_act);
    ConvVjp red_vjp = conv2d_vjp(t.cs_gap, w.cs_reduce, d_cs_red);
    Tensor d_cs_sum = global_avg_pool_vjp(t.cs_sum.shape, red_vjp.grad_input);
    res.grads.cs_reduce = to_grads(std::move(red_vjp));
    for (int i = 0; i < n_branches; ++i)
      d_weighted[static_cast<std::size_t>(i)] =
          elementwise_add(d_weighted[static_cast<std::size_t>(i)], d_cs_sum);
  } else {
    // mix = sum_i weighted_i
    d_weighted.assign(static_cast<std::size_t>(n_branches), d_mix);
  }

  if (spatial) {
    // weighted_i = mask_i . ut_i; masks come from sigmoid(select(pool(cat)))
    std::vector<Tensor> d_mask;
    for (int i = 0; i < n_branches; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      d_ut[idx] = mul_spatial_mask(d_weighted[idx], t.masks[idx]);
      d_mask.push_back(mask_grad_from(d_weighted[idx], t.ut[idx]));
    }
    Tensor d_sa_hat = zeros(t.sa_hat.shape);
    for (int i = 0; i < n_branches; ++i) {
      const Tensor logit = slice_channels(t.sa_hat, i, i + 1);
      const Tensor d_logit = sigmoid_vjp(logit, d_mask[static_cast<std::size_t>(i)]);
      for (i64 n = 0; n < d_sa_hat.shape.n; ++n)
        for (i64 yy = 0; yy < d_sa_hat.shape.h; ++yy)
          for (i64 xx = 0; xx < d_sa_hat.shape.w; ++xx)
            d_sa_hat.at(n, i, yy, xx) = d_logit.at(n, 0, yy, xx);
    }
    ConvVjp sel_vjp = conv2d_vjp(t.pooled, w.select, d_sa_hat);
    res.grads.select = ConvGrads{std::move(sel_vjp.grad_weight), std::move(sel_vjp.grad_bias)};
    Tensor d_cat = channel_pool_vjp(t.cat, cfg.pooling, sel_vjp.grad_input);
    const i64 cb = cfg.branch_width();
    for (int i = 0; i < n_branches; ++i) {
      const Tensor d_band = slice_channels(d_cat, i * cb, (i + 1) * cb);
      d_ut[static_cast<std::size_t>(i)] =
          elementwise_add(d_ut[static_cast<std::size_t>(i)], d_band);
    }
  } else {
    for (int i = 0; i < n_branches; ++i)
      d_ut[static_cast<std::size_t>(i)] = d_weighted[static_cast<std::size_t>(i)];
  }

  // branch projections and the serial depthwise chain, walked backwards
  res.grads.dw.resize(static_cast<std::size_t>(n_branches));
  res.grads.proj.resize(static_cast<std::size_t>(n_branches));
  Tensor d_u;  // gradient w.r.t. u[i+1], accumulated from deeper stages
  for (int i = n_branches - 1; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    ConvVjp proj_vjp = conv2d_vjp(t.u[idx + 1], w.proj[idx], d_ut[idx]);
    res.grads.proj[idx] = ConvGrads{std::move(proj_vjp.grad_weight), std::move(proj_vjp.grad_bias)};
    Tensor d_ui = std::move(proj_vjp.grad_input);
    if (d_u.numel() > 0) d_ui = elementwise_add(d_ui, d_u);
    ConvVjp dw_vjp = conv2d_vjp(t.u[idx], w.dw[idx], d_ui);
    res.grads.dw[idx] = ConvGrads{std::move(dw_vjp.grad_weight), std::move(dw_vjp.grad_bias)};
    d_u = std::move(dw_vjp.grad_input);
  }
  res.grad_input = elementwise_add(res.grad_input, d_u);
  return res;
}

// ---- LSK block ----

int LskBlockConfig::ffn_hidden() const {
  return std::max(1, static_cast<int>(std::lround(ffn_ratio * lsk.channels)));
}

void LskBlockConfig::validate() const {
  lsk.validate();
  require(ffn_ratio > 0.0, "LskBlockConfig: ffn_ratio must be positive");
}

void LskBlockWeights::validate_against(const LskBlockConfig& cfg) const {
  cfg.validate();
  const int C = cfg.channels();
  const int hidden = cfg.ffn_hidden();
  require(pre.k == 1 && pre.in_channels == C && pre.out_channels == C,
          "LskBlockWeights: pre must be 1x1 C->C");
  require(post.k == 1 && post.in_channels == C && post.out_channels == C,
          "LskBlockWeights: post must be 1x1 C->C");
  lsk.validate_against(cfg.lsk);
  require(ffn_fc1.k == 1 && ffn_fc1.in_channels == C && ffn_fc1.out_channels == hidden,
          "LskBlockWeights: ffn_fc1 must be 1x1 C->hidden");
  require(ffn_dw.kind == ConvKind::kDepthwise && ffn_dw.k == 3 && ffn_dw.in_channels == hidden,
          "LskBlockWeights: ffn_dw must be depthwise 3x3 on hidden");
  require(ffn_fc2.k == 1 && ffn_fc2.in_channels == hidden && ffn_fc2.out_channels == C,
          "LskBlockWeights: ffn_fc2 must be 1x1 hidden->C");
}

i64 LskBlockWeights::param_count(bool with_bias) const {
  return pre.param_count(with_bias) + post.param_count(with_bias) + lsk.param_count(with_bias) +
         ffn_fc1.param_count(with_bias) + ffn_dw.param_count(with_bias) +
         ffn_fc2.param_count(with_bias);
}

LskBlockWeights make_lsk_block_weights_from(const LskBlockConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  const int C = cfg.channels();
  const int hidden = cfg.ffn_hidden();
  LskBlockWeights w;
  w.pre = seeded_conv_from(ConvKind::kDense, C, C, 1, 1, rng);
  w.lsk = make_lsk_weights_from(cfg.lsk, rng);
  w.post = seeded_conv_from(ConvKind::kDense, C, C, 1, 1, rng);
  w.ffn_fc1 = seeded_conv_from(ConvKind::kDense, C, hidden, 1, 1, rng);
  w.ffn_dw = seeded_conv_from(ConvKind::kDepthwise, hidden, hidden, 3, 1, rng);
  w.ffn_fc2 = seeded_conv_from(ConvKind::kDense, hidden, C, 1, 1, rng);
  return w;
}

LskBlockWeights make_lsk_block_weights(const LskBlockConfig& cfg, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return make_lsk_block_weights_from(cfg, rng);
}

namespace {

struct BlockTape {
  Tensor pre_out, pre_act;
  LskTape lsk;
  Tensor post_out, x1;
  Tensor fc1_out, dw_out, dw_act, fc2_out;
  Tensor y;
};

BlockTape block_forward_tape(const Tensor& x, const LskBlockConfig& cfg,
                             const LskBlockWeights& w) {
  w.validate_against(cfg);
  BlockTape t;
  t.pre_out = conv2d_forward(x, w.pre);
  t.pre_act = gelu(t.pre_out);
  t.lsk = lsk_forward_tape(t.pre_act, cfg.lsk, w.lsk);
  t.post_out = conv2d_forward(t.lsk.y, w.post);
  t.x1 = residual_add(x, t.post_out);
  t.fc1_out = conv2d_forward(t.x1, w.ffn_fc1);
  t.dw_out = conv2d_forward(t.fc1_out, w.ffn_dw);
  t.dw_act = gelu(t.dw_out);
  t.fc2_out = conv2d_forward(t.dw_act, w.ffn_fc2);
  t.y = residual_add(t.x1, t.fc2_out);
  return t;
}

}  // namespace

Tensor lsk_block_forward(const Tensor& x, const LskBlockConfig& cfg, const LskBlockWeights& w,
                         LskTrace* trace) {
  BlockTape t = block_forward_tape(x, cfg, w);
  if (trace != nullptr) *trace = trace_from_tape(t.lsk, cfg.lsk);
  return std::move(t.y);
}

LskBlockVjpResult lsk_block_vjp(const Tensor& x, const LskBlockConfig& cfg,
                                const LskBlockWeights& w, const Tensor& upstream) {
  BlockTape t = block_forward_tape(x, cfg, w);
  require(upstream.shape == t.y.shape, "lsk_block_vjp: upstream shape mismatch");

  LskBlockVjpResult res;

  // y = x1 + fc2(gelu(dw(fc1(x1))))
  ConvVjp fc2_vjp = conv2d_vjp(t.dw_act, w.ffn_fc2, upstream);
  res.grads.ffn_fc2 = ConvGrads{std::move(fc2_vjp.grad_weight), std::move(fc2_vjp.grad_bias)};
  Tensor d_dw_out = gelu_vjp(t.dw_out, fc2_vjp.grad_input);
  ConvVjp dw_vjp = conv2d_vjp(t.fc1_out, w.ffn_dw, d_dw_out);
  res.grads.ffn_dw = ConvGrads{std::move(dw_vjp.grad_weight), std::move(dw_vjp.grad_bias)};
  ConvVjp fc1_vjp = conv2d_vjp(t.x1, w.ffn_fc1, dw_vjp.grad_input);
  res.grads.ffn_fc1 = ConvGrads{std::move(fc1_vjp.grad_weight), std::move(fc1_vjp.grad_bias)};
  Tensor d_x1 = elementwise_add(upstream, fc1_vjp.grad_input);

  // x1 = x + post(lsk(gelu(pre(x))))
  ConvVjp post_vjp = conv2d_vjp(t.lsk.y, w.post, d_x1);
  res.grads.post = ConvGrads{std::move(post_vjp.grad_weight), std::move(post_vjp.grad_bias)};
  LskVjpResult lsk_res = lsk_vjp(t.pre_act, cfg.lsk, w.lsk, post_vjp.grad_input);
  res.grads.lsk = std::move(lsk_res.grads);
  Tensor d_pre_out = gelu_vjp(t.pre_out, lsk_res.grad_input);
  ConvVjp pre_vjp = conv2d_vjp(x, w.pre, d_pre_out);
  res.grads.pre = ConvGrads{std::move(pre_vjp.grad_weight), std::move(pre_vjp.grad_bias)};

  res.grad_input = elementwise_add(d_x1, pre_vjp.grad_input);
  return res;
}

}  // namespace lsk
