#include "lsk/backbone.hpp"

#include "lsk/parallel.hpp"

namespace lsk {

LskBlockConfig BackboneConfig::block_config(int stage) const {
  LskBlockConfig b;
  b.lsk.channels = channels[static_cast<std::size_t>(stage)];
  b.lsk.plan = plan;
  b.lsk.selection_kernel = selection_kernel;
  b.lsk.selection_mode = selection_mode;
  b.lsk.pooling = pooling;
  b.ffn_ratio = ffn_ratio[static_cast<std::size_t>(stage)];
  return b;
}

void BackboneConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    require(channels[static_cast<std::size_t>(i)] >= 1,
            "BackboneConfig: stage " + std::to_string(i + 1) + " channels must be >= 1");
    require(depths[static_cast<std::size_t>(i)] >= 1,
            "BackboneConfig: stage " + std::to_string(i + 1) + " depth must be >= 1");
    require(ffn_ratio[static_cast<std::size_t>(i)] > 0.0,
            "BackboneConfig: ffn_ratio must be positive");
  }
  require(plan.branches() >= 1, "BackboneConfig: plan must be non-empty");
}

BackboneConfig lsknet_t() {
  BackboneConfig c;
  c.name = "lsknet-t";
  c.channels = {32, 64, 160, 256};
  c.depths = {3, 3, 5, 2};
  c.plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  return c;
}

BackboneConfig lsknet_s() {
  BackboneConfig c;
  c.name = "lsknet-s";
  c.channels = {64, 128, 320, 512};
  c.depths = {2, 2, 4, 2};
  c.plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  return c;
}

BackboneConfig preset_backbone(const std::string& name) {
  if (name == "lsknet-t") return lsknet_t();
  if (name == "lsknet-s") return lsknet_s();
  fail_contract("unknown backbone preset '" + name + "' (known: lsknet-t, lsknet-s)");
}

ChannelAffine make_channel_affine(int channels) {
  require(channels >= 1, "channel affine needs at least one channel");
  ChannelAffine a;
  a.scale.assign(static_cast<std::size_t>(channels), 1.0);
  a.shift.assign(static_cast<std::size_t>(channels), 0.0);
  return a;
}

Tensor channel_affine_forward(const Tensor& x, const ChannelAffine& a) {
  require(x.shape.c == a.channels(), "channel_affine: input has " + std::to_string(x.shape.c) +
                                         " channels, affine has " + std::to_string(a.channels()));
  Tensor y(x.shape);
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c) {
      const double s = a.scale[static_cast<std::size_t>(c)];
      const double b = a.shift[static_cast<std::size_t>(c)];
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy, xx) * s + b;
    }
  return y;
}

ChannelAffineVjp channel_affine_vjp(const Tensor& x, const ChannelAffine& a,
                                    const Tensor& upstream) {
  require(upstream.shape == x.shape, "channel_affine_vjp: upstream shape mismatch");
  ChannelAffineVjp v;
  v.grad_scale.assign(a.scale.size(), 0.0);
  v.grad_shift.assign(a.shift.size(), 0.0);
  v.grad_input = Tensor(x.shape);
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c) {
      const double s = a.scale[static_cast<std::size_t>(c)];
      double gs = 0.0, gb = 0.0;
      for (i64 yy = 0; yy < x.shape.h; ++yy)
        for (i64 xx = 0; xx < x.shape.w; ++xx) {
          const double up = upstream.at(n, c, yy, xx);
          gs += up * x.at(n, c, yy, xx);
          gb += up;
          v.grad_input.at(n, c, yy, xx) = up * s;
        }
      v.grad_scale[static_cast<std::size_t>(c)] += gs;
      v.grad_shift[static_cast<std::size_t>(c)] += gb;
    }
  return v;
}

Tensor downsample_conv_forward(const Tensor& x, const ConvWeights& w) {
  w.validate();
  require(w.kind == ConvKind::kDense && w.dilation == 1,
          "downsample conv must be dense with dilation 1");
  require(x.shape.c == w.in_channels, "downsample conv: channel mismatch");
  require(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
          "downsample conv: input spatial dims must be even, got " + x.shape.str());
  const i64 N = x.shape.n, H = x.shape.h, W = x.shape.w;
  const i64 O = w.out_channels, C = x.shape.c;
  const int k = w.k;
  const i64 pad = (k - 1) / 2;
  const i64 OH = H / 2, OW = W / 2;
  Tensor y({N, O, OH, OW});
  parallel_for(0, N * O, [&](i64 lo, i64 hi) {
    for (i64 s = lo; s < hi; ++s) {
      const i64 n = s / O, o = s % O;
      for (i64 oy = 0; oy < OH; ++oy) {
        for (i64 ox = 0; ox < OW; ++ox) {
          double acc = w.has_bias() ? w.bias[static_cast<std::size_t>(o)] : 0.0;
          for (i64 ci = 0; ci < C; ++ci)
            for (int i = 0; i < k; ++i) {
              const i64 iy = 2 * oy + i - pad;
              if (iy < 0 || iy >= H) continue;
              for (int j = 0; j < k; ++j) {
                const i64 ix = 2 * ox + j - pad;
                if (ix < 0 || ix >= W) continue;
                acc += w.weight.at(o, ci, i, j) * x.at(n, ci, iy, ix);
              }
            }
          y.at(n, o, oy, ox) = acc;
        }
      }
    }
  });
  return y;
}

ConvVjp downsample_conv_vjp(const Tensor& x, const ConvWeights& w, const Tensor& upstream) {
  w.validate();
  const i64 N = x.shape.n, H = x.shape.h, W = x.shape.w, C = x.shape.c;
  const i64 O = w.out_channels;
  const int k = w.k;
  const i64 pad = (k - 1) / 2;
  const i64 OH = H / 2, OW = W / 2;
  const Shape expect{N, O, OH, OW};
  require(upstream.shape == expect, "downsample_conv_vjp: upstream shape " +
                                        upstream.shape.str() + " does not match " + expect.str());
  ConvVjp vjp;
  vjp.grad_weight = zeros(w.weight.shape);
  if (w.has_bias()) vjp.grad_bias.assign(static_cast<std::size_t>(O), 0.0);
  vjp.grad_input = zeros(x.shape);
  for (i64 n = 0; n < N; ++n)
    for (i64 o = 0; o < O; ++o)
      for (i64 oy = 0; oy < OH; ++oy)
        for (i64 ox = 0; ox < OW; ++ox) {
          const double up = upstream.at(n, o, oy, ox);
          if (w.has_bias()) vjp.grad_bias[static_cast<std::size_t>(o)] += up;
          if (up == 0.0) continue;
          for (i64 ci = 0; ci < C; ++ci)
            for (int i = 0; i < k; ++i) {
              const i64 iy = 2 * oy + i - pad;
              if (iy < 0 || iy >= H) continue;
              for (int j = 0; j < k; ++j) {
                const i64 ix = 2 * ox + j - pad;
                if (ix < 0 || ix >= W) continue;
                vjp.grad_weight.at(o, ci, i, j) += up * x.at(n, ci, iy, ix);
                vjp.grad_input.at(n, ci, iy, ix) += up * w.weight.at(o, ci, i, j);
              }
            }
        }
  return vjp;
}

i64 BackboneWeights::param_count(bool with_bias) const {
  i64 total = stem0.param_count(with_bias) + stem1.param_count(with_bias) +
              stem_norm0.param_count() + stem_norm1.param_count();
  for (const auto& st : stages) {
    if (st.down) total += st.down->param_count(with_bias);
    if (st.down_norm) total += st.down_norm->param_count();
    for (const auto& b : st.blocks) total += b.param_count(with_bias);
    total += st.out_norm.param_count();
  }
  return total;
}

namespace {

ConvWeights seeded_dense_from(int in_ch, int out_ch, int k, SplitMix64& rng) {
  ConvWeights w = make_conv(ConvKind::kDense, in_ch, out_ch, k, 1, /*with_bias=*/true);
  for (double& v : w.weight.data) v = rng.next_trunc_normal(0.0, 0.02);
  return w;
}

}  // namespace

BackboneWeights build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  BackboneWeights w;
  const int mid = cfg.stem_mid_channels();
  w.stem0 = seeded_dense_from(3, mid, 3, rng);
  w.stem_norm0 = make_channel_affine(mid);
  w.stem1 = seeded_dense_from(mid, cfg.channels[0], 3, rng);
  w.stem_norm1 = make_channel_affine(cfg.channels[0]);
  for (int s = 0; s < 4; ++s) {
    BackboneStageWeights& st = w.stages[static_cast<std::size_t>(s)];
    const int C = cfg.channels[static_cast<std::size_t>(s)];
    if (s > 0) {
      st.down = seeded_dense_from(cfg.channels[static_cast<std::size_t>(s) - 1], C, 3, rng);
      st.down_norm = make_channel_affine(C);
    }
    const LskBlockConfig bc = cfg.block_config(s);
    for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b)
      st.blocks.push_back(make_lsk_block_weights_from(bc, rng));
    st.out_norm = make_channel_affine(C);
  }
  return w;
}

FeaturePyramid backbone_forward(const Tensor& x, const BackboneConfig& cfg,
                                const BackboneWeights& w, ActivationTrace* trace) {
  cfg.validate();
  require(x.shape.c == 3, "backbone_forward: input must have 3 channels, got " + x.shape.str());
  require(x.shape.h % 32 == 0 && x.shape.w % 32 == 0,
          "backbone_forward: input spatial dims must be divisible by 32, got " + x.shape.str());
  require(x.shape.h >= 32 && x.shape.w >= 32,
          "backbone_forward: input must be at least 32x32");

  Tensor cur = downsample_conv_forward(x, w.stem0);
  cur = channel_affine_forward(cur, w.stem_norm0);
  cur = gelu(cur);
  cur = downsample_conv_forward(cur, w.stem1);
  cur = channel_affine_forward(cur, w.stem_norm1);

  FeaturePyramid pyr;
  for (int s = 0; s < 4; ++s) {
    const BackboneStageWeights& st = w.stages[static_cast<std::size_t>(s)];
    if (st.down) {
      cur = downsample_conv_forward(cur, *st.down);
      cur = channel_affine_forward(cur, *st.down_norm);
    }
    const LskBlockConfig bc = cfg.block_config(s);
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      LskTrace block_trace;
      cur = lsk_block_forward(cur, bc, st.blocks[b], trace != nullptr ? &block_trace : nullptr);
      if (trace != nullptr)
        trace->push_back({s, static_cast<int>(b), std::move(block_trace)});
    }
    pyr.stages[static_cast<std::size_t>(s)] = channel_affine_forward(cur, st.out_norm);
  }
  return pyr;
}

BackboneVjpResult backbone_vjp(const Tensor& x, const BackboneConfig& cfg,
                               const BackboneWeights& w,
                               const std::array<Tensor, 4>& upstream) {
  cfg.validate();
  // Forward again, keeping every intermediate needed for the reverse sweep.
  Tensor stem0_out = downsample_conv_forward(x, w.stem0);
  Tensor stem_n0 = channel_affine_forward(stem0_out, w.stem_norm0);
  Tensor stem_act = gelu(stem_n0);
  Tensor stem1_out = downsample_conv_forward(stem_act, w.stem1);
  Tensor stem_n1 = channel_affine_forward(stem1_out, w.stem_norm1);

  struct StageTape {
    Tensor down_in, down_out;       // transition conv input/output
    std::vector<Tensor> block_in;   // input of each block
    Tensor stage_out;               // before out_norm
  };
  std::array<StageTape, 4> tape;
  Tensor cur = stem_n1;
  for (int s = 0; s < 4; ++s) {
    StageTape& st = tape[static_cast<std::size_t>(s)];
    const BackboneStageWeights& sw = w.stages[static_cast<std::size_t>(s)];
    if (sw.down) {
      st.down_in = cur;
      st.down_out = downsample_conv_forward(cur, *sw.down);
      cur = channel_affine_forward(st.down_out, *sw.down_norm);
    }
    const LskBlockConfig bc = cfg.block_config(s);
    for (const auto& bw : sw.blocks) {
      st.block_in.push_back(cur);
      cur = lsk_block_forward(cur, bc, bw);
    }
    st.stage_out = cur;
  }

  BackboneVjpResult res;
  Tensor d_cur;  // gradient flowing down the main path, stage s -> s-1
  for (int s = 3; s >= 0; --s) {
    const StageTape& st = tape[static_cast<std::size_t>(s)];
    const BackboneStageWeights& sw = w.stages[static_cast<std::size_t>(s)];
    BackboneStageGrads& sg = res.grads.stages[static_cast<std::size_t>(s)];
    ChannelAffineVjp out_vjp =
        channel_affine_vjp(st.stage_out, sw.out_norm, upstream[static_cast<std::size_t>(s)]);
    sg.out_norm_scale = std::move(out_vjp.grad_scale);
    sg.out_norm_shift = std::move(out_vjp.grad_shift);
    Tensor d = d_cur.numel() > 0 ? elementwise_add(out_vjp.grad_input, d_cur)
                                 : std::move(out_vjp.grad_input);

    const LskBlockConfig bc = cfg.block_config(s);
    sg.blocks.resize(sw.blocks.size());
    for (int b = static_cast<int>(sw.blocks.size()) - 1; b >= 0; --b) {
      LskBlockVjpResult bres = lsk_block_vjp(st.block_in[static_cast<std::size_t>(b)], bc,
                                             sw.blocks[static_cast<std::size_t>(b)], d);
      sg.blocks[static_cast<std::size_t>(b)] = std::move(bres.grads);
      d = std::move(bres.grad_input);
    }
    if (sw.down) {
      ChannelAffineVjp n_vjp = channel_affine_vjp(st.down_out, *sw.down_norm, d);
      ConvVjp c_vjp = downsample_conv_vjp(st.down_in, *sw.down, n_vjp.grad_input);
      ConvAffineGrads dg;
      dg.conv = ConvGrads{std::move(c_vjp.grad_weight), std::move(c_vjp.grad_bias)};
      dg.norm_scale = std::move(n_vjp.grad_scale);
      dg.norm_shift = std::move(n_vjp.grad_shift);
      sg.down = std::move(dg);
      d_cur = std::move(c_vjp.grad_input);
    } else {
      d_cur = std::move(d);
    }
  }

  // back through the stem
  ChannelAffineVjp n1_vjp = channel_affine_vjp(stem1_out, w.stem_norm1, d_cur);
  res.grads.stem_norm1_scale = std::move(n1_vjp.grad_scale);
  res.grads.stem_norm1_shift = std::move(n1_vjp.grad_shift);
  ConvVjp s1_vjp = downsample_conv_vjp(stem_act, w.stem1, n1_vjp.grad_input);
  res.grads.stem1 = ConvGrads{std::move(s1_vjp.grad_weight), std::move(s1_vjp.grad_bias)};
  Tensor d_stem_n0 = gelu_vjp(stem_n0, s1_vjp.grad_input);
  ChannelAffineVjp n0_vjp = channel_affine_vjp(stem0_out, w.stem_norm0, d_stem_n0);
  res.grads.stem_norm0_scale = std::move(n0_vjp.grad_scale);
  res.grads.stem_norm0_shift = std::move(n0_vjp.grad_shift);
  ConvVjp s0_vjp = downsample_conv_vjp(x, w.stem0, n0_vjp.grad_input);
  res.grads.stem0 = ConvGrads{std::move(s0_vjp.grad_weight), std::move(s0_vjp.grad_bias)};
  res.grad_input = std::move(s0_vjp.grad_input);
  return res;
}

CostReport backbone_cost(const BackboneConfig& cfg, int input_h, int input_w) {
  cfg.validate();
  require(input_h % 32 == 0 && input_w % 32 == 0,
          "backbone_cost: declared input dims must be divisible by 32");
  CostReport r;
  const int mid = cfg.stem_mid_channels();
  auto hw = [&](int stride) {
    return static_cast<i64>(input_h / stride) * static_cast<i64>(input_w / stride);
  };
  auto conv_line = [&](const std::string& name, i64 in_c, i64 out_c, i64 k, int stride,
                       const std::string& note) {
    const i64 wp = in_c * out_c * k * k;
    r.add({name, wp, out_c, wp * hw(stride), note});
  };
  auto dw_line = [&](const std::string& name, i64 c, i64 k, int stride) {
    const i64 wp = c * k * k;
    r.add({name, wp, c, wp * hw(stride), "depthwise"});
  };
  auto norm_line = [&](const std::string& name, i64 c) {
    r.add({name, 2 * c, 0, 0, "affine norm; flops not modeled"});
  };

  conv_line("stem.conv0", 3, mid, 3, 2, "stride 2");
  norm_line("stem.norm0", mid);
  conv_line("stem.conv1", mid, cfg.channels[0], 3, 4, "stride 2");
  norm_line("stem.norm1", cfg.channels[0]);

  const int strides[4] = {4, 8, 16, 32};
  for (int s = 0; s < 4; ++s) {
    const std::string sp = "stage" + std::to_string(s + 1) + ".";
    const i64 C = cfg.channels[static_cast<std::size_t>(s)];
    const int stride = strides[s];
    if (s > 0) {
      conv_line(sp + "down", cfg.channels[static_cast<std::size_t>(s) - 1], C, 3, stride,
                "stride 2");
      norm_line(sp + "down_norm", C);
    }
    const LskBlockConfig bc = cfg.block_config(s);
    const i64 hidden = bc.ffn_hidden();
    const i64 n_branches = bc.lsk.branches();
    const i64 cb = bc.lsk.branch_width();
    for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string bp = sp + "block" + std::to_string(b) + ".";
      conv_line(bp + "pre", C, C, 1, stride, "1x1");
      for (i64 i = 0; i < n_branches; ++i) {
        const KernelSpec spec = bc.lsk.plan.specs[static_cast<std::size_t>(i)];
        dw_line(bp + "lsk.dw." + std::to_string(i) + " (k=" + std::to_string(spec.k) +
                    ",d=" + std::to_string(spec.d) + ")",
                C, spec.k, stride);
      }
      for (i64 i = 0; i < n_branches; ++i)
        conv_line(bp + "lsk.proj." + std::to_string(i), C, cb, 1, stride, "1x1");
      const bool spatial_sel = bc.lsk.selection_mode == SelectionMode::kSpatial ||
                               bc.lsk.selection_mode == SelectionMode::kSpatialChannel;
      if (spatial_sel)
        conv_line(bp + "lsk.select", bc.lsk.pooled_channels(), n_branches,
                  bc.lsk.selection_kernel, stride, "pooled->branches");
      const bool channel_sel = bc.lsk.selection_mode == SelectionMode::kChannel ||
                               bc.lsk.selection_mode == SelectionMode::kSpatialChannel;
      if (channel_sel) {
        // descriptor path runs on (n, c, 1, 1), so flops = params
        const i64 red = cb * bc.lsk.cs_hidden();
        r.add({bp + "lsk.cs_reduce", red, bc.lsk.cs_hidden(), red, "1x1 on descriptor"});
        for (i64 i = 0; i < n_branches; ++i) {
          const i64 lg = bc.lsk.cs_hidden() * cb;
          r.add({bp + "lsk.cs_logits." + std::to_string(i), lg, cb, lg, "1x1 on descriptor"});
        }
      }
      conv_line(bp + "lsk.fuse", cb, C, 1, stride, "1x1");
      conv_line(bp + "post", C, C, 1, stride, "1x1");
      conv_line(bp + "ffn.fc1", C, hidden, 1, stride, "1x1");
      dw_line(bp + "ffn.dw", hidden, 3, stride);
      conv_line(bp + "ffn.fc2", hidden, C, 1, stride, "1x1");
    }
    norm_line(sp + "out_norm", C);
  }
  return r;
}

}  // namespace lsk
