#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "lsk/planner.hpp"
#include "lsk/rng.hpp"

namespace lsk {

enum class SelectionMode { kSpatial, kChannel, kSpatialChannel, kNone };

const char* selection_mode_name(SelectionMode m);
const char* pool_mode_name(PoolMode m);
SelectionMode selection_mode_from_name(const std::string& name);
PoolMode pool_mode_from_name(const std::string& name);

// Full parameterization of one LSK module.
struct LskConfig {
  int channels = 0;
  DecompositionPlan plan;
  int selection_kernel = 7;  // spatial size of the pooled->N attention conv
  SelectionMode selection_mode = SelectionMode::kSpatial;
  PoolMode pooling = PoolMode::kBoth;
  // Width of the per-branch projections (and the fusion input). 0 means
  // `channels`. The reference LSKNet code uses channels/2; the default
  // here keeps every branch at full width.
  int branch_channels = 0;

  int branches() const { return plan.branches(); }
  int branch_width() const { return branch_channels > 0 ? branch_channels : channels; }
  int pooled_channels() const { return pooling == PoolMode::kBoth ? 2 : 1; }
  // bottleneck width of the channel-selection descriptor path
  int cs_hidden() const { return std::max(4, branch_width() / 4); }
  void validate() const;
};

struct LskWeights {
  std::vector<ConvWeights> dw;    // N depthwise convs, spec i uses (k_i, d_i)
  std::vector<ConvWeights> proj;  // N pointwise convs C -> Cb
  ConvWeights select;             // dense pooled_channels -> N, k = selection_kernel
  ConvWeights fuse;               // pointwise Cb -> C
  // channel-selection path (allocated only for kChannel / kSpatialChannel)
  ConvWeights cs_reduce;               // 1x1 Cb -> hidden
  std::vector<ConvWeights> cs_logits;  // N pointwise hidden -> Cb

  void validate_against(const LskConfig& cfg) const;
  i64 param_count(bool with_bias) const;
};

LskWeights make_lsk_weights(const LskConfig& cfg, std::uint64_t seed);
LskWeights make_zero_lsk_weights(const LskConfig& cfg);
// Draws from an existing stream; used by the backbone builder so one seed
// covers the whole network deterministically.
LskWeights make_lsk_weights_from(const LskConfig& cfg, SplitMix64& rng);

// Per-branch selection masks recorded during a forward pass, for the
// analysis metrics. Spatial modes store the sigmoid maps (n,1,h,w); channel
// mode stores the per-channel softmax weights (n,Cb,1,1); mode none stores
// all-ones maps.
struct LskTrace {
  std::vector<Tensor> selection_maps;
  std::vector<int> rf;  // theoretical receptive field per branch
};

struct LskOut {
  Tensor y;
  LskTrace trace;
};

LskOut lsk_forward(const Tensor& x, const LskConfig& cfg, const LskWeights& w);

// Convenience wrapper for the ablation axis: forward with channel selection.
LskOut channel_selection_forward(const Tensor& x, LskConfig cfg, const LskWeights& w);

struct ConvGrads {
  Tensor weight;
  std::vector<double> bias;
};

struct LskWeightGrads {
  std::vector<ConvGrads> dw, proj;
  ConvGrads select, fuse, cs_reduce;
  std::vector<ConvGrads> cs_logits;
};

struct LskVjpResult {
  Tensor grad_input;
  LskWeightGrads grads;
};

// Exact reverse-mode gradients of lsk_forward for all selection modes.
LskVjpResult lsk_vjp(const Tensor& x, const LskConfig& cfg, const LskWeights& w,
                     const Tensor& upstream);

// ---- LSK block: LK Selection sub-block + FFN sub-block, both residual ----

struct LskBlockConfig {
  LskConfig lsk;
  double ffn_ratio = 4.0;

  int channels() const { return lsk.channels; }
  int ffn_hidden() const;
  void validate() const;
};

struct LskBlockWeights {
  ConvWeights pre;   // 1x1 C->C before the LSK core
  ConvWeights post;  // 1x1 C->C after it
  LskWeights lsk;
  ConvWeights ffn_fc1;  // 1x1 C->hidden
  ConvWeights ffn_dw;   // depthwise 3x3 on hidden
  ConvWeights ffn_fc2;  // 1x1 hidden->C

  void validate_against(const LskBlockConfig& cfg) const;
  i64 param_count(bool with_bias) const;
};

LskBlockWeights make_lsk_block_weights(const LskBlockConfig& cfg, std::uint64_t seed);
LskBlockWeights make_lsk_block_weights_from(const LskBlockConfig& cfg, SplitMix64& rng);

// x1 = x + post(lsk(gelu(pre(x)))); y = x1 + fc2(gelu(dw3(fc1(x1)))).
Tensor lsk_block_forward(const Tensor& x, const LskBlockConfig& cfg, const LskBlockWeights& w,
                         LskTrace* trace = nullptr);

struct LskBlockGrads {
  ConvGrads pre, post;
  LskWeightGrads lsk;
  ConvGrads ffn_fc1, ffn_dw, ffn_fc2;
};

struct LskBlockVjpResult {
  Tensor grad_input;
  LskBlockGrads grads;
};

LskBlockVjpResult lsk_block_vjp(const Tensor& x, const LskBlockConfig& cfg,
                                const LskBlockWeights& w, const Tensor& upstream);

}  // namespace lsk
