#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lsk/lsk_module.hpp"

namespace lsk {

// Four-stage hierarchical backbone built from LSK blocks. The stem is two
// stride-2 3x3 convs (3 -> C1/2 -> C1, overall stride 4); each later stage
// starts with a stride-2 3x3 conv. Normalization is a per-channel affine
// initialized to identity, so desk-scale forwards are deterministic and
// gradient-checkable without training-time statistics.
struct BackboneConfig {
  std::string name = "custom";
  std::array<int, 4> channels{};
  std::array<int, 4> depths{};
  DecompositionPlan plan;  // shared by every block
  std::array<double, 4> ffn_ratio{4.0, 4.0, 4.0, 4.0};
  int selection_kernel = 7;
  SelectionMode selection_mode = SelectionMode::kSpatial;
  PoolMode pooling = PoolMode::kBoth;

  int stem_mid_channels() const { return std::max(1, channels[0] / 2); }
  LskBlockConfig block_config(int stage) const;
  void validate() const;
};

// Table-2 presets.
BackboneConfig lsknet_t();
BackboneConfig lsknet_s();
// Throws ContractViolation for unknown names ("lsknet-t", "lsknet-s").
BackboneConfig preset_backbone(const std::string& name);

// Per-channel affine y = x*scale[c] + shift[c]; identity at initialization.
struct ChannelAffine {
  std::vector<double> scale, shift;

  int channels() const { return static_cast<int>(scale.size()); }
  i64 param_count() const { return static_cast<i64>(scale.size() + shift.size()); }
};

ChannelAffine make_channel_affine(int channels);
Tensor channel_affine_forward(const Tensor& x, const ChannelAffine& a);

struct ChannelAffineVjp {
  std::vector<double> grad_scale, grad_shift;
  Tensor grad_input;
};
ChannelAffineVjp channel_affine_vjp(const Tensor& x, const ChannelAffine& a,
                                    const Tensor& upstream);

// Dense stride-2 conv with odd k and pad (k-1)/2; for even inputs the output
// is exactly half the size. Used only for the stem and stage transitions.
Tensor downsample_conv_forward(const Tensor& x, const ConvWeights& w);
ConvVjp downsample_conv_vjp(const Tensor& x, const ConvWeights& w, const Tensor& upstream);

struct BackboneStageWeights {
  std::optional<ConvWeights> down;  // stride-2 transition; absent for stage 0
  std::optional<ChannelAffine> down_norm;
  std::vector<LskBlockWeights> blocks;
  ChannelAffine out_norm;
};

struct BackboneWeights {
  ConvWeights stem0, stem1;  // stride-2 convs
  ChannelAffine stem_norm0, stem_norm1;
  std::array<BackboneStageWeights, 4> stages;

  i64 param_count(bool with_bias) const;
};

// Deterministic build: truncated-normal(0.02) conv weights, zero biases,
// identity norms. Same seed => bitwise-identical weights.
BackboneWeights build_backbone(const BackboneConfig& cfg, std::uint64_t seed);

struct FeaturePyramid {
  std::array<Tensor, 4> stages;  // strides {4, 8, 16, 32} relative to the input
};

struct BlockTraceEntry {
  int stage = 0;
  int block = 0;
  LskTrace trace;
};
using ActivationTrace = std::vector<BlockTraceEntry>;

// Input must be (n, 3, h, w) with h and w divisible by 32.
FeaturePyramid backbone_forward(const Tensor& x, const BackboneConfig& cfg,
                                const BackboneWeights& w, ActivationTrace* trace = nullptr);

struct ConvAffineGrads {
  ConvGrads conv;
  std::vector<double> norm_scale, norm_shift;
};

struct BackboneStageGrads {
  std::optional<ConvAffineGrads> down;
  std::vector<LskBlockGrads> blocks;
  std::vector<double> out_norm_scale, out_norm_shift;
};

struct BackboneGrads {
  ConvGrads stem0, stem1;
  std::vector<double> stem_norm0_scale, stem_norm0_shift;
  std::vector<double> stem_norm1_scale, stem_norm1_shift;
  std::array<BackboneStageGrads, 4> stages;
};

struct BackboneVjpResult {
  Tensor grad_input;
  BackboneGrads grads;
};

// Reverse pass through the whole backbone; upstream carries one gradient
// tensor per pyramid stage.
BackboneVjpResult backbone_vjp(const Tensor& x, const BackboneConfig& cfg,
                               const BackboneWeights& w,
                               const std::array<Tensor, 4>& upstream);

// Analytic per-layer ledger for the configured backbone. Parameter totals are
// a pure function of the config and must equal the element count of the
// weights build_backbone constructs. FLOPs follow the MAC=1 convention at the
// declared input size; norms and activations are itemized with zero FLOPs.
CostReport backbone_cost(const BackboneConfig& cfg, int input_h = 1024, int input_w = 1024);

}  // namespace lsk
