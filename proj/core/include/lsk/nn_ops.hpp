#pragma once

#include <cstdint>
#include <vector>

#include "lsk/tensor.hpp"

namespace lsk {

enum class ConvKind { kDepthwise, kDense };

// Square odd-kernel "same" convolution: pad = dilation*(k-1)/2 on every side,
// stride 1, so spatial size is preserved. Depthwise applies one k x k filter
// per channel (out == in, one tap channel per filter).
struct ConvWeights {
  ConvKind kind = ConvKind::kDense;
  int k = 1;
  int dilation = 1;
  int in_channels = 0;
  int out_channels = 0;
  Tensor weight;              // (out, in_per_group, k, k)
  std::vector<double> bias;   // length out; empty = no bias term

  int in_per_group() const { return kind == ConvKind::kDepthwise ? 1 : in_channels; }
  bool has_bias() const { return !bias.empty(); }
  i64 param_count(bool with_bias) const {
    return weight.numel() + (with_bias ? static_cast<i64>(bias.size()) : 0);
  }
  void validate() const;
};

ConvWeights make_conv(ConvKind kind, int in_channels, int out_channels, int k, int dilation,
                      bool with_bias = true);
// Same, filled with truncated-normal(0, 0.02) weights from the seed stream.
ConvWeights make_conv_seeded(ConvKind kind, int in_channels, int out_channels, int k,
                             int dilation, std::uint64_t seed, bool with_bias = true);

Tensor conv2d_forward(const Tensor& x, const ConvWeights& w);

struct ConvVjp {
  Tensor grad_weight;             // shape of w.weight
  std::vector<double> grad_bias;  // empty when w has no bias
  Tensor grad_input;              // shape of x
};
ConvVjp conv2d_vjp(const Tensor& x, const ConvWeights& w, const Tensor& upstream);

enum class PoolMode { kAvg, kMax, kBoth };

// Pooling over the channel axis. avg/max produce (n,1,h,w); both produces
// (n,2,h,w) with avg in channel 0 and max in channel 1. Max ties break to the
// lowest channel index (relevant only to the VJP routing).
Tensor channel_pool(const Tensor& x, PoolMode mode);
Tensor channel_pool_vjp(const Tensor& x, PoolMode mode, const Tensor& upstream);

double sigmoid_scalar(double v);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_vjp(const Tensor& x, const Tensor& upstream);

// Exact-erf GELU: 0.5*x*(1 + erf(x/sqrt(2))).
double gelu_scalar(double v);
Tensor gelu(const Tensor& x);
Tensor gelu_vjp(const Tensor& x, const Tensor& upstream);

// x + y with equal shapes. Its VJP is the identity on both operands.
Tensor residual_add(const Tensor& x, const Tensor& y);

}  // namespace lsk
