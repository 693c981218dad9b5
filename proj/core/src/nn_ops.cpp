#include "lsk/nn_ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lsk/parallel.hpp"
#include "lsk/rng.hpp"

namespace lsk {

void ConvWeights::validate() const {
  require(k >= 1 && k % 2 == 1, "conv kernel size must be odd and >= 1, got " + std::to_string(k));
  require(dilation >= 1, "conv dilation must be >= 1, got " + std::to_string(dilation));
  require(in_channels >= 1 && out_channels >= 1, "conv channel counts must be >= 1");
  if (kind == ConvKind::kDepthwise) {
    require(out_channels == in_channels,
            "depthwise conv requires out_channels == in_channels, got " +
                std::to_string(out_channels) + " vs " + std::to_string(in_channels));
  }
  const Shape expect{out_channels, in_per_group(), k, k};
  require(weight.shape == expect, "conv weight shape " + weight.shape.str() +
                                      " does not match expected " + expect.str());
  require(bias.empty() || static_cast<i64>(bias.size()) == out_channels,
          "conv bias length must equal out_channels");
}

ConvWeights make_conv(ConvKind kind, int in_channels, int out_channels, int k, int dilation,
                      bool with_bias) {
  ConvWeights w;
  w.kind = kind;
  w.k = k;
  w.dilation = dilation;
  w.in_channels = in_channels;
  w.out_channels = out_channels;
  w.weight = zeros({out_channels, w.in_per_group(), k, k});
  if (with_bias) w.bias.assign(static_cast<std::size_t>(out_channels), 0.0);
  w.validate();
  return w;
}

ConvWeights make_conv_seeded(ConvKind kind, int in_channels, int out_channels, int k,
                             int dilation, std::uint64_t seed, bool with_bias) {
  ConvWeights w = make_conv(kind, in_channels, out_channels, k, dilation, with_bias);
  SplitMix64 rng(seed);
  for (double& v : w.weight.data) v = rng.next_trunc_normal(0.0, 0.02);
  return w;
}

Tensor conv2d_forward(const Tensor& x, const ConvWeights& w) {
  w.validate();
  require(x.shape.c == w.in_channels, "conv2d: input has " + std::to_string(x.shape.c) +
                                          " channels, weights expect " +
                                          std::to_string(w.in_channels));
  require(x.shape.h >= 1 && x.shape.w >= 1, "conv2d: spatial dims must be >= 1, got " +
                                                 x.shape.str());
  const i64 N = x.shape.n, H = x.shape.h, W = x.shape.w;
  const i64 O = w.out_channels, G = w.in_per_group();
  const int k = w.k, d = w.dilation;
  const i64 pad = static_cast<i64>(d) * (k - 1) / 2;
  const bool depthwise = w.kind == ConvKind::kDepthwise;

  Tensor y({N, O, H, W});
  // Each (n, o) slab is written by exactly one chunk, so the result does not
  // depend on the thread count.
  parallel_for(0, N * O, [&](i64 lo, i64 hi) {
    for (i64 s = lo; s < hi; ++s) {
      const i64 n = s / O, o = s % O;
      for (i64 oy = 0; oy < H; ++oy) {
        for (i64 ox = 0; ox < W; ++ox) {
          double acc = w.has_bias() ? w.bias[static_cast<std::size_t>(o)] : 0.0;
          for (i64 ci = 0; ci < G; ++ci) {
            const i64 src_c = depthwise ? o : ci;
            for (int i = 0; i < k; ++i) {
              const i64 iy = oy + static_cast<i64>(d) * i - pad;
              if (iy < 0 || iy >= H) continue;
              for (int j = 0; j < k; ++j) {
                const i64 ix = ox + static_cast<i64>(d) * j - pad;
                if (ix < 0 || ix >= W) continue;
                acc += w.weight.at(o, ci, i, j) * x.at(n, src_c, iy, ix);
              }
            }
          }
          y.at(n, o, oy, ox) = acc;
        }
      }
    }
  });
  return y;
}

ConvVjp conv2d_vjp(const Tensor& x, const ConvWeights& w, const Tensor& upstream) {
  w.validate();
  const Shape out_shape{x.shape.n, w.out_channels, x.shape.h, x.shape.w};
  require(upstream.shape == out_shape, "conv2d_vjp: upstream shape " + upstream.shape.str() +
                                           " does not match forward output " + out_shape.str());
  require(x.shape.c == w.in_channels, "conv2d_vjp: input channel mismatch");

  const i64 N = x.shape.n, H = x.shape.h, W = x.shape.w;
  const i64 O = w.out_channels, G = w.in_per_group();
  const int k = w.k, d = w.dilation;
  const i64 pad = static_cast<i64>(d) * (k - 1) / 2;
  const bool depthwise = w.kind == ConvKind::kDepthwise;

  ConvVjp vjp;
  vjp.grad_weight = zeros(w.weight.shape);
  if (w.has_bias()) vjp.grad_bias.assign(static_cast<std::size_t>(O), 0.0);
  vjp.grad_input = zeros(x.shape);

  // Weight/bias gradients: one (o, ci) filter plane per chunk.
  parallel_for(0, O * G, [&](i64 lo, i64 hi) {
    for (i64 s = lo; s < hi; ++s) {
      const i64 o = s / G, ci = s % G;
      const i64 src_c = depthwise ? o : ci;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          double acc = 0.0;
          for (i64 n = 0; n < N; ++n) {
            for (i64 oy = 0; oy < H; ++oy) {
              const i64 iy = oy + static_cast<i64>(d) * i - pad;
              if (iy < 0 || iy >= H) continue;
              for (i64 ox = 0; ox < W; ++ox) {
                const i64 ix = ox + static_cast<i64>(d) * j - pad;
                if (ix < 0 || ix >= W) continue;
                acc += upstream.at(n, o, oy, ox) * x.at(n, src_c, iy, ix);
              }
            }
          }
          vjp.grad_weight.at(o, ci, i, j) = acc;
        }
      }
      if (w.has_bias() && ci == 0) {
        double acc = 0.0;
        for (i64 n = 0; n < N; ++n)
          for (i64 oy = 0; oy < H; ++oy)
            for (i64 ox = 0; ox < W; ++ox) acc += upstream.at(n, o, oy, ox);
        vjp.grad_bias[static_cast<std::size_t>(o)] = acc;
      }
    }
  });

  // Input gradient: scatter per batch element; batch slabs are disjoint.
  parallel_for(0, N, [&](i64 n_lo, i64 n_hi) {
    for (i64 n = n_lo; n < n_hi; ++n) {
      for (i64 o = 0; o < O; ++o) {
        for (i64 oy = 0; oy < H; ++oy) {
          for (i64 ox = 0; ox < W; ++ox) {
            const double up = upstream.at(n, o, oy, ox);
            if (up == 0.0) continue;
            for (i64 ci = 0; ci < G; ++ci) {
              const i64 src_c = depthwise ? o : ci;
              for (int i = 0; i < k; ++i) {
                const i64 iy = oy + static_cast<i64>(d) * i - pad;
                if (iy < 0 || iy >= H) continue;
                for (int j = 0; j < k; ++j) {
                  const i64 ix = ox + static_cast<i64>(d) * j - pad;
                  if (ix < 0 || ix >= W) continue;
                  vjp.grad_input.at(n, src_c, iy, ix) += up * w.weight.at(o, ci, i, j);
                }
              }
            }
          }
        }
      }
    }
  });
  return vjp;
}

Tensor channel_pool(const Tensor& x, PoolMode mode) {
  require(x.shape.c >= 1, "channel_pool: input must have at least one channel, got " +
                              x.shape.str());
  const i64 N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const i64 out_c = mode == PoolMode::kBoth ? 2 : 1;
  Tensor y({N, out_c, H, W});
  parallel_for(0, N, [&](i64 lo, i64 hi) {
    for (i64 n = lo; n < hi; ++n) {
      for (i64 yy = 0; yy < H; ++yy) {
        for (i64 xx = 0; xx < W; ++xx) {
          double sum = 0.0;
          double mx = x.at(n, 0, yy, xx);
          for (i64 c = 0; c < C; ++c) {
            const double v = x.at(n, c, yy, xx);
            sum += v;
            if (v > mx) mx = v;
          }
          const double avg = sum / static_cast<double>(C);
          switch (mode) {
            case PoolMode::kAvg: y.at(n, 0, yy, xx) = avg; break;
            case PoolMode::kMax: y.at(n, 0, yy, xx) = mx; break;
            case PoolMode::kBoth:
              y.at(n, 0, yy, xx) = avg;
              y.at(n, 1, yy, xx) = mx;
              break;
          }
        }
      }
    }
  });
  return y;
}

Tensor channel_pool_vjp(const Tensor& x, PoolMode mode, const Tensor& upstream) {
  require(x.shape.c >= 1, "channel_pool_vjp: input must have at least one channel");
  const i64 out_c = mode == PoolMode::kBoth ? 2 : 1;
  const Shape expect{x.shape.n, out_c, x.shape.h, x.shape.w};
  require(upstream.shape == expect, "channel_pool_vjp: upstream shape " + upstream.shape.str() +
                                        " does not match pooled output " + expect.str());
  const i64 N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  Tensor gx(x.shape);
  const double inv_c = 1.0 / static_cast<double>(C);
  for (i64 n = 0; n < N; ++n) {
    for (i64 yy = 0; yy < H; ++yy) {
      for (i64 xx = 0; xx < W; ++xx) {
        if (mode == PoolMode::kAvg || mode == PoolMode::kBoth) {
          const double g = upstream.at(n, 0, yy, xx) * inv_c;
          for (i64 c = 0; c < C; ++c) gx.at(n, c, yy, xx) += g;
        }
        if (mode == PoolMode::kMax || mode == PoolMode::kBoth) {
          const i64 up_ch = mode == PoolMode::kMax ? 0 : 1;
          // gradient routes to the argmax channel, ties to the lowest index
          i64 arg = 0;
          double mx = x.at(n, 0, yy, xx);
          for (i64 c = 1; c < C; ++c) {
            const double v = x.at(n, c, yy, xx);
            if (v > mx) {
              mx = v;
              arg = c;
            }
          }
          gx.at(n, arg, yy, xx) += upstream.at(n, up_ch, yy, xx);
        }
      }
    }
  }
  return gx;
}

double sigmoid_scalar(double v) {
  double s;
  if (v >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-v));
  } else {
    const double e = std::exp(v);
    s = e / (1.0 + e);
  }
  // keep outputs strictly inside (0,1) even where f64 rounding saturates
  if (s >= 1.0) s = 1.0 - 0x1p-53;
  if (s <= 0.0) s = std::numeric_limits<double>::min();
  return s;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = sigmoid_scalar(x.data[i]);
  return y;
}

Tensor sigmoid_vjp(const Tensor& x, const Tensor& upstream) {
  require(upstream.shape == x.shape, "sigmoid_vjp: upstream shape " + upstream.shape.str() +
                                         " does not match input " + x.shape.str());
  Tensor gx(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double s = sigmoid_scalar(x.data[i]);
    gx.data[i] = upstream.data[i] * s * (1.0 - s);
  }
  return gx;
}

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); }

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = gelu_scalar(x.data[i]);
  return y;
}

Tensor gelu_vjp(const Tensor& x, const Tensor& upstream) {
  require(upstream.shape == x.shape, "gelu_vjp: upstream shape " + upstream.shape.str() +
                                         " does not match input " + x.shape.str());
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  Tensor gx(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double v = x.data[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    gx.data[i] = upstream.data[i] * (cdf + v * pdf);
  }
  return gx;
}

Tensor residual_add(const Tensor& x, const Tensor& y) {
  require(x.shape == y.shape, "residual_add: shape mismatch, " + x.shape.str() + " vs " +
                                  y.shape.str());
  return elementwise_add(x, y);
}

}  // namespace lsk
