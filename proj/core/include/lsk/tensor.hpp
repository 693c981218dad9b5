#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsk/errors.hpp"

namespace lsk {

using i64 = std::int64_t;

struct Shape {
  i64 n = 0, c = 0, h = 0, w = 0;

  i64 numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;  // "1x3x64x64"
};

// Dense rank-4 array of f64 in NCHW row-major order (n outermost, w
// innermost). Treated as immutable once produced: library operations never
// modify their inputs, so a Tensor may be shared read-only across threads.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s);

  i64 numel() const { return shape.numel(); }

  i64 index(i64 n, i64 c, i64 y, i64 x) const {
    return ((n * shape.c + c) * shape.h + y) * shape.w + x;
  }
  double& at(i64 n, i64 c, i64 y, i64 x) { return data[static_cast<std::size_t>(index(n, c, y, x))]; }
  double at(i64 n, i64 c, i64 y, i64 x) const {
    return data[static_cast<std::size_t>(index(n, c, y, x))];
  }
};

Tensor zeros(Shape s);
Tensor full(Shape s, double value);

// out[i] = a[i] * b[i]; shapes must match exactly (no broadcasting).
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor elementwise_add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Stacks parts along the channel axis, band order preserved. All parts must
// share n/h/w and the list must be non-empty.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Channels [c_begin, c_end) as a new tensor; inverse of concat_channels.
Tensor slice_channels(const Tensor& x, i64 c_begin, i64 c_end);

// Deterministic fills from the SplitMix64 stream for `seed`, element order =
// memory order. uniform draws lo + u*(hi-lo); normal is Box-Muller.
Tensor seeded_uniform(Shape s, std::uint64_t seed, double lo, double hi);
Tensor seeded_normal(Shape s, std::uint64_t seed, double mean, double std);

bool all_finite(const Tensor& t);

}  // namespace lsk
