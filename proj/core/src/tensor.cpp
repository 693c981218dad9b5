#include "lsk/tensor.hpp"

#include <cmath>

#include "lsk/rng.hpp"

namespace lsk {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

static i64 checked_numel(Shape s) {
  require(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0,
          "tensor shape components must be non-negative, got " + s.str());
  return s.numel();
}

Tensor::Tensor(Shape s) : shape(s), data(static_cast<std::size_t>(checked_numel(s)), 0.0) {}

Tensor zeros(Shape s) { return Tensor(s); }

Tensor full(Shape s, double value) {
  Tensor t(s);
  for (double& v : t.data) v = value;
  return t;
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch, " + a.shape.str() + " vs " +
                                  b.shape.str());
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_mul");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_add");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * factor;
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_channels: part list must be non-empty");
  const Shape& first = parts.front().shape;
  i64 total_c = 0;
  for (const Tensor& p : parts) {
    require(p.shape.n == first.n && p.shape.h == first.h && p.shape.w == first.w,
            "concat_channels: spatial/batch mismatch, " + first.str() + " vs " + p.shape.str());
    total_c += p.shape.c;
  }
  Tensor out({first.n, total_c, first.h, first.w});
  i64 c_off = 0;
  for (const Tensor& p : parts) {
    for (i64 n = 0; n < p.shape.n; ++n)
      for (i64 c = 0; c < p.shape.c; ++c)
        for (i64 y = 0; y < p.shape.h; ++y)
          for (i64 x = 0; x < p.shape.w; ++x) out.at(n, c_off + c, y, x) = p.at(n, c, y, x);
    c_off += p.shape.c;
  }
  return out;
}

Tensor slice_channels(const Tensor& x, i64 c_begin, i64 c_end) {
  require(0 <= c_begin && c_begin <= c_end && c_end <= x.shape.c,
          "slice_channels: band [" + std::to_string(c_begin) + ", " + std::to_string(c_end) +
              ") out of range for " + x.shape.str());
  Tensor out({x.shape.n, c_end - c_begin, x.shape.h, x.shape.w});
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = c_begin; c < c_end; ++c)
      for (i64 y = 0; y < x.shape.h; ++y)
        for (i64 xx = 0; xx < x.shape.w; ++xx) out.at(n, c - c_begin, y, xx) = x.at(n, c, y, xx);
  return out;
}

Tensor seeded_uniform(Shape s, std::uint64_t seed, double lo, double hi) {
  require(lo <= hi, "seeded_uniform: lo must be <= hi");
  Tensor t(s);
  SplitMix64 rng(seed);
  for (double& v : t.data) v = rng.next_uniform(lo, hi);
  return t;
}

Tensor seeded_normal(Shape s, std::uint64_t seed, double mean, double std) {
  require(std >= 0.0, "seeded_normal: std must be >= 0");
  Tensor t(s);
  SplitMix64 rng(seed);
  for (double& v : t.data) v = rng.next_normal(mean, std);
  return t;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace lsk
