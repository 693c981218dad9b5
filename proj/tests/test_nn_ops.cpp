#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>

#include "lsk/gradcheck.hpp"
#include "lsk/nn_ops.hpp"
#include "oracles.hpp"

using namespace lsk;

namespace {

ConvWeights filled_conv(ConvKind kind, int in_ch, int out_ch, int k, int d, std::uint64_t seed) {
  ConvWeights w = make_conv(kind, in_ch, out_ch, k, d);
  SplitMix64 rng(seed);
  for (double& v : w.weight.data) v = rng.next_normal(0.0, 0.5);
  for (double& v : w.bias) v = rng.next_normal(0.0, 0.5);
  return w;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  ConvWeights w = make_conv(ConvKind::kDepthwise, 2, 2, 1, 1);
  w.weight.data = {1.0, 1.0};
  const Tensor x = seeded_normal({1, 2, 4, 4}, 5, 0.0, 1.0);
  CHECK(oracle::bitwise_equal(conv2d_forward(x, w), x));
}

TEST_CASE("conv2d hand-checked 3x3 all-ones") {
  ConvWeights w = make_conv(ConvKind::kDepthwise, 1, 1, 3, 1);
  for (double& v : w.weight.data) v = 1.0;
  const Tensor x = full({1, 1, 3, 3}, 1.0);
  const Tensor y = conv2d_forward(x, w);
  CHECK(y.at(0, 0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 0, 2) == 4.0);
  CHECK(y.at(0, 0, 2, 0) == 4.0);
  CHECK(y.at(0, 0, 2, 2) == 4.0);
  CHECK(y.at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d dilated matches the naive oracle") {
  const Tensor x = seeded_normal({1, 2, 5, 5}, 17, 0.0, 1.0);
  const ConvWeights w = filled_conv(ConvKind::kDepthwise, 2, 2, 3, 2, 18);
  CHECK(oracle::bitwise_equal(conv2d_forward(x, w), oracle::naive_conv2d(x, w)));
}

TEST_CASE("conv2d oracle equivalence across kernel/dilation grid") {
  // bitwise agreement with the direct-sum definition on random instances
  SplitMix64 seeds(2024);
  const int ks[] = {1, 3, 5, 7, 9, 23};
  const int ds[] = {1, 2, 3, 4};
  int instances = 0;
  for (int k : ks)
    for (int d : ds) {
      for (int rep = 0; rep < 5; ++rep) {
        const i64 h = 4 + static_cast<i64>(seeds.next_u64() % 5);
        const i64 wd = 4 + static_cast<i64>(seeds.next_u64() % 5);
        const int c = 1 + static_cast<int>(seeds.next_u64() % 3);
        const Tensor x = seeded_normal({1, c, h, wd}, seeds.next_u64(), 0.0, 1.0);
        const bool dense = (seeds.next_u64() & 1) != 0;
        const ConvWeights w =
            dense ? filled_conv(ConvKind::kDense, c, 1 + static_cast<int>(seeds.next_u64() % 3),
                                k, d, seeds.next_u64())
                  : filled_conv(ConvKind::kDepthwise, c, c, k, d, seeds.next_u64());
        CHECK(oracle::bitwise_equal(conv2d_forward(x, w), oracle::naive_conv2d(x, w)));
        ++instances;
      }
    }
  CHECK(instances >= 100);
}

TEST_CASE("conv2d preserves spatial size for every legal (k, d)") {
  for (int k : {1, 3, 5, 7}) {
    for (int d : {1, 2, 3}) {
      const Tensor x = seeded_normal({1, 1, 6, 9}, 3, 0.0, 1.0);
      const ConvWeights w = filled_conv(ConvKind::kDepthwise, 1, 1, k, d, 4);
      CHECK(conv2d_forward(x, w).shape == x.shape);
    }
  }
}

TEST_CASE("conv2d contract violations") {
  const Tensor x = seeded_normal({1, 2, 4, 4}, 1, 0.0, 1.0);
  CHECK_THROWS_AS(conv2d_forward(x, make_conv(ConvKind::kDense, 3, 1, 3, 1)),
                  ContractViolation);
  ConvWeights even = make_conv(ConvKind::kDense, 2, 1, 3, 1);
  even.k = 4;  // corrupt after construction
  even.weight = zeros({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d_forward(x, even), ContractViolation);
  ConvWeights bad_d = make_conv(ConvKind::kDense, 2, 1, 3, 1);
  bad_d.dilation = 0;
  CHECK_THROWS_AS(conv2d_forward(x, bad_d), ContractViolation);
}

TEST_CASE("conv2d parallel and serial execution agree bitwise") {
  const Tensor x = seeded_normal({3, 4, 8, 8}, 9, 0.0, 1.0);
  const ConvWeights w = filled_conv(ConvKind::kDense, 4, 5, 3, 2, 10);
  setenv("LSK_THREADS", "1", 1);
  const Tensor serial = conv2d_forward(x, w);
  setenv("LSK_THREADS", "7", 1);
  const Tensor parallel = conv2d_forward(x, w);
  unsetenv("LSK_THREADS");
  CHECK(oracle::bitwise_equal(serial, parallel));
}

TEST_CASE("conv2d vjp zero upstream and identity kernel") {
  const Tensor x = seeded_normal({1, 2, 4, 4}, 21, 0.0, 1.0);
  const ConvWeights w = filled_conv(ConvKind::kDepthwise, 2, 2, 3, 1, 22);
  const ConvVjp z = conv2d_vjp(x, w, zeros({1, 2, 4, 4}));
  for (double v : z.grad_weight.data) CHECK(v == 0.0);
  for (double v : z.grad_bias) CHECK(v == 0.0);
  for (double v : z.grad_input.data) CHECK(v == 0.0);

  ConvWeights ident = make_conv(ConvKind::kDepthwise, 2, 2, 1, 1);
  ident.weight.data = {1.0, 1.0};
  const Tensor up = seeded_normal({1, 2, 4, 4}, 23, 0.0, 1.0);
  CHECK(oracle::bitwise_equal(conv2d_vjp(x, ident, up).grad_input, up));
}

TEST_CASE("conv2d vjp matches finite differences") {
  Tensor x = seeded_normal({1, 2, 4, 4}, 31, 0.0, 1.0);
  const Tensor up = seeded_normal({1, 2, 4, 4}, 32, 0.0, 1.0);
  for (ConvKind kind : {ConvKind::kDepthwise, ConvKind::kDense}) {
    ConvWeights w = filled_conv(kind, 2, 2, 3, 2, 33);
    const ConvVjp vjp = conv2d_vjp(x, w, up);
    auto loss = [&]() { return oracle::dot_loss(conv2d_forward(x, w), up); };
    ParamView views[] = {
        {"x", x.data.data(), x.numel(), vjp.grad_input.data.data()},
        {"weight", w.weight.data.data(), w.weight.numel(), vjp.grad_weight.data.data()},
        {"bias", w.bias.data(), static_cast<i64>(w.bias.size()), vjp.grad_bias.data()},
    };
    const GradCheckReport report = check_gradients(loss, views);
    CHECK(report.max_rel_err < 1e-6);
  }
}

TEST_CASE("channel_pool values") {
  // single channel: every mode copies the input
  const Tensor one = seeded_normal({1, 1, 3, 3}, 40, 0.0, 1.0);
  for (PoolMode m : {PoolMode::kAvg, PoolMode::kMax}) {
    CHECK(oracle::bitwise_equal(channel_pool(one, m), one));
  }

  Tensor x = zeros({1, 2, 1, 1});
  x.data = {1.0, 3.0};
  CHECK(channel_pool(x, PoolMode::kAvg).data[0] == 2.0);
  CHECK(channel_pool(x, PoolMode::kMax).data[0] == 3.0);

  const Tensor r = seeded_normal({2, 7, 4, 4}, 41, 0.0, 1.0);
  const Tensor both = channel_pool(r, PoolMode::kBoth);
  const Tensor stacked = concat_channels({channel_pool(r, PoolMode::kAvg),
                                          channel_pool(r, PoolMode::kMax)});
  CHECK(oracle::bitwise_equal(both, stacked));

  CHECK_THROWS_AS(channel_pool(zeros({1, 0, 2, 2}), PoolMode::kAvg), ContractViolation);
}

TEST_CASE("channel_pool vjp matches finite differences away from ties") {
  Tensor x = seeded_normal({1, 3, 4, 4}, 50, 0.0, 1.0);
  for (PoolMode m : {PoolMode::kAvg, PoolMode::kMax, PoolMode::kBoth}) {
    const Shape out{1, m == PoolMode::kBoth ? 2 : 1, 4, 4};
    const Tensor up = seeded_normal(out, 51, 0.0, 1.0);
    const Tensor gx = channel_pool_vjp(x, m, up);
    auto loss = [&]() { return oracle::dot_loss(channel_pool(x, m), up); };
    ParamView views[] = {{"x", x.data.data(), x.numel(), gx.data.data()}};
    CHECK(check_gradients(loss, views).max_rel_err < 1e-6);
  }
}

TEST_CASE("max-pool vjp tie-break routes to the lowest channel") {
  Tensor x = zeros({1, 3, 1, 1});
  x.data = {2.0, 2.0, 1.0};  // tie between channels 0 and 1
  const Tensor up = full({1, 1, 1, 1}, 1.0);
  const Tensor gx = channel_pool_vjp(x, PoolMode::kMax, up);
  CHECK(gx.data[0] == 1.0);
  CHECK(gx.data[1] == 0.0);
  CHECK(gx.data[2] == 0.0);
}

TEST_CASE("sigmoid values and range") {
  CHECK(sigmoid_scalar(0.0) == 0.5);
  const Tensor x = seeded_normal({1, 2, 8, 8}, 60, 0.0, 3.0);
  const Tensor s = sigmoid(x);
  for (double v : s.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // stays strictly inside (0,1) even at saturating magnitudes
  CHECK(sigmoid_scalar(1000.0) < 1.0);
  CHECK(sigmoid_scalar(-1000.0) > 0.0);
  // monotone nondecreasing
  double prev = sigmoid_scalar(-20.0);
  for (double v = -19.5; v <= 20.0; v += 0.5) {
    const double cur = sigmoid_scalar(v);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("gelu values") {
  CHECK(gelu_scalar(0.0) == 0.0);
  CHECK(gelu_scalar(10.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(gelu_scalar(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("sigmoid and gelu vjps match finite differences") {
  Tensor x = seeded_normal({1, 3, 4, 4}, 70, 0.0, 1.0);
  const Tensor up = seeded_normal({1, 3, 4, 4}, 71, 0.0, 1.0);
  {
    const Tensor gx = sigmoid_vjp(x, up);
    auto loss = [&]() { return oracle::dot_loss(sigmoid(x), up); };
    ParamView views[] = {{"x", x.data.data(), x.numel(), gx.data.data()}};
    CHECK(check_gradients(loss, views).max_rel_err < 1e-6);
  }
  {
    const Tensor gx = gelu_vjp(x, up);
    auto loss = [&]() { return oracle::dot_loss(gelu(x), up); };
    ParamView views[] = {{"x", x.data.data(), x.numel(), gx.data.data()}};
    CHECK(check_gradients(loss, views).max_rel_err < 1e-6);
  }
}

TEST_CASE("residual_add") {
  const Tensor x = seeded_normal({1, 2, 3, 3}, 80, 0.0, 1.0);
  const Tensor y = seeded_normal({1, 2, 3, 3}, 81, 0.0, 1.0);
  const Tensor s = residual_add(x, y);
  for (std::size_t i = 0; i < s.data.size(); ++i) CHECK(s.data[i] == x.data[i] + y.data[i]);
  CHECK_THROWS_AS(residual_add(x, zeros({1, 2, 3, 4})), ContractViolation);
}
