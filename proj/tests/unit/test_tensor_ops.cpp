#include <random>

#include "doctest.h"
#include "grad_suite.hpp"
#include "oracles.hpp"
#include "recalib/ops.hpp"

using namespace recalib;
using namespace recalib::testing;
namespace orc = recalib::oracle;

TEST_SUITE("tensor-engine") {

TEST_CASE("tensor construction and shape checks") {
  Tensor<double> t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  Tensor<double> u({2, 2});
  CHECK_THROWS_AS(t.add_(u), ShapeError);
}

TEST_CASE("conv2d matches the direct oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t groups = rand_dim(rng, 1, 3);
    const std::size_t cin = groups * rand_dim(rng, 1, 3), cout = groups * rand_dim(rng, 1, 3);
    const std::size_t k = rand_dim(rng, 1, 5), pad = rand_dim(rng, 0, 2), stride = rand_dim(rng, 1, 3);
    const std::size_t H = rand_dim(rng, k, 9), W = rand_dim(rng, k, 9);
    const auto x = random_tensor({rand_dim(rng, 1, 3), cin, H, W}, rng);
    const auto w = random_tensor({cout, cin / groups, k, k}, rng);
    const auto got = conv2d(Var<double>(x), Var<double>(w), Conv2dOptions{stride, pad, groups});
    const auto want = orc::conv2d(x, w, stride, pad, groups);
    REQUIRE(got.shape() == want.shape());
    CHECK(orc::max_rel_dev(got.value(), want) < 1e-12);
  }
}

TEST_CASE("depthwise conv equals grouped conv with groups = C") {
  std::mt19937_64 rng(12);
  const auto x = random_tensor({2, 5, 7, 6}, rng);
  const auto w = random_tensor({5, 1, 3, 3}, rng);
  const auto got = depthwise_conv2d(Var<double>(x), Var<double>(w), 1, 2);
  CHECK(orc::max_rel_dev(got.value(), orc::conv2d(x, w, 2, 1, 5)) < 1e-12);
}

TEST_CASE("conv2d rejects inconsistent operands") {
  Var<double> x(Tensor<double>({1, 4, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor<double>({2, 3, 3, 3}))), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor<double>({3, 2, 3, 3})), Conv2dOptions{1, 0, 2}),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor<double>({2, 4, 7, 7}))), ShapeError);
  CHECK_THROWS_AS(conv2d(Var<double>(Tensor<double>({4, 5, 5})),
                         Var<double>(Tensor<double>({2, 4, 1, 1}))),
                  ShapeError);
}

TEST_CASE("pooling, scaling and linear layers match oracles") {
  std::mt19937_64 rng(13);
  const auto x = random_tensor({3, 4, 6, 5}, rng);
  CHECK(orc::max_rel_dev(global_avg_pool(Var<double>(x)).value(), orc::global_avg_pool(x)) < 1e-14);
  CHECK(orc::max_rel_dev(max_pool2d(Var<double>(x), 3, 2, 1).value(), orc::max_pool(x, 3, 2, 1)) == 0.0);
  CHECK(orc::max_rel_dev(avg_pool2d(Var<double>(x), 2, 2).value(), orc::avg_pool(x, 2, 2)) < 1e-14);
  const auto p = random_tensor({3, 4}, rng);
  CHECK(orc::max_rel_dev(channel_scale(Var<double>(x), Var<double>(p)).value(),
                         orc::channel_scale(x, p)) == 0.0);
  const auto v = random_tensor({3, 7}, rng);
  const auto w = random_tensor({4, 7}, rng);
  const auto b = random_tensor({4}, rng);
  CHECK(orc::max_rel_dev(linear(Var<double>(v), Var<double>(w), Var<double>(b)).value(),
                         orc::linear(v, w, &b.vec())) < 1e-14);
  CHECK(orc::max_rel_dev(linear(Var<double>(v), Var<double>(w), Var<double>()).value(),
                         orc::linear(v, w, nullptr)) < 1e-14);
}

TEST_CASE("batch norm in training mode normalizes and updates running stats") {
  std::mt19937_64 rng(14);
  const auto x = random_tensor({6, 3}, rng, -2.0, 3.0);
  const auto g = random_tensor({3}, rng, 0.5, 1.5);
  const auto b = random_tensor({3}, rng);
  auto stats = BatchNormStats<double>::init(3);
  const auto y = batch_norm(Var<double>(x), Var<double>(g), Var<double>(b), stats, true);
  CHECK(orc::max_rel_dev(y.value(), orc::batch_norm_2d(x, g.vec(), b.vec(), 1e-5)) < 1e-12);
  // running_var tracks the unbiased estimate
  double m = 0, v = 0;
  for (std::size_t n = 0; n < 6; ++n) m += x.at(n, 0) / 6.0;
  for (std::size_t n = 0; n < 6; ++n) v += (x.at(n, 0) - m) * (x.at(n, 0) - m) / 5.0;
  CHECK(stats.running_mean[0] == doctest::Approx(0.1 * m));
  CHECK(stats.running_var[0] == doctest::Approx(0.9 + 0.1 * v));
  CHECK_THROWS_AS(batch_norm(Var<double>(Tensor<double>({1, 3})), Var<double>(g), Var<double>(b),
                             stats, true),
                  ShapeError);
}

TEST_CASE("batch norm in eval mode uses running statistics") {
  auto stats = BatchNormStats<double>::init(2);
  stats.running_mean = Tensor<double>({2}, std::vector<double>{1.0, -1.0});
  stats.running_var = Tensor<double>({2}, std::vector<double>{4.0, 0.25});
  const Tensor<double> x({1, 2}, std::vector<double>{3.0, 0.0});
  const auto y = batch_norm(Var<double>(x), Var<double>(Tensor<double>::ones({2})),
                            Var<double>(Tensor<double>::zeros({2})), stats, false);
  CHECK(y.value()[0] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
  CHECK(y.value()[1] == doctest::Approx(1.0 / std::sqrt(0.25 + 1e-5)));
  CHECK(stats.running_mean[0] == 1.0);
}

TEST_CASE("softmax cross entropy matches oracle and validates labels") {
  std::mt19937_64 rng(15);
  const auto z = random_tensor({5, 4}, rng, -3.0, 3.0);
  std::vector<std::int32_t> labels{0, 3, 2, 1, 3};
  const auto l = softmax_cross_entropy(Var<double>(z), std::span<const std::int32_t>(labels));
  CHECK(l.value()[0] == doctest::Approx(orc::softmax_ce(z, labels)).epsilon(1e-12));
  std::vector<std::int32_t> bad{0, 4, 0, 0, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(Var<double>(z), std::span<const std::int32_t>(bad)),
                  ShapeError);
  // large logits stay finite
  Tensor<double> big({1, 2}, std::vector<double>{1000.0, -1000.0});
  std::vector<std::int32_t> one{1};
  CHECK(std::isfinite(
      softmax_cross_entropy(Var<double>(big), std::span<const std::int32_t>(one)).value()[0]));
}

TEST_CASE("gradients accumulate across shared uses and respect NoGradGuard") {
  Var<double> a(Tensor<double>({2}, std::vector<double>{1.0, 2.0}), true);
  backward(sum(add(a, a)));
  CHECK(a.grad()[0] == 2.0);
  CHECK(a.grad()[1] == 2.0);
  {
    NoGradGuard ng;
    const auto y = add(a, a);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("gradient suite: central differences in double") {
  std::mt19937_64 rng(2024);
  for (const auto& c : gradient_suite()) {
    if (c.name.starts_with("block_")) continue;
    CAPTURE(c.name);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) worst = std::max(worst, c.trial(rng).rel_error);
    CHECK(worst <= 1e-5);
  }
}

}  // TEST_SUITE
