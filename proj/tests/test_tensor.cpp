#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <span>
#include <vector>

#include "nowcast/rng.hpp"
#include "nowcast/tensor.hpp"
#include "testutil.hpp"

using namespace nowcast;
using testutil::max_grad_error;
using testutil::random_tensor;

using T64 = TensorT<double>;
namespace o = nowcast::ops;

// Every differentiable op is checked in 64-bit against central finite
// differences. Single ops must agree to 1e-5, composed graphs to 1e-4.
constexpr double kSingleTol = 1e-5;
constexpr double kComposedTol = 1e-4;

TEST_CASE("elementwise binary op gradients") {
  Rng rng(1);
  auto a = random_tensor<double>({2, 3}, rng);
  auto b = random_tensor<double>({2, 3}, rng);

  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::add(a, b)); }, {a, b}) < kSingleTol);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::sub(a, b)); }, {a, b}) < kSingleTol);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::mul(a, b)); }, {a, b}) < kSingleTol);
}

TEST_CASE("scalar broadcast in binary ops") {
  Rng rng(2);
  auto a = random_tensor<double>({3, 4}, rng);
  auto s = T64::from_data({1}, {0.7}, true);

  auto y = o::mul(a, s);
  CHECK(y.shape() == Shape{3, 4});
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::mul(a, s)); }, {a, s}) < kSingleTol);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::add(s, a)); }, {a, s}) < kSingleTol);
}

TEST_CASE("unary op gradients") {
  Rng rng(3);
  auto x = random_tensor<double>({2, 5}, rng, -2.0, 2.0);

  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::sigmoid(x)); }, {x}) < kSingleTol);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::tanh(x)); }, {x}) < kSingleTol);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::one_minus(x)); }, {x}) < kSingleTol);

  // keep samples away from the kink at 0
  auto y = random_tensor<double>({2, 5}, rng, 0.1, 1.0);
  for (size_t i = 0; i < y.data().size(); i += 2) y.data()[i] *= -1.0;
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::leaky_relu(y, 0.2)); }, {y}) <
        kSingleTol);
}

TEST_CASE("normalized logit gradient inside the clip region") {
  Rng rng(4);
  auto x = random_tensor<double>({12}, rng, 0.1, 0.9);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::logit_normalized(x, 1e-3)); }, {x}) <
        kSingleTol);
}

TEST_CASE("normalized logit clips with zero gradient outside") {
  auto x = T64::from_data({3}, {0.0, 0.5, 1.0}, true);
  auto y = o::logit_normalized(x, 1e-3);
  CHECK(y.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.data()[2] == doctest::Approx(1.0).epsilon(1e-12));

  backward(o::reduce_sum(y));
  CHECK(x.grad()[0] == 0.0);  // clipped at eps
  CHECK(x.grad()[1] > 0.0);
  CHECK(x.grad()[2] == 0.0);  // clipped at 1 - eps
}

TEST_CASE("conv2d gradients, stride 1 and 2") {
  Rng rng(5);
  for (int64_t stride : {int64_t(1), int64_t(2)}) {
    auto in = random_tensor<double>({2, 3, 5, 6}, rng);
    auto k = random_tensor<double>({4, 3, 3, 3}, rng);
    auto b = random_tensor<double>({4}, rng);
    auto f = [&] { return o::reduce_sum(o::conv2d(in, k, b, stride, 1)); };
    CHECK(max_grad_error<double>(f, {in, k, b}) < kSingleTol);
  }
}

TEST_CASE("conv2d 1x1 gradients") {
  Rng rng(6);
  auto in = random_tensor<double>({1, 3, 4, 4}, rng);
  auto k = random_tensor<double>({2, 3, 1, 1}, rng);
  auto b = random_tensor<double>({2}, rng);
  auto f = [&] { return o::reduce_sum(o::conv2d(in, k, b, 1, 0)); };
  CHECK(max_grad_error<double>(f, {in, k, b}) < kSingleTol);
}

TEST_CASE("conv2d with identity kernel reproduces the input") {
  Rng rng(7);
  auto in = random_tensor<double>({2, 3, 4, 5}, rng);
  auto k = T64::zeros({3, 3, 1, 1});
  for (int64_t c = 0; c < 3; ++c) k.data()[c * 3 + c] = 1.0;
  auto b = T64::zeros({3});
  auto y = o::conv2d(in, k, b, 1, 0);
  REQUIRE(y.shape() == in.shape());
  for (size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == in.data()[i]);
}

TEST_CASE("conv2d matches a naive loop nest") {
  Rng rng(8);
  auto in = random_tensor<double>({2, 3, 6, 7}, rng, -1.0, 1.0, false);
  auto k = random_tensor<double>({4, 3, 3, 3}, rng, -1.0, 1.0, false);
  auto b = random_tensor<double>({4}, rng, -1.0, 1.0, false);
  auto y = o::conv2d(in, k, b, 1, 1);
  auto ref = testutil::naive_conv2d<double>({in.data().begin(), in.data().end()},
                                            {k.data().begin(), k.data().end()},
                                            {b.data().begin(), b.data().end()}, 2, 3, 6, 7, 4, 3, 1);
  REQUIRE(y.data().size() == ref.size());
  for (size_t i = 0; i < ref.size(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("bilinear upsample gradients") {
  Rng rng(9);
  auto in = random_tensor<double>({1, 2, 4, 4}, rng);
  auto f = [&] { return o::reduce_sum(o::bilinear_upsample2x(in)); };
  CHECK(max_grad_error<double>(f, {in}) < kSingleTol);
  CHECK(o::bilinear_upsample2x(in).shape() == Shape{1, 2, 8, 8});
}

TEST_CASE("concat and slice gradients") {
  Rng rng(10);
  auto a = random_tensor<double>({2, 2, 3, 3}, rng);
  auto b = random_tensor<double>({2, 3, 3, 3}, rng);

  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::concat_channels(a, b)); }, {a, b}) <
        kSingleTol);
  CHECK(max_grad_error<double>(
            [&] { return o::reduce_sum(o::slice_channels(o::concat_channels(a, b), 1, 4)); },
            {a, b}) < kSingleTol);

  std::vector<T64> parts = {a, b, a};
  auto cat3 = o::concat_channels(std::span<const T64>(parts.data(), parts.size()));
  CHECK(cat3.shape() == Shape{2, 7, 3, 3});
}

TEST_CASE("reduction gradients") {
  Rng rng(11);
  auto x = random_tensor<double>({2, 3, 2, 2}, rng);
  CHECK(max_grad_error<double>([&] { return o::reduce_mean(x); }, {x}) < kSingleTol);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(x); }, {x}) < kSingleTol);

  auto mask = T64::zeros({2, 3, 2, 2});
  Rng mrng(12);
  for (auto& m : mask.data()) m = mrng.uniform() < 0.5 ? 0.0 : 1.0;
  mask.data()[0] = 1.0;  // keep the mask non-empty
  CHECK(max_grad_error<double>([&] { return o::reduce_mean(x, mask); }, {x}) < kSingleTol);
}

TEST_CASE("masked mean ignores masked-out elements") {
  auto x = T64::from_data({4}, {1.0, 100.0, 3.0, 100.0}, true);
  auto mask = T64::from_data({4}, {1.0, 0.0, 1.0, 0.0});
  CHECK(o::reduce_mean(x, mask).item() == doctest::Approx(2.0).epsilon(1e-12));

  auto empty = T64::zeros({4});
  CHECK_THROWS_AS((void)o::reduce_mean(x, empty), std::invalid_argument);
}

TEST_CASE("time slice and stack gradients") {
  Rng rng(13);
  auto x = random_tensor<double>({2, 3, 2, 2, 2}, rng);
  CHECK(max_grad_error<double>([&] { return o::reduce_sum(o::time_slice(x, 1)); }, {x}) <
        kSingleTol);

  auto f0 = random_tensor<double>({2, 1, 2, 2}, rng);
  auto f1 = random_tensor<double>({2, 1, 2, 2}, rng);
  auto stack_loss = [&] {
    std::vector<T64> frames = {f0, f1};
    auto st = o::time_stack(std::span<const T64>(frames.data(), frames.size()));
    return o::reduce_sum(o::mul(st, st));
  };
  CHECK(max_grad_error<double>(stack_loss, {f0, f1}) < kSingleTol);

  std::vector<T64> frames = {f0, f1};
  CHECK(o::time_stack(std::span<const T64>(frames.data(), frames.size())).shape() ==
        Shape{2, 2, 1, 2, 2});
}

TEST_CASE("per-channel broadcast gradients") {
  Rng rng(14);
  auto c = random_tensor<double>({3}, rng);
  auto f = [&] {
    auto y = o::broadcast_channels(c, 2, 4, 4);
    return o::reduce_sum(o::mul(y, y));
  };
  CHECK(o::broadcast_channels(c, 2, 4, 4).shape() == Shape{2, 3, 4, 4});
  CHECK(max_grad_error<double>(f, {c}) < kSingleTol);
}

TEST_CASE("composed graph gradient") {
  // conv -> leaky -> upsample -> elementwise blend -> masked mean, all in one
  // tape; tolerance is looser because errors compound across ops.
  Rng rng(15);
  auto in = random_tensor<double>({1, 2, 4, 4}, rng);
  auto k = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto gate = random_tensor<double>({1, 3, 8, 8}, rng);

  auto f = [&] {
    auto y = o::leaky_relu(o::conv2d(in, k, b, 1, 1), 0.2);
    auto up = o::bilinear_upsample2x(y);
    auto g = o::sigmoid(gate);
    auto blended = o::add(o::mul(g, up), o::mul(o::one_minus(g), o::tanh(up)));
    return o::reduce_mean(blended);
  };
  CHECK(max_grad_error<double>(f, {in, k, b, gate}) < kComposedTol);
}

TEST_CASE("gradients accumulate across multiple uses") {
  auto x = T64::from_data({2}, {1.0, 2.0}, true);
  auto y = o::reduce_sum(o::add(x, x));
  backward(y);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);

  // a second backward without zeroing accumulates again
  auto y2 = o::reduce_sum(x);
  backward(y2);
  CHECK(x.grad()[0] == 3.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard suspends taping") {
  auto x = T64::from_data({2}, {1.0, 2.0}, true);
  {
    NoGradGuard inference;
    auto y = o::mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK_FALSE(grad_enabled());
  }
  CHECK(grad_enabled());
}

TEST_CASE("backward rejects bad roots") {
  auto x = T64::from_data({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(o::mul(x, x)), std::invalid_argument);  // non-scalar

  auto frozen = T64::from_data({1}, {3.0});
  CHECK_THROWS_AS(backward(frozen), std::invalid_argument);  // nothing requires grad
}

TEST_CASE("shape mismatches throw") {
  auto a = T64::zeros({2, 3});
  auto b = T64::zeros({3, 2});
  CHECK_THROWS_AS((void)o::add(a, b), std::invalid_argument);

  auto in = T64::zeros({1, 2, 4, 4});
  auto k = T64::zeros({2, 3, 3, 3});  // cin mismatch
  auto bias = T64::zeros({2});
  CHECK_THROWS_AS((void)o::conv2d(in, k, bias, 1, 1), std::invalid_argument);
}

TEST_CASE("saturating activations stay finite at extreme inputs") {
  auto x = T64::from_data({4}, {-1e4, -30.0, 30.0, 1e4});
  // bind the results: iterating f(x).data() directly would walk a span into
  // an already-destroyed temporary
  const auto sig = o::sigmoid(x);
  for (double v : sig.data()) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto th = o::tanh(x);
  for (double v : th.data()) {
    CHECK(std::isfinite(v));
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}
