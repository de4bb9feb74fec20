#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "nowcast/model.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/tensor.hpp"
#include "testutil.hpp"

using namespace nowcast;
using testutil::random_tensor;

namespace {

// Closed-form parameter count, written from the layer definitions rather
// than by walking the model's parameter list.
int64_t conv_params(int64_t cin, int64_t cout, int64_t k) { return cout * cin * k * k + cout; }

int64_t block_params(int64_t cin, int64_t cout, int64_t k, bool shortcut) {
  int64_t n = conv_params(cin, cout, k) + conv_params(cout, cout, k);
  if (shortcut) n += conv_params(cin, cout, 1);
  return n;
}

int64_t gate_params(const ModelConfig& cfg, int64_t cx, int64_t ch) {
  if (cfg.variant == "resgru") {
    // gate blocks always project (cx + ch != ch), so the shortcut is present
    return block_params(cx + ch, ch, cfg.gru_kernel, true);
  }
  return conv_params(cx + ch, ch, cfg.gru_kernel);
}

int64_t expected_params(const ModelConfig& cfg) {
  const auto& ch = cfg.stage_channels;
  const int64_t depth = cfg.depth();
  int64_t n = 0;
  for (int64_t d = 0; d < depth; ++d) {
    const int64_t cin = d == 0 ? cfg.input_channels : ch[d - 1];
    n += block_params(cin, ch[d], cfg.block_kernel, true);  // stride 2 forces a shortcut
    n += 3 * gate_params(cfg, ch[d], ch[d]);                // encoder recurrence
  }
  for (int64_t d = 0; d < depth; ++d) n += conv_params(ch[d], ch[d], cfg.block_kernel);
  n += ch[depth - 1];  // learned constant driving the deepest stage
  for (int64_t d = 0; d < depth; ++d) n += 3 * gate_params(cfg, ch[d], ch[d]);
  for (int64_t d = 0; d < depth; ++d) {
    const int64_t cout = d == 0 ? ch[0] : ch[d - 1];
    n += block_params(ch[d], cout, cfg.block_kernel, ch[d] != cout);  // stride 1
  }
  n += conv_params(ch[0], cfg.output_channels, 1);
  return n;
}

ModelConfig small_config(const std::string& variant, int64_t depth) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.stage_channels.assign(static_cast<size_t>(depth), 4);
  for (int64_t d = 1; d < depth; ++d) cfg.stage_channels[static_cast<size_t>(d)] = 8;
  cfg.input_frames = 2;
  cfg.output_frames = 3;
  cfg.input_channels = 3;
  return cfg;
}

}  // namespace

TEST_CASE("parameter count matches the closed-form formula") {
  for (const char* variant : {"convgru", "resgru"}) {
    for (int64_t depth : {int64_t(1), int64_t(2), int64_t(3)}) {
      ModelConfig cfg = small_config(variant, depth);
      CAPTURE(variant);
      CAPTURE(depth);
      EncoderForecaster<float> model(cfg, 1);
      CHECK(model.parameter_count() == expected_params(cfg));
    }
  }
}

TEST_CASE("default configurations land on the documented weight counts") {
  ModelConfig conv;  // defaults: [32,64,128,256] stages, 7 input channels
  conv.variant = "convgru";
  ModelConfig res = conv;
  res.variant = "resgru";

  const int64_t conv_n = expected_params(conv);
  const int64_t res_n = expected_params(res);
  CHECK(conv_n == 12047233);
  CHECK(res_n == 17797633);
  CHECK(EncoderForecaster<float>(conv, 1).parameter_count() == conv_n);
  CHECK(EncoderForecaster<float>(res, 1).parameter_count() == res_n);

  // anchors: within 20% of 12.1M / 18.6M
  CHECK(std::abs(static_cast<double>(conv_n) - 12.1e6) / 12.1e6 < 0.20);
  CHECK(std::abs(static_cast<double>(res_n) - 18.6e6) / 18.6e6 < 0.20);
}

TEST_CASE("forward maps input windows to forecast windows") {
  ModelConfig cfg = small_config("convgru", 2);
  EncoderForecaster<float> model(cfg, 3);
  auto out = model.forward(Tensor::zeros({2, 2, 3, 16, 16}));
  CHECK(out.shape() == Shape{2, 3, 1, 16, 16});

  SUBCASE("outputs lie strictly inside (0, 1)") {
    Rng rng(4);
    auto in = random_tensor<float>({1, 2, 3, 16, 16}, rng, 0.0, 1.0, false);
    auto y = model.forward(in);
    for (float v : y.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("forward rejects wrong geometry") {
  ModelConfig cfg = small_config("convgru", 2);
  EncoderForecaster<float> model(cfg, 5);
  CHECK_THROWS_AS((void)model.forward(Tensor::zeros({1, 3, 3, 16, 16})),
                  std::invalid_argument);  // wrong frame count
  CHECK_THROWS_AS((void)model.forward(Tensor::zeros({1, 2, 4, 16, 16})),
                  std::invalid_argument);  // wrong channel count
  CHECK_THROWS_AS((void)model.forward(Tensor::zeros({1, 2, 3, 18, 16})),
                  std::invalid_argument);  // 18 not divisible by 2^depth
  CHECK_THROWS_AS((void)model.forward(Tensor::zeros({2, 3, 16, 16})),
                  std::invalid_argument);  // rank 4
}

TEST_CASE("depth-4 model needs extents divisible by 16") {
  ModelConfig cfg = small_config("convgru", 4);
  EncoderForecaster<float> model(cfg, 6);
  CHECK(model.forward(Tensor::zeros({1, 2, 3, 32, 48})).shape() == Shape{1, 3, 1, 32, 48});
  CHECK_THROWS_AS((void)model.forward(Tensor::zeros({1, 2, 3, 8, 8})), std::invalid_argument);
}

TEST_CASE("construction is a pure function of config and seed") {
  ModelConfig cfg = small_config("resgru", 2);
  EncoderForecaster<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    const auto da = pa[i].tensor.data(), db = pb[i].tensor.data(), dc = pc[i].tensor.data();
    all_equal = all_equal &&
                std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) == 0;
    for (size_t j = 0; j < da.size(); ++j) any_diff_seed = any_diff_seed || da[j] != dc[j];
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("parameter names are unique and ordered stably") {
  ModelConfig cfg = small_config("resgru", 2);
  EncoderForecaster<float> model(cfg, 7);
  auto params = model.named_parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    for (size_t j = 0; j < i; ++j) CHECK(params[i].name != params[j].name);
  }
  // stage prefixes all present
  auto has_prefix = [&](const std::string& prefix) {
    for (const auto& p : params) {
      if (p.name.rfind(prefix, 0) == 0) return true;
    }
    return false;
  };
  for (const char* prefix : {"encoder.block0", "encoder.gru1", "bridge0", "forecaster.seed",
                             "forecaster.gru0", "forecaster.block1", "head"}) {
    CAPTURE(prefix);
    CHECK(has_prefix(prefix));
  }
}

TEST_CASE("every parameter receives gradient from a single training step") {
  for (const char* variant : {"convgru", "resgru"}) {
    CAPTURE(variant);
    ModelConfig cfg = small_config(variant, 2);
    EncoderForecaster<float> model(cfg, 8);

    Rng rng(9);
    auto in = random_tensor<float>({2, 2, 3, 16, 16}, rng, 0.0, 1.0, false);
    auto target = random_tensor<float>({2, 3, 1, 16, 16}, rng, 0.0, 1.0, false);
    auto pred = model.forward(in);
    auto diff = ops::sub(pred, target);
    backward(ops::reduce_mean(ops::mul(diff, diff)));

    for (const auto& p : model.named_parameters()) {
      CAPTURE(p.name);
      REQUIRE(p.tensor.has_grad());
      bool any_nonzero = false;
      for (float g : p.tensor.grad()) any_nonzero = any_nonzero || g != 0.0f;
      CHECK(any_nonzero);
    }
  }
}

TEST_CASE("encoder states steer the forecast") {
  // Zeroing the bridge convolutions cuts the encoder off from the forecaster,
  // so the prediction must stop depending on the input frames.
  ModelConfig cfg = small_config("convgru", 2);
  EncoderForecaster<float> model(cfg, 10);

  Rng rng(11);
  auto in_a = random_tensor<float>({1, 2, 3, 16, 16}, rng, 0.0, 1.0, false);
  auto in_b = random_tensor<float>({1, 2, 3, 16, 16}, rng, 0.0, 1.0, false);

  auto max_diff = [&] {
    auto ya = model.forward(in_a);
    auto yb = model.forward(in_b);
    float worst = 0.0f;
    for (size_t i = 0; i < ya.data().size(); ++i) {
      worst = std::max(worst, std::abs(ya.data()[i] - yb.data()[i]));
    }
    return worst;
  };

  CHECK(max_diff() > 1e-4f);  // normally the input matters

  for (const auto& p : model.named_parameters()) {
    if (p.name.rfind("bridge", 0) == 0) {
      auto t = p.tensor;
      for (auto& v : t.data()) v = 0.0f;
    }
  }
  CHECK(max_diff() == 0.0f);
}
