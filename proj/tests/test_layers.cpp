#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "nowcast/layers.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/tensor.hpp"
#include "testutil.hpp"

using namespace nowcast;
using testutil::naive_conv2d;
using testutil::random_tensor;
using testutil::sigmoid_scalar;

using T64 = TensorT<double>;
using Vec = std::vector<double>;

namespace {

Vec values(const TensorT<double>& t) { return {t.data().begin(), t.data().end()}; }

Vec find(const ParamList<double>& params, const std::string& name) {
  for (const auto& p : params) {
    if (p.name == name) return values(p.tensor);
  }
  FAIL("missing parameter ", name);
  return {};
}

// Straight-loop oracle for one recurrent step, written against the layer
// equations rather than the library graph. `gate` maps a concatenated input
// [cu, h, w] to the gate pre-activation [ch, h, w].
using GateFn = std::function<Vec(const Vec&, int64_t cu, int64_t h, int64_t w)>;

Vec gru_step_oracle(const GateFn& fz, const GateFn& fr, const GateFn& fh, const Vec& x,
                    const Vec& h, int64_t cx, int64_t ch, int64_t hh, int64_t ww) {
  const size_t plane = static_cast<size_t>(hh * ww);
  const size_t hn = static_cast<size_t>(ch) * plane;
  Vec xh(x);
  xh.insert(xh.end(), h.begin(), h.end());

  Vec z = fz(xh, cx + ch, hh, ww);
  Vec r = fr(xh, cx + ch, hh, ww);
  for (auto& v : z) v = sigmoid_scalar(v);
  for (auto& v : r) v = sigmoid_scalar(v);

  Vec xrh(x);
  xrh.resize(x.size() + hn);
  for (size_t i = 0; i < hn; ++i) xrh[x.size() + i] = r[i] * h[i];
  Vec n = fh(xrh, cx + ch, hh, ww);
  for (auto& v : n) v = std::tanh(v);

  Vec out(hn);
  for (size_t i = 0; i < hn; ++i) out[i] = (1.0 - z[i]) * h[i] + z[i] * n[i];
  return out;
}

// Oracle for a stride-1 residual gate block: leaky(conv2(leaky(conv1(u))) + shortcut(u)).
Vec res_block_oracle(const ParamList<double>& p, const std::string& prefix, const Vec& u,
                     int64_t cu, int64_t ch, int64_t k, int64_t hh, int64_t ww) {
  auto leaky = [](Vec v) {
    for (auto& x : v)
      if (x < 0.0) x *= 0.2;
    return v;
  };
  Vec mid = leaky(naive_conv2d(u, find(p, prefix + ".conv1.kernel"),
                               find(p, prefix + ".conv1.bias"), 1, cu, hh, ww, ch, k, 1));
  Vec main = naive_conv2d(mid, find(p, prefix + ".conv2.kernel"), find(p, prefix + ".conv2.bias"),
                          1, ch, hh, ww, ch, k, 1);
  Vec skip = naive_conv2d(u, find(p, prefix + ".shortcut.kernel"),
                          find(p, prefix + ".shortcut.bias"), 1, cu, hh, ww, ch, 1, 1);
  for (size_t i = 0; i < main.size(); ++i) main[i] += skip[i];
  return leaky(main);
}

void check_close(const Vec& got, const Vec& want, double tol) {
  REQUIRE(got.size() == want.size());
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  CHECK(worst < tol);
}

}  // namespace

TEST_CASE("conv layer applies same padding and recorded stride") {
  Rng rng(1);
  Conv2dLayer<double> layer(3, 5, 3, 2, rng);
  CHECK(layer.padding == 1);
  auto y = layer.forward(T64::zeros({2, 3, 8, 8}));
  CHECK(y.shape() == Shape{2, 5, 4, 4});
  // zero input leaves only the bias, replicated across each output plane
  for (int64_t co = 0; co < 5; ++co) {
    CHECK(y.data()[co * 16] == layer.bias.data()[co]);
  }
}

TEST_CASE("residual block matches a straight-loop oracle") {
  Rng rng(2);
  const int64_t cu = 5, ch = 3, k = 3, hh = 4, ww = 4;
  ResidualBlock<double> block(cu, ch, k, 1, rng);
  REQUIRE(block.has_shortcut);
  ParamList<double> p;
  block.collect("b", p);

  Rng drng(3);
  auto u = random_tensor<double>({1, cu, hh, ww}, drng, -1.0, 1.0, false);
  const Vec want = res_block_oracle(p, "b", values(u), cu, ch, k, hh, ww);
  check_close(values(block.forward(u)), want, 1e-12);
}

TEST_CASE("residual block without channel or stride change passes values through zero weights") {
  Rng rng(4);
  ResidualBlock<double> block(3, 3, 3, 1, rng);
  CHECK_FALSE(block.has_shortcut);
  for (auto* conv : {&block.conv1, &block.conv2}) {
    for (auto& v : conv->kernel.data()) v = 0.0;
    for (auto& v : conv->bias.data()) v = 0.0;
  }
  Rng drng(5);
  auto x = random_tensor<double>({2, 3, 4, 4}, drng, 0.0, 1.0, false);
  auto y = block.forward(x);
  // main path contributes zero; final leaky is exact on non-negative input
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("stride-2 residual block rejects odd extents") {
  Rng rng(6);
  ResidualBlock<float> block(2, 4, 3, 2, rng);
  CHECK_THROWS_AS((void)block.forward(Tensor::zeros({1, 2, 5, 6})), std::invalid_argument);
  CHECK_THROWS_AS((void)block.forward(Tensor::zeros({1, 2, 6, 5})), std::invalid_argument);
  CHECK(block.forward(Tensor::zeros({1, 2, 6, 6})).shape() == Shape{1, 4, 3, 3});
}

TEST_CASE("conv-gated recurrent step matches the oracle") {
  Rng rng(7);
  const int64_t cx = 3, ch = 2, k = 3, hh = 4, ww = 4;
  auto cell = GruCell<double>::conv_gru(cx, ch, k, rng);
  ParamList<double> p;
  cell.collect("g", p);

  auto conv_gate = [&](const std::string& gate) {
    return GateFn([&p, gate, ch, k](const Vec& u, int64_t cu, int64_t h, int64_t w) {
      return naive_conv2d(u, find(p, "g." + gate + ".kernel"), find(p, "g." + gate + ".bias"), 1,
                          cu, h, w, ch, k, 1);
    });
  };

  Rng drng(8);
  auto x = random_tensor<double>({1, cx, hh, ww}, drng, -1.0, 1.0, false);
  auto h = random_tensor<double>({1, ch, hh, ww}, drng, -1.0, 1.0, false);
  const Vec want = gru_step_oracle(conv_gate("z"), conv_gate("r"), conv_gate("n"), values(x),
                                   values(h), cx, ch, hh, ww);
  check_close(values(cell.step(x, h)), want, 1e-12);
}

TEST_CASE("residual-gated recurrent step matches the oracle") {
  Rng rng(9);
  const int64_t cx = 2, ch = 2, k = 3, hh = 4, ww = 4;
  auto cell = GruCell<double>::res_gru(cx, ch, k, rng);
  ParamList<double> p;
  cell.collect("g", p);

  auto block_gate = [&](const std::string& gate) {
    return GateFn([&p, gate, ch, k](const Vec& u, int64_t cu, int64_t h, int64_t w) {
      return res_block_oracle(p, "g." + gate, u, cu, ch, k, h, w);
    });
  };

  Rng drng(10);
  auto x = random_tensor<double>({1, cx, hh, ww}, drng, -1.0, 1.0, false);
  auto h = random_tensor<double>({1, ch, hh, ww}, drng, -1.0, 1.0, false);
  const Vec want = gru_step_oracle(block_gate("z"), block_gate("r"), block_gate("n"), values(x),
                                   values(h), cx, ch, hh, ww);
  check_close(values(cell.step(x, h)), want, 1e-12);

  // the residual-gated variant carries strictly more parameters than the
  // conv-gated one at the same geometry
  auto conv_cell = GruCell<double>::conv_gru(cx, ch, k, rng);
  ParamList<double> cp;
  conv_cell.collect("g", cp);
  CHECK(param_count(p) > param_count(cp));
}

TEST_CASE("closed update gate preserves the hidden state across 32 steps") {
  Rng rng(11);
  const int64_t cx = 3, ch = 2, hh = 4, ww = 4;

  auto drive = [&](GruCell<float>& cell) {
    Rng drng(12);
    auto h0 = random_tensor<float>({1, ch, hh, ww}, drng, -0.5, 0.5, false);
    Tensor h = h0;
    for (int step = 0; step < 32; ++step) {
      auto x = random_tensor<float>({1, cx, hh, ww}, drng, -1.0, 1.0, false);
      h = cell.step(x, h);
    }
    double worst = 0.0;
    for (size_t i = 0; i < h.data().size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(h.data()[i] - h0.data()[i])));
    }
    return worst;
  };

  SUBCASE("conv-gated") {
    auto cell = GruCell<float>::conv_gru(cx, ch, 3, rng);
    auto& z = std::get<ConvGRUCell<float>>(cell.impl).gate_z;
    for (auto& b : z.bias.data()) b = -40.0f;  // saturates sigmoid to ~0
    CHECK(drive(cell) < 1e-6);
  }

  SUBCASE("residual-gated") {
    auto cell = GruCell<float>::res_gru(cx, ch, 3, rng);
    auto& z = std::get<ResGRUCell<float>>(cell.impl).gate_z;
    // Zero every path through the gate block, then push its output far
    // negative with the last conv's bias; the final leaky scales it by 0.2.
    for (auto* conv : {&z.conv1, &z.conv2, &z.shortcut}) {
      for (auto& v : conv->kernel.data()) v = 0.0f;
      for (auto& v : conv->bias.data()) v = 0.0f;
    }
    for (auto& b : z.conv2.bias.data()) b = -200.0f;
    CHECK(drive(cell) < 1e-6);
  }
}

TEST_CASE("open update gate with closed reset gate forgets the hidden state") {
  Rng rng(13);
  auto cell = GruCell<float>::conv_gru(2, 2, 3, rng);
  auto& impl = std::get<ConvGRUCell<float>>(cell.impl);
  for (auto& b : impl.gate_z.bias.data()) b = 40.0f;   // z ~ 1: output is the candidate
  for (auto& b : impl.gate_r.bias.data()) b = -40.0f;  // r ~ 0: candidate ignores h

  Rng drng(14);
  auto x = random_tensor<float>({1, 2, 4, 4}, drng, -1.0, 1.0, false);
  auto ha = random_tensor<float>({1, 2, 4, 4}, drng, -1.0, 1.0, false);
  auto hb = random_tensor<float>({1, 2, 4, 4}, drng, -1.0, 1.0, false);
  auto ya = cell.step(x, ha);
  auto yb = cell.step(x, hb);
  for (size_t i = 0; i < ya.data().size(); ++i) {
    CHECK(std::abs(ya.data()[i] - yb.data()[i]) < 1e-5f);
    CHECK(std::abs(ya.data()[i]) <= 1.0f);  // tanh-bounded candidate
  }
}

TEST_CASE("gate gradients flow through a recurrent step") {
  Rng rng(15);
  auto cell = GruCell<double>::res_gru(2, 2, 3, rng);
  ParamList<double> p;
  cell.collect("g", p);

  Rng drng(16);
  auto x = random_tensor<double>({1, 2, 4, 4}, drng);
  auto h = random_tensor<double>({1, 2, 4, 4}, drng);
  auto f = [&] {
    auto h1 = cell.step(x, h);
    auto h2 = cell.step(x, h1);
    return ops::reduce_mean(ops::mul(h2, h2));
  };
  std::vector<T64> leaves = {x, h};
  for (const auto& np : p) leaves.push_back(np.tensor);
  CHECK(testutil::max_grad_error<double>(f, leaves) < 1e-4);
}
