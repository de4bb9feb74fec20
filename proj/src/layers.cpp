#include "nowcast/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace nowcast {

namespace {

template <typename T>
TensorT<T> uniform_init(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return TensorT<T>::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
Conv2dLayer<T>::Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride, Rng& rng)
    : stride(stride), padding((k - 1) / 2) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  kernel = uniform_init<T>({cout, cin, k, k}, bound, rng);
  bias = uniform_init<T>({cout}, bound, rng);
}

template <typename T>
TensorT<T> Conv2dLayer<T>::forward(const TensorT<T>& x) const {
  return ops::conv2d(x, kernel, bias, stride, padding);
}

template <typename T>
void Conv2dLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
ResidualBlock<T>::ResidualBlock(int64_t cin, int64_t cout, int64_t k, int64_t stride, Rng& rng)
    : conv1(cin, cout, k, stride, rng),
      conv2(cout, cout, k, 1, rng),
      has_shortcut(stride != 1 || cin != cout) {
  if (has_shortcut) shortcut = Conv2dLayer<T>(cin, cout, 1, stride, rng);
}

template <typename T>
TensorT<T> ResidualBlock<T>::forward(const TensorT<T>& x) const {
  if (conv1.stride == 2) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0) {
      throw std::invalid_argument("ResidualBlock: stride-2 block needs even spatial extents, got " +
                                  shape_str(s));
    }
  }
  auto main = conv2.forward(ops::leaky_relu(conv1.forward(x), slope));
  auto skip = has_shortcut ? shortcut.forward(x) : x;
  return ops::leaky_relu(ops::add(main, skip), slope);
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  if (has_shortcut) shortcut.collect(prefix + ".shortcut", out);
}

template <typename T>
ConvGRUCell<T>::ConvGRUCell(int64_t cx, int64_t ch, int64_t k, Rng& rng)
    : gate_z(cx + ch, ch, k, 1, rng),
      gate_r(cx + ch, ch, k, 1, rng),
      gate_h(cx + ch, ch, k, 1, rng) {}

template <typename T>
ResGRUCell<T>::ResGRUCell(int64_t cx, int64_t ch, int64_t k, Rng& rng)
    : gate_z(cx + ch, ch, k, 1, rng),
      gate_r(cx + ch, ch, k, 1, rng),
      gate_h(cx + ch, ch, k, 1, rng) {}

template <typename T>
GruCell<T> GruCell<T>::conv_gru(int64_t cx, int64_t ch, int64_t k, Rng& rng) {
  GruCell<T> cell;
  cell.impl = ConvGRUCell<T>(cx, ch, k, rng);
  return cell;
}

template <typename T>
GruCell<T> GruCell<T>::res_gru(int64_t cx, int64_t ch, int64_t k, Rng& rng) {
  GruCell<T> cell;
  cell.impl = ResGRUCell<T>(cx, ch, k, rng);
  return cell;
}

namespace {

template <typename T, typename Gate>
TensorT<T> gru_arithmetic(const Gate& gate_z, const Gate& gate_r, const Gate& gate_h,
                          const TensorT<T>& x, const TensorT<T>& h) {
  auto xh = ops::concat_channels(x, h);
  auto z = ops::sigmoid(gate_z.forward(xh));
  auto r = ops::sigmoid(gate_r.forward(xh));
  auto n = ops::tanh(gate_h.forward(ops::concat_channels(x, ops::mul(r, h))));
  return ops::add(ops::mul(ops::one_minus(z), h), ops::mul(z, n));
}

}  // namespace

template <typename T>
TensorT<T> GruCell<T>::step(const TensorT<T>& x, const TensorT<T>& h) const {
  return std::visit(
      [&](const auto& cell) {
        return gru_arithmetic<T>(cell.gate_z, cell.gate_r, cell.gate_h, x, h);
      },
      impl);
}

template <typename T>
void GruCell<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  std::visit(
      [&](const auto& cell) {
        cell.gate_z.collect(prefix + ".z", out);
        cell.gate_r.collect(prefix + ".r", out);
        cell.gate_h.collect(prefix + ".n", out);
      },
      impl);
}

template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template struct ConvGRUCell<float>;
template struct ConvGRUCell<double>;
template struct ResGRUCell<float>;
template struct ResGRUCell<double>;
template struct GruCell<float>;
template struct GruCell<double>;

}  // namespace nowcast
