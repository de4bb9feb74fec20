#pragma once

#include <string>
#include <variant>
#include <vector>

#include "nowcast/rng.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

template <typename T>
struct NamedParam {
  std::string name;
  TensorT<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
int64_t param_count(const ParamList<T>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

/// Same-padded square convolution; weights drawn uniform from
/// +-1/sqrt(cin*k*k).
template <typename T>
struct Conv2dLayer {
  TensorT<T> kernel;  // [cout, cin, k, k]
  TensorT<T> bias;    // [cout]
  int64_t stride = 1;
  int64_t padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride, Rng& rng);

  TensorT<T> forward(const TensorT<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// conv(k, stride) -> leaky(0.2) -> conv(k, 1), plus the input through a 1x1
/// shortcut convolution when the stride or channel count changes, then a
/// final leaky(0.2) after the sum. No normalization layers.
template <typename T>
struct ResidualBlock {
  Conv2dLayer<T> conv1;
  Conv2dLayer<T> conv2;
  Conv2dLayer<T> shortcut;
  bool has_shortcut = false;
  T slope = T(0.2);

  ResidualBlock() = default;
  ResidualBlock(int64_t cin, int64_t cout, int64_t k, int64_t stride, Rng& rng);

  TensorT<T> forward(const TensorT<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// Gates are plain convolutions (cx+ch) -> ch.
template <typename T>
struct ConvGRUCell {
  Conv2dLayer<T> gate_z, gate_r, gate_h;

  ConvGRUCell() = default;
  ConvGRUCell(int64_t cx, int64_t ch, int64_t k, Rng& rng);
};

/// Gates are stride-1 residual blocks (cx+ch) -> ch.
template <typename T>
struct ResGRUCell {
  ResidualBlock<T> gate_z, gate_r, gate_h;

  ResGRUCell() = default;
  ResGRUCell(int64_t cx, int64_t ch, int64_t k, Rng& rng);
};

/// One recurrent cell. Both variants share the gate arithmetic
///   z = sigmoid(f_z([x, h]))
///   r = sigmoid(f_r([x, h]))
///   n = tanh(f_h([x, r .* h]))
///   h' = (1 - z) .* h + z .* n
/// and differ only in what f_* is: a single convolution (ConvGRU) or a
/// residual block (ResGRU).
template <typename T>
struct GruCell {
  std::variant<ConvGRUCell<T>, ResGRUCell<T>> impl;

  static GruCell conv_gru(int64_t cx, int64_t ch, int64_t k, Rng& rng);
  static GruCell res_gru(int64_t cx, int64_t ch, int64_t k, Rng& rng);

  TensorT<T> step(const TensorT<T>& x, const TensorT<T>& h) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

extern template struct Conv2dLayer<float>;
extern template struct Conv2dLayer<double>;
extern template struct ResidualBlock<float>;
extern template struct ResidualBlock<double>;
extern template struct ConvGRUCell<float>;
extern template struct ConvGRUCell<double>;
extern template struct ResGRUCell<float>;
extern template struct ResGRUCell<double>;
extern template struct GruCell<float>;
extern template struct GruCell<double>;

}  // namespace nowcast
