#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nowcast {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  uint64_t seq = 0;  // creation order; the implicit tape is topologically
                     // ordered by it
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Dense row-major tensor with reverse-mode automatic differentiation.
/// A TensorT is a cheap handle; copies share storage. Values are immutable
/// after an operation creates them, except for the grad buffer which the
/// backward pass accumulates into. 4-D tensors are (batch, channel, height,
/// width); 5-D adds a time axis after batch.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, T value, bool requires_grad = false);
  static TensorT scalar(T value) { return full({1}, value); }
  static TensorT from_data(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }

  bool requires_grad() const { return node_->requires_grad; }
  /// Marks a leaf tensor as trainable. Must be called before the tensor is
  /// used in tracked operations.
  void set_requires_grad(bool v);

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  }

  /// Value of a 1-element tensor.
  T item() const;

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

  static TensorT adopt(std::shared_ptr<TensorNode<T>> n) {
    TensorT t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = TensorT<float>;

/// While alive, operations do not record the graph (inference mode).
/// Thread-local; a tape belongs to a single thread of execution.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Runs the reverse pass from a scalar loss. Gradients accumulate (sum) into
/// every reachable tensor with requires_grad, including across multiple uses
/// of the same tensor. The graph stays alive as long as the participating
/// tensors do; calling backward again without zeroing grads accumulates a
/// second time.
template <typename T>
void backward(const TensorT<T>& loss);

namespace ops {

// All operations validate shapes and throw std::invalid_argument on
// mismatch. Elementwise binary operations require identical shapes, except
// that either side may be a 1-element scalar tensor.

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T>
TensorT<T> tanh(const TensorT<T>& x);
template <typename T>
TensorT<T> one_minus(const TensorT<T>& x);
template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T negative_slope);

/// Truncated normalized logit: (L(clip(x, eps, 1-eps)) - L(eps)) / (L(1-eps) - L(eps))
/// with L(p) = ln(p/(1-p)). Fixes 0, 0.5 and 1; gradient is zero outside the
/// clip region.
template <typename T>
TensorT<T> logit_normalized(const TensorT<T>& x, T eps);

/// Same-padded convolution over 4-D input [B,Cin,H,W] with kernel
/// [Cout,Cin,k,k]; requires k odd, stride in {1,2}, padding == (k-1)/2.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int64_t stride, int64_t padding);

template <typename T>
TensorT<T> bilinear_upsample2x(const TensorT<T>& input);

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> concat_channels(std::span<const TensorT<T>> parts);
/// Channels [begin, end) of a 4-D tensor.
template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int64_t begin, int64_t end);

/// Mean over all elements -> 1-element tensor.
template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x);
/// Masked mean: sum(x*mask)/sum(mask). mask holds {0,1}, is not
/// differentiated, and must not be all zero.
template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x, const TensorT<T>& mask);
template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x);

/// Selects index t of the second axis: [B,T,rest...] -> [B,rest...].
template <typename T>
TensorT<T> time_slice(const TensorT<T>& x, int64_t t);
/// Stacks equal-shaped [B,rest...] frames into [B,T,rest...].
template <typename T>
TensorT<T> time_stack(std::span<const TensorT<T>> frames);

/// Expands a per-channel vector [C] to [B,C,H,W]; gradient sums back per
/// channel.
template <typename T>
TensorT<T> broadcast_channels(const TensorT<T>& per_channel, int64_t batch, int64_t h, int64_t w);

}  // namespace ops

}  // namespace nowcast
