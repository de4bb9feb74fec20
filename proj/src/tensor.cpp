#include "nowcast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "nowcast/kernels.hpp"

namespace nowcast {

namespace {

std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;

uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode<T>>();
  n->data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  n->seq = next_seq();
  return adopt(std::move(n));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t.node()->data.begin(), t.node()->data.end(), value);
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_str(shape));
  }
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  n->seq = next_seq();
  return adopt(std::move(n));
}

template <typename T>
void TensorT<T>::set_requires_grad(bool v) {
  if (node_->backward_fn) {
    throw std::logic_error("requires_grad can only be toggled on leaf tensors");
  }
  node_->requires_grad = v;
}

template <typename T>
T TensorT<T>::item() const {
  if (!defined() || size() != 1) {
    throw std::logic_error("item() needs a defined 1-element tensor");
  }
  return node_->data[0];
}

template <typename T>
void backward(const TensorT<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a 1-element tensor");
  }
  TensorNode<T>* root = loss.node();
  if (!root->requires_grad) {
    throw std::invalid_argument("backward: loss is not connected to any trainable tensor");
  }
  // Every interior node carries a seq greater than all of its parents', so
  // descending seq is a topological order of the reachable graph.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen{root};
  std::vector<TensorNode<T>*> stack{root};
  while (!stack.empty()) {
    TensorNode<T>* n = stack.back();
    stack.pop_back();
    if (n->backward_fn) order.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](TensorNode<T>* a, TensorNode<T>* b) { return a->seq > b->seq; });
  root->ensure_grad();
  root->grad[0] += T(1);
  for (TensorNode<T>* n : order) {
    if (n->grad.empty()) continue;
    n->backward_fn(*n);
  }
}

namespace ops {

namespace {

// Builds the result node; records parents and the backward closure only when
// grad mode is on and some parent participates in differentiation.
template <typename T>
TensorT<T> finish(Shape shape, std::vector<T> data,
                  std::vector<std::shared_ptr<TensorNode<T>>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->seq = next_seq();
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const auto& p : parents) {
      if (p->requires_grad) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return TensorT<T>::adopt(std::move(n));
}

template <typename T>
void check_binary(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!a.defined() || !b.defined()) {
    throw std::invalid_argument(std::string(op) + ": undefined operand");
  }
  if (a.shape() != b.shape() && a.size() != 1 && b.size() != 1) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void check_defined(const TensorT<T>& x, const char* op) {
  if (!x.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_binary(a, b, "add");
  const bool sa = a.size() == 1, sb = b.size() == 1;
  const auto A = a.data(), B = b.data();
  const size_t n = std::max(A.size(), B.size());
  std::vector<T> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = A[sa ? 0 : i] + B[sb ? 0 : i];
  Shape shape = sa && !sb ? b.shape() : a.shape();
  return finish<T>(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                   [sa, sb](TensorNode<T>& self) {
                     for (int side = 0; side < 2; ++side) {
                       TensorNode<T>* p = self.parents[static_cast<size_t>(side)].get();
                       if (!p->requires_grad) continue;
                       p->ensure_grad();
                       const bool scalar = side == 0 ? sa : sb;
                       if (scalar) {
                         T acc = T(0);
                         for (T g : self.grad) acc += g;
                         p->grad[0] += acc;
                       } else {
                         for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
                       }
                     }
                   });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  check_binary(a, b, "sub");
  const bool sa = a.size() == 1, sb = b.size() == 1;
  const auto A = a.data(), B = b.data();
  const size_t n = std::max(A.size(), B.size());
  std::vector<T> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = A[sa ? 0 : i] - B[sb ? 0 : i];
  Shape shape = sa && !sb ? b.shape() : a.shape();
  return finish<T>(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                   [sa, sb](TensorNode<T>& self) {
                     for (int side = 0; side < 2; ++side) {
                       TensorNode<T>* p = self.parents[static_cast<size_t>(side)].get();
                       if (!p->requires_grad) continue;
                       p->ensure_grad();
                       const T sign = side == 0 ? T(1) : T(-1);
                       const bool scalar = side == 0 ? sa : sb;
                       if (scalar) {
                         T acc = T(0);
                         for (T g : self.grad) acc += g;
                         p->grad[0] += sign * acc;
                       } else {
                         for (size_t i = 0; i < self.grad.size(); ++i) {
                           p->grad[i] += sign * self.grad[i];
                         }
                       }
                     }
                   });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_binary(a, b, "mul");
  const bool sa = a.size() == 1, sb = b.size() == 1;
  const auto A = a.data(), B = b.data();
  const size_t n = std::max(A.size(), B.size());
  std::vector<T> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = A[sa ? 0 : i] * B[sb ? 0 : i];
  Shape shape = sa && !sb ? b.shape() : a.shape();
  return finish<T>(std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                   [sa, sb](TensorNode<T>& self) {
                     TensorNode<T>* pa = self.parents[0].get();
                     TensorNode<T>* pb = self.parents[1].get();
                     if (pa->requires_grad) {
                       pa->ensure_grad();
                       if (sa) {
                         T acc = T(0);
                         for (size_t i = 0; i < self.grad.size(); ++i) {
                           acc += self.grad[i] * pb->data[sb ? 0 : i];
                         }
                         pa->grad[0] += acc;
                       } else {
                         for (size_t i = 0; i < self.grad.size(); ++i) {
                           pa->grad[i] += self.grad[i] * pb->data[sb ? 0 : i];
                         }
                       }
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       if (sb) {
                         T acc = T(0);
                         for (size_t i = 0; i < self.grad.size(); ++i) {
                           acc += self.grad[i] * pa->data[sa ? 0 : i];
                         }
                         pb->grad[0] += acc;
                       } else {
                         for (size_t i = 0; i < self.grad.size(); ++i) {
                           pb->grad[i] += self.grad[i] * pa->data[sa ? 0 : i];
                         }
                       }
                     }
                   });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  check_defined(x, "sigmoid");
  const auto X = x.data();
  std::vector<T> out(X.size());
  for (size_t i = 0; i < X.size(); ++i) {
    const T v = X[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return finish<T>(x.shape(), std::move(out), {x.node_ptr()}, [](TensorNode<T>& self) {
    TensorNode<T>* p = self.parents[0].get();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.data[i];
      p->grad[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& x) {
  check_defined(x, "tanh");
  const auto X = x.data();
  std::vector<T> out(X.size());
  for (size_t i = 0; i < X.size(); ++i) out[i] = std::tanh(X[i]);
  return finish<T>(x.shape(), std::move(out), {x.node_ptr()}, [](TensorNode<T>& self) {
    TensorNode<T>* p = self.parents[0].get();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.data[i];
      p->grad[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
TensorT<T> one_minus(const TensorT<T>& x) {
  check_defined(x, "one_minus");
  const auto X = x.data();
  std::vector<T> out(X.size());
  for (size_t i = 0; i < X.size(); ++i) out[i] = T(1) - X[i];
  return finish<T>(x.shape(), std::move(out), {x.node_ptr()}, [](TensorNode<T>& self) {
    TensorNode<T>* p = self.parents[0].get();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
  });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T negative_slope) {
  check_defined(x, "leaky_relu");
  const auto X = x.data();
  std::vector<T> out(X.size());
  for (size_t i = 0; i < X.size(); ++i) out[i] = X[i] > T(0) ? X[i] : negative_slope * X[i];
  return finish<T>(x.shape(), std::move(out), {x.node_ptr()},
                   [negative_slope](TensorNode<T>& self) {
                     TensorNode<T>* p = self.parents[0].get();
                     if (!p->requires_grad) return;
                     p->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       p->grad[i] += self.grad[i] * (p->data[i] > T(0) ? T(1) : negative_slope);
                     }
                   });
}

template <typename T>
TensorT<T> logit_normalized(const TensorT<T>& x, T eps) {
  check_defined(x, "logit_normalized");
  if (!(eps > T(0)) || !(eps < T(0.5))) {
    throw std::invalid_argument("logit_normalized: eps must lie in (0, 0.5)");
  }
  const T le = std::log(eps / (T(1) - eps));
  const T denom = T(-2) * le;  // L(1-eps) - L(eps), since L(1-eps) = -L(eps)
  const auto X = x.data();
  std::vector<T> out(X.size());
  for (size_t i = 0; i < X.size(); ++i) {
    T c = X[i];
    if (c < eps) c = eps;
    if (c > T(1) - eps) c = T(1) - eps;
    out[i] = (std::log(c / (T(1) - c)) - le) / denom;
  }
  return finish<T>(x.shape(), std::move(out), {x.node_ptr()}, [eps, denom](TensorNode<T>& self) {
    TensorNode<T>* p = self.parents[0].get();
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const T v = p->data[i];
      if (v < eps || v > T(1) - eps) continue;
      p->grad[i] += self.grad[i] / (v * (T(1) - v) * denom);
    }
  });
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int64_t stride, int64_t padding) {
  check_defined(input, "conv2d");
  check_defined(kernel, "conv2d");
  check_defined(bias, "conv2d");
  if (input.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
  }
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,k,k], got " +
                                shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                " input channels, input has " + std::to_string(input.dim(1)));
  }
  const auto g = kernels::conv2d_geometry(input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                                          kernel.dim(0), kernel.dim(2), stride, padding);
  if (bias.rank() != 1 || bias.dim(0) != g.cout) {
    throw std::invalid_argument("conv2d: bias must be [Cout], got " + shape_str(bias.shape()));
  }
  Shape oshape{g.batch, g.cout, g.out_h, g.out_w};
  std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
  kernels::conv2d_forward(input.data().data(), kernel.data().data(), bias.data().data(),
                          out.data(), g);
  return finish<T>(std::move(oshape), std::move(out),
                   {input.node_ptr(), kernel.node_ptr(), bias.node_ptr()},
                   [g](TensorNode<T>& self) {
                     TensorNode<T>* in = self.parents[0].get();
                     TensorNode<T>* ker = self.parents[1].get();
                     TensorNode<T>* bi = self.parents[2].get();
                     if (in->requires_grad) {
                       in->ensure_grad();
                       kernels::conv2d_backward_input(ker->data.data(), self.grad.data(),
                                                      in->grad.data(), g);
                     }
                     if (ker->requires_grad || bi->requires_grad) {
                       ker->ensure_grad();
                       bi->ensure_grad();
                       kernels::conv2d_backward_params(in->data.data(), self.grad.data(),
                                                       ker->grad.data(), bi->grad.data(), g);
                     }
                   });
}

template <typename T>
TensorT<T> bilinear_upsample2x(const TensorT<T>& input) {
  check_defined(input, "bilinear_upsample2x");
  if (input.rank() != 4) {
    throw std::invalid_argument("bilinear_upsample2x: input must be [B,C,H,W], got " +
                                shape_str(input.shape()));
  }
  const int64_t planes = input.dim(0) * input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3);
  Shape oshape{input.dim(0), input.dim(1), 2 * h, 2 * w};
  std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
  kernels::upsample2x_forward(input.data().data(), out.data(), planes, h, w);
  return finish<T>(std::move(oshape), std::move(out), {input.node_ptr()},
                   [planes, h, w](TensorNode<T>& self) {
                     TensorNode<T>* p = self.parents[0].get();
                     if (!p->requires_grad) return;
                     p->ensure_grad();
                     kernels::upsample2x_backward(self.grad.data(), p->grad.data(), planes, h, w);
                   });
}

template <typename T>
TensorT<T> concat_channels(std::span<const TensorT<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no operands");
  for (const auto& p : parts) {
    check_defined(p, "concat_channels");
    if (p.rank() != 4) {
      throw std::invalid_argument("concat_channels: operands must be [B,C,H,W], got " +
                                  shape_str(p.shape()));
    }
    if (p.dim(0) != parts[0].dim(0) || p.dim(2) != parts[0].dim(2) ||
        p.dim(3) != parts[0].dim(3)) {
      throw std::invalid_argument("concat_channels: operands disagree outside the channel axis: " +
                                  shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
  }
  const int64_t b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int64_t ctotal = 0;
  for (const auto& p : parts) ctotal += p.dim(1);
  Shape oshape{b, ctotal, h, w};
  std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::vector<int64_t> chans;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    parents.push_back(p.node_ptr());
    chans.push_back(p.dim(1));
  }
  const int64_t plane = h * w;
  for (int64_t bi = 0; bi < b; ++bi) {
    T* dst = out.data() + bi * ctotal * plane;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const int64_t c = chans[pi];
      const T* src = parts[pi].data().data() + bi * c * plane;
      std::copy(src, src + c * plane, dst);
      dst += c * plane;
    }
  }
  return finish<T>(std::move(oshape), std::move(out), std::move(parents),
                   [b, ctotal, plane, chans](TensorNode<T>& self) {
                     for (int64_t bi = 0; bi < b; ++bi) {
                       const T* src = self.grad.data() + bi * ctotal * plane;
                       for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                         const int64_t c = chans[pi];
                         TensorNode<T>* p = self.parents[pi].get();
                         if (p->requires_grad) {
                           p->ensure_grad();
                           T* dst = p->grad.data() + bi * c * plane;
                           for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                         }
                         src += c * plane;
                       }
                     }
                   });
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  const TensorT<T> parts[2] = {a, b};
  return concat_channels(std::span<const TensorT<T>>(parts, 2));
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int64_t begin, int64_t end) {
  check_defined(x, "slice_channels");
  if (x.rank() != 4) {
    throw std::invalid_argument("slice_channels: input must be [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  if (begin < 0 || end <= begin || end > x.dim(1)) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") invalid for " +
                                std::to_string(x.dim(1)) + " channels");
  }
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t cs = end - begin, plane = h * w;
  Shape oshape{b, cs, h, w};
  std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
  for (int64_t bi = 0; bi < b; ++bi) {
    const T* src = x.data().data() + (bi * c + begin) * plane;
    std::copy(src, src + cs * plane, out.data() + bi * cs * plane);
  }
  return finish<T>(std::move(oshape), std::move(out), {x.node_ptr()},
                   [b, c, begin, cs, plane](TensorNode<T>& self) {
                     TensorNode<T>* p = self.parents[0].get();
                     if (!p->requires_grad) return;
                     p->ensure_grad();
                     for (int64_t bi = 0; bi < b; ++bi) {
                       const T* src = self.grad.data() + bi * cs * plane;
                       T* dst = p->grad.data() + (bi * c + begin) * plane;
                       for (int64_t i = 0; i < cs * plane; ++i) dst[i] += src[i];
                     }
                   });
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x) {
  check_defined(x, "reduce_mean");
  const auto X = x.data();
  if (X.empty()) throw std::invalid_argument("reduce_mean: empty tensor");
  double acc = 0.0;
  for (T v : X) acc += static_cast<double>(v);
  const double inv_n = 1.0 / static_cast<double>(X.size());
  std::vector<T> out{static_cast<T>(acc * inv_n)};
  return finish<T>({1}, std::move(out), {x.node_ptr()}, [inv_n](TensorNode<T>& self) {
    TensorNode<T>* p = self.parents[0].get();
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T coef = self.grad[0] * static_cast<T>(inv_n);
    for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += coef;
  });
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x, const TensorT<T>& mask) {
  check_defined(x, "reduce_mean");
  check_defined(mask, "reduce_mean");
  if (x.shape() != mask.shape()) {
    throw std::invalid_argument("reduce_mean: mask shape " + shape_str(mask.shape()) +
                                " does not match " + shape_str(x.shape()));
  }
  if (mask.requires_grad()) {
    throw std::invalid_argument("reduce_mean: mask is a weighting, it cannot require grad");
  }
  const auto X = x.data();
  const auto M = mask.data();
  double acc = 0.0, msum = 0.0;
  for (size_t i = 0; i < X.size(); ++i) {
    acc += static_cast<double>(X[i]) * static_cast<double>(M[i]);
    msum += static_cast<double>(M[i]);
  }
  if (msum == 0.0) throw std::invalid_argument("reduce_mean: mask selects no elements");
  const double inv_m = 1.0 / msum;
  std::vector<T> out{static_cast<T>(acc * inv_m)};
  return finish<T>({1}, std::move(out), {x.node_ptr(), mask.node_ptr()},
                   [inv_m](TensorNode<T>& self) {
                     TensorNode<T>* p = self.parents[0].get();
                     if (!p->requires_grad) return;
                     p->ensure_grad();
                     const TensorNode<T>* m = self.parents[1].get();
                     const T coef = self.grad[0] * static_cast<T>(inv_m);
                     for (size_t i = 0; i < p->grad.size(); ++i) {
                       p->grad[i] += coef * m->data[i];
                     }
                   });
}

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x) {
  check_defined(x, "reduce_sum");
  const auto X = x.data();
  double acc = 0.0;
  for (T v : X) acc += static_cast<double>(v);
  std::vector<T> out{static_cast<T>(acc)};
  return finish<T>({1}, std::move(out), {x.node_ptr()}, [](TensorNode<T>& self) {
    TensorNode<T>* p = self.parents[0].get();
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T g = self.grad[0];
    for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
  });
}

template <typename T>
TensorT<T> time_slice(const TensorT<T>& x, int64_t t) {
  check_defined(x, "time_slice");
  if (x.rank() < 3) {
    throw std::invalid_argument("time_slice: input must be [B,T,...], got " +
                                shape_str(x.shape()));
  }
  const int64_t b = x.dim(0), steps = x.dim(1);
  if (t < 0 || t >= steps) {
    throw std::invalid_argument("time_slice: index " + std::to_string(t) + " out of " +
                                std::to_string(steps) + " steps");
  }
  Shape oshape;
  oshape.push_back(b);
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) {
    oshape.push_back(x.dim(i));
    inner *= x.dim(i);
  }
  std::vector<T> out(static_cast<size_t>(b * inner));
  for (int64_t bi = 0; bi < b; ++bi) {
    const T* src = x.data().data() + (bi * steps + t) * inner;
    std::copy(src, src + inner, out.data() + bi * inner);
  }
  return finish<T>(std::move(oshape), std::move(out), {x.node_ptr()},
                   [b, steps, t, inner](TensorNode<T>& self) {
                     TensorNode<T>* p = self.parents[0].get();
                     if (!p->requires_grad) return;
                     p->ensure_grad();
                     for (int64_t bi = 0; bi < b; ++bi) {
                       const T* src = self.grad.data() + bi * inner;
                       T* dst = p->grad.data() + (bi * steps + t) * inner;
                       for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                     }
                   });
}

template <typename T>
TensorT<T> time_stack(std::span<const TensorT<T>> frames) {
  if (frames.empty()) throw std::invalid_argument("time_stack: no frames");
  for (const auto& f : frames) {
    check_defined(f, "time_stack");
    if (f.rank() < 2 || f.shape() != frames[0].shape()) {
      throw std::invalid_argument("time_stack: frames must share one [B,...] shape");
    }
  }
  const int64_t b = frames[0].dim(0);
  const int64_t steps = static_cast<int64_t>(frames.size());
  const int64_t inner = frames[0].size() / b;
  Shape oshape;
  oshape.push_back(b);
  oshape.push_back(steps);
  for (int i = 1; i < frames[0].rank(); ++i) oshape.push_back(frames[0].dim(i));
  std::vector<T> out(static_cast<size_t>(b * steps * inner));
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  parents.reserve(frames.size());
  for (const auto& f : frames) parents.push_back(f.node_ptr());
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t t = 0; t < steps; ++t) {
      const T* src = frames[static_cast<size_t>(t)].data().data() + bi * inner;
      std::copy(src, src + inner, out.data() + (bi * steps + t) * inner);
    }
  }
  return finish<T>(std::move(oshape), std::move(out), std::move(parents),
                   [b, steps, inner](TensorNode<T>& self) {
                     for (int64_t t = 0; t < steps; ++t) {
                       TensorNode<T>* p = self.parents[static_cast<size_t>(t)].get();
                       if (!p->requires_grad) continue;
                       p->ensure_grad();
                       for (int64_t bi = 0; bi < b; ++bi) {
                         const T* src = self.grad.data() + (bi * steps + t) * inner;
                         T* dst = p->grad.data() + bi * inner;
                         for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

template <typename T>
TensorT<T> broadcast_channels(const TensorT<T>& per_channel, int64_t batch, int64_t h, int64_t w) {
  check_defined(per_channel, "broadcast_channels");
  if (per_channel.rank() != 1) {
    throw std::invalid_argument("broadcast_channels: input must be [C], got " +
                                shape_str(per_channel.shape()));
  }
  if (batch < 1 || h < 1 || w < 1) {
    throw std::invalid_argument("broadcast_channels: extents must be positive");
  }
  const int64_t c = per_channel.dim(0), plane = h * w;
  Shape oshape{batch, c, h, w};
  std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
  for (int64_t bi = 0; bi < batch; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      T* dst = out.data() + (bi * c + ci) * plane;
      std::fill(dst, dst + plane, per_channel.data()[static_cast<size_t>(ci)]);
    }
  }
  return finish<T>(std::move(oshape), std::move(out), {per_channel.node_ptr()},
                   [batch, c, plane](TensorNode<T>& self) {
                     TensorNode<T>* p = self.parents[0].get();
                     if (!p->requires_grad) return;
                     p->ensure_grad();
                     std::vector<T> acc(static_cast<size_t>(c), T(0));
                     for (int64_t bi = 0; bi < batch; ++bi) {
                       for (int64_t ci = 0; ci < c; ++ci) {
                         const T* src = self.grad.data() + (bi * c + ci) * plane;
                         T s = T(0);
                         for (int64_t i = 0; i < plane; ++i) s += src[i];
                         acc[static_cast<size_t>(ci)] += s;
                       }
                     }
                     for (int64_t ci = 0; ci < c; ++ci) {
                       p->grad[static_cast<size_t>(ci)] += acc[static_cast<size_t>(ci)];
                     }
                   });
}

}  // namespace ops

template class TensorT<float>;
template class TensorT<double>;
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

#define NOWCAST_INSTANTIATE_OPS(T)                                                              \
  template TensorT<T> ops::add<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> ops::sub<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> ops::mul<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> ops::sigmoid<T>(const TensorT<T>&);                                       \
  template TensorT<T> ops::tanh<T>(const TensorT<T>&);                                          \
  template TensorT<T> ops::one_minus<T>(const TensorT<T>&);                                     \
  template TensorT<T> ops::leaky_relu<T>(const TensorT<T>&, T);                                 \
  template TensorT<T> ops::logit_normalized<T>(const TensorT<T>&, T);                           \
  template TensorT<T> ops::conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                     int64_t, int64_t);                                         \
  template TensorT<T> ops::bilinear_upsample2x<T>(const TensorT<T>&);                           \
  template TensorT<T> ops::concat_channels<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> ops::concat_channels<T>(std::span<const TensorT<T>>);                     \
  template TensorT<T> ops::slice_channels<T>(const TensorT<T>&, int64_t, int64_t);              \
  template TensorT<T> ops::reduce_mean<T>(const TensorT<T>&);                                   \
  template TensorT<T> ops::reduce_mean<T>(const TensorT<T>&, const TensorT<T>&);                \
  template TensorT<T> ops::reduce_sum<T>(const TensorT<T>&);                                    \
  template TensorT<T> ops::time_slice<T>(const TensorT<T>&, int64_t);                           \
  template TensorT<T> ops::time_stack<T>(std::span<const TensorT<T>>);                          \
  template TensorT<T> ops::broadcast_channels<T>(const TensorT<T>&, int64_t, int64_t, int64_t);

NOWCAST_INSTANTIATE_OPS(float)
NOWCAST_INSTANTIATE_OPS(double)

#undef NOWCAST_INSTANTIATE_OPS

}  // namespace nowcast
