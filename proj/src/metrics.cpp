#include "nowcast/metrics.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace nowcast {

namespace {

const std::string kVariableNames[] = {"temperature", "crr_intensity", "asii_turb_trop_prob",
                                      "cma"};
const std::string kMetricNames[] = {"mse", "masked_mse", "logit_mse", "quantized_mse"};

void check_lengths(size_t a, size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch, " + std::to_string(a) +
                                " vs " + std::to_string(b));
  }
  if (a == 0) throw std::invalid_argument(std::string(what) + ": empty input");
}

}  // namespace

const std::string& variable_name(Variable v) { return kVariableNames[static_cast<int>(v)]; }

Variable variable_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (kVariableNames[i] == name) return static_cast<Variable>(i);
  }
  throw std::invalid_argument("unknown variable \"" + name +
                              "\"; expected temperature, crr_intensity, asii_turb_trop_prob or "
                              "cma");
}

std::vector<Variable> all_variables() {
  return {Variable::temperature, Variable::crr_intensity, Variable::asii_prob, Variable::cma};
}

const std::string& metric_name(MetricKind k) { return kMetricNames[static_cast<int>(k)]; }

MetricKind eval_metric_for(Variable v) {
  switch (v) {
    case Variable::temperature:
      return MetricKind::masked_mse;
    case Variable::crr_intensity:
      return MetricKind::mse;
    case Variable::asii_prob:
      return MetricKind::logit_mse;
    case Variable::cma:
      return MetricKind::quantized_mse;
  }
  throw std::logic_error("unreachable");
}

MetricKind train_loss_for(Variable v) {
  // The rounded metric has no gradient; its variable trains on the raw MSE.
  return v == Variable::cma ? MetricKind::mse : eval_metric_for(v);
}

double mse(std::span<const double> pred, std::span<const double> target) {
  check_lengths(pred.size(), target.size(), "mse");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double masked_mse(std::span<const double> pred, std::span<const double> target,
                  std::span<const double> mask) {
  check_lengths(pred.size(), target.size(), "masked_mse");
  check_lengths(pred.size(), mask.size(), "masked_mse");
  double acc = 0.0, msum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d * mask[i];
    msum += mask[i];
  }
  if (msum == 0.0) throw std::invalid_argument("masked_mse: mask selects no elements");
  return acc / msum;
}

double logit_normalized_scalar(double x, double eps) {
  if (!(eps > 0.0) || !(eps < 0.5)) {
    throw std::invalid_argument("logit: eps must lie in (0, 0.5)");
  }
  double c = x;
  if (c < eps) c = eps;
  if (c > 1.0 - eps) c = 1.0 - eps;
  const double le = std::log(eps / (1.0 - eps));
  return (std::log(c / (1.0 - c)) - le) / (-2.0 * le);
}

double logit_mse(std::span<const double> pred, std::span<const double> target, double eps) {
  check_lengths(pred.size(), target.size(), "logit_mse");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = logit_normalized_scalar(pred[i], eps) - logit_normalized_scalar(target[i], eps);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double quantized_mse(std::span<const double> pred, std::span<const double> target) {
  check_lengths(pred.size(), target.size(), "quantized_mse");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = (pred[i] >= 0.5 ? 1.0 : 0.0) - (target[i] >= 0.5 ? 1.0 : 0.0);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

template <typename T>
TensorT<T> loss_tensor(MetricKind kind, const TensorT<T>& pred, const TensorT<T>& target,
                       const TensorT<T>& mask, T eps) {
  switch (kind) {
    case MetricKind::mse: {
      auto d = ops::sub(pred, target);
      return ops::reduce_mean(ops::mul(d, d));
    }
    case MetricKind::masked_mse: {
      if (!mask.defined()) throw std::invalid_argument("masked_mse loss needs a mask");
      auto d = ops::sub(pred, target);
      return ops::reduce_mean(ops::mul(d, d), mask);
    }
    case MetricKind::logit_mse: {
      auto d = ops::sub(ops::logit_normalized(pred, eps), ops::logit_normalized(target, eps));
      return ops::reduce_mean(ops::mul(d, d));
    }
    case MetricKind::quantized_mse:
      throw std::invalid_argument("quantized_mse has no gradient; train with mse instead");
  }
  throw std::logic_error("unreachable");
}

template TensorT<float> loss_tensor<float>(MetricKind, const TensorT<float>&,
                                           const TensorT<float>&, const TensorT<float>&, float);
template TensorT<double> loss_tensor<double>(MetricKind, const TensorT<double>&,
                                             const TensorT<double>&, const TensorT<double>&,
                                             double);

EvalResult evaluate_archive(const FrameArchive& a, Variable v, const Predictor& predict,
                            int64_t tin, int64_t tout, int64_t batch_size, double eps) {
  a.validate();
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be positive");
  const int64_t target_channel = channel_index(a, variable_name(v));
  if (target_channel >= a.channels) {
    throw std::invalid_argument("evaluate: \"" + variable_name(v) + "\" is a static channel");
  }
  const MetricKind kind = eval_metric_for(v);
  const auto starts = window_starts(a, tin + tout);
  if (starts.empty()) {
    throw std::invalid_argument("evaluate: archive holds no gapless window of " +
                                std::to_string(tin + tout) + " frames");
  }

  const int64_t cin = a.channels + a.statics;
  const int64_t h = a.height, w = a.width;
  double acc = 0.0, count = 0.0;
  for (size_t pos = 0; pos < starts.size(); pos += static_cast<size_t>(batch_size)) {
    const int64_t b =
        std::min<int64_t>(batch_size, static_cast<int64_t>(starts.size() - pos));
    Tensor inputs = Tensor::zeros({b, tin, cin, h, w});
    Tensor target = Tensor::zeros({b, tout, 1, h, w});
    Tensor mask = Tensor::zeros({b, tout, 1, h, w});
    for (int64_t i = 0; i < b; ++i) {
      const auto s = make_window(a, starts[pos + static_cast<size_t>(i)], tin, tout,
                                 target_channel, AugmentOp{});
      std::copy(s.inputs.data().begin(), s.inputs.data().end(),
                inputs.data().begin() + i * s.inputs.size());
      std::copy(s.target.data().begin(), s.target.data().end(),
                target.data().begin() + i * s.target.size());
      std::copy(s.target_mask.data().begin(), s.target_mask.data().end(),
                mask.data().begin() + i * s.target_mask.size());
    }
    const Tensor pred = predict(inputs);
    if (!pred.defined() || pred.shape() != target.shape()) {
      throw std::invalid_argument("evaluate: predictor returned shape " +
                                  (pred.defined() ? shape_str(pred.shape()) : "(undefined)") +
                                  ", expected " + shape_str(target.shape()));
    }
    const auto P = pred.data();
    const auto G = target.data();
    const auto M = mask.data();
    for (size_t i = 0; i < P.size(); ++i) {
      double p = P[i], t = G[i];
      double wt = 1.0;
      switch (kind) {
        case MetricKind::mse:
          break;
        case MetricKind::masked_mse:
          wt = M[i];
          break;
        case MetricKind::logit_mse:
          p = logit_normalized_scalar(p, eps);
          t = logit_normalized_scalar(t, eps);
          break;
        case MetricKind::quantized_mse:
          p = p >= 0.5 ? 1.0 : 0.0;
          t = t >= 0.5 ? 1.0 : 0.0;
          break;
      }
      const double d = p - t;
      acc += d * d * wt;
      count += wt;
    }
  }
  if (count == 0.0) throw std::invalid_argument("evaluate: mask selects no pixels");

  EvalResult r;
  r.variable = v;
  r.kind = kind;
  r.value = acc / count;
  r.eps = kind == MetricKind::logit_mse ? eps : 0.0;
  r.windows = static_cast<int64_t>(starts.size());
  return r;
}

void write_report(std::ostream& os, const std::vector<EvalResult>& results) {
  os << "variable\tmetric\tvalue\teps\twindows\n";
  const auto old_precision = os.precision(12);
  for (const auto& r : results) {
    os << variable_name(r.variable) << '\t' << metric_name(r.kind) << '\t' << r.value << '\t'
       << r.eps << '\t' << r.windows << '\n';
  }
  os.precision(old_precision);
}

}  // namespace nowcast
