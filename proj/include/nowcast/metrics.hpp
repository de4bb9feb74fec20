#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nowcast/data.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

enum class Variable { temperature, crr_intensity, asii_prob, cma };

/// Archive channel names: "temperature", "crr_intensity",
/// "asii_turb_trop_prob", "cma".
const std::string& variable_name(Variable v);
Variable variable_from_name(const std::string& name);  // throws on unknown
std::vector<Variable> all_variables();

enum class MetricKind { mse, masked_mse, logit_mse, quantized_mse };

const std::string& metric_name(MetricKind k);

/// Evaluation (and model-selection) metric per variable: temperature uses
/// the validity mask, the probability product compares normalized logits,
/// and the binary mask product is rounded to {0,1} first.
MetricKind eval_metric_for(Variable v);
/// Training loss per variable: as above, except the binary mask product
/// trains against the raw sigmoid output with plain MSE.
MetricKind train_loss_for(Variable v);

// Scalar metric implementations over flat arrays. All throw
// std::invalid_argument on length mismatch or (masked) when the mask selects
// nothing.
double mse(std::span<const double> pred, std::span<const double> target);
double masked_mse(std::span<const double> pred, std::span<const double> target,
                  std::span<const double> mask);
/// Both operands through the truncated normalized logit, then MSE.
double logit_mse(std::span<const double> pred, std::span<const double> target, double eps);
/// Both operands rounded to {0,1} (>= 0.5 rounds to 1), then MSE.
double quantized_mse(std::span<const double> pred, std::span<const double> target);

double logit_normalized_scalar(double x, double eps);

/// Differentiable training loss. mask is only consulted for masked_mse;
/// quantized_mse has no gradient and is rejected.
template <typename T>
TensorT<T> loss_tensor(MetricKind kind, const TensorT<T>& pred, const TensorT<T>& target,
                       const TensorT<T>& mask, T eps);

/// Maps a batch of input windows [B,Tin,C,H,W] to predictions
/// [B,Tout,1,H,W].
using Predictor = std::function<Tensor(const Tensor&)>;

struct EvalResult {
  Variable variable;
  MetricKind kind;
  double value = 0.0;
  double eps = 0.0;  // logit truncation; 0 when unused
  int64_t windows = 0;
};

/// Runs the predictor over every window of the archive (in order, no
/// augmentation) and pools the squared errors across all windows and pixels.
EvalResult evaluate_archive(const FrameArchive& a, Variable v, const Predictor& predict,
                            int64_t tin, int64_t tout, int64_t batch_size, double eps);

/// Tab-separated report, one line per result:
/// variable, metric, value, eps, windows.
void write_report(std::ostream& os, const std::vector<EvalResult>& results);

}  // namespace nowcast
