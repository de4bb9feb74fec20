#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nowcast/data.hpp"
#include "nowcast/layers.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"

namespace nowcast {

/// Adam with bias correction. Moments live in the optimizer, parallel to the
/// parameter list; parameters whose grad buffer is absent at step() time are
/// left untouched.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamList<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  const ParamList<T>& params() const { return params_; }
  const std::vector<T>& moment1(size_t i) const { return m_[i]; }
  const std::vector<T>& moment2(size_t i) const { return v_[i]; }
  void set_moments(size_t i, std::vector<T> m, std::vector<T> v);

 private:
  ParamList<T> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

/// Scales all gradients in place so their global L2 norm does not exceed
/// max_norm (no-op when it already doesn't, or when max_norm is 0). Returns
/// the pre-clip norm.
template <typename T>
double clip_global_norm(const ParamList<T>& params, double max_norm);

/// Tracks the best validation metric seen so far. A non-improving epoch
/// increments one stale counter shared by the two rules: every `patience`
/// consecutive stale epochs the learning rate is multiplied by `factor`, and
/// at `stop_after` stale epochs training stops. Only strict improvement
/// resets the counter.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int64_t patience, int64_t stop_after);

  struct Decision {
    bool improved = false;
    bool decayed = false;
    bool stop = false;
  };

  /// Feeds one epoch's validation metric; lr is updated in place.
  Decision observe(double metric, double& lr);

  double best() const { return best_; }
  int64_t stale() const { return stale_; }
  bool stopped() const { return stopped_; }
  void restore(double best, int64_t stale, bool stopped);

 private:
  double factor_;
  int64_t patience_;
  int64_t stop_after_;
  double best_;
  int64_t stale_ = 0;
  bool stopped_ = false;
};

struct TrainOptions {
  Variable variable = Variable::temperature;
  uint64_t seed = 0;
  int64_t batch_size = 32;
  double lr = 1e-3;
  double lr_factor = 0.2;
  int64_t patience = 3;
  int64_t stop_after = 10;
  int64_t max_epochs = -1;  // < 0: run until the scheduler stops
  double max_hours = -1.0;  // < 0: no wall-clock budget
  bool augment = true;
  double logit_eps = 1e-3;
  double clip_norm = 0.0;  // > 0: clip gradients to this global L2 norm

  void validate() const;
  std::string to_json() const;
  /// Parses a JSON object; every key is optional, unknown keys are an error.
  /// `variable` is parsed by name.
  static TrainOptions from_json(const std::string& text);
};

struct EpochStats {
  int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  bool checkpointed = false;
};

struct TrainResult {
  std::vector<EpochStats> history;  // this run only (excludes resumed epochs)
  double best_metric = 0.0;
  int64_t epochs_done = 0;  // total, including resumed epochs
  bool stopped = false;     // scheduler stop (not budget exhaustion)
};

/// Trains the model on train_data, validating each epoch on val_data with
/// the variable's selection metric. Writes <out_dir>/last.ckpt every epoch
/// and <out_dir>/best.ckpt on strict improvement; when <out_dir>/last.ckpt
/// already exists, training resumes from it and reproduces the uninterrupted
/// run exactly. Per-epoch lines go to `log` when given.
TrainResult train(EncoderForecaster<float>& model, const FrameArchive& train_data,
                  const FrameArchive& val_data, const TrainOptions& opt,
                  const std::string& out_dir, std::ostream* log);

/// Tab-separated history rows: epoch, train_loss, val_metric, lr,
/// checkpointed. No header, so resumed runs can append.
void write_history(std::ostream& os, const std::vector<EpochStats>& history);

}  // namespace nowcast
