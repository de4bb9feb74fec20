#include "nowcast/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "nowcast/checkpoint.hpp"

namespace nowcast {

template <typename T>
Adam<T>::Adam(ParamList<T> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr_ > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(beta1_ >= 0.0 && beta1_ < 1.0) || !(beta2_ >= 0.0 && beta2_ < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.tensor.size()), T(0));
    v_.emplace_back(static_cast<size_t>(p.tensor.size()), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto d = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      if (!std::isfinite(gj)) {
        throw std::runtime_error("adam: non-finite gradient in \"" + params_[i].name +
                                 "\" at element " + std::to_string(j));
      }
      const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
      const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      d[j] -= static_cast<T>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Adam<T>::set_moments(size_t i, std::vector<T> m, std::vector<T> v) {
  if (m.size() != m_[i].size() || v.size() != v_[i].size()) {
    throw std::invalid_argument("adam: moment size mismatch for \"" + params_[i].name + "\"");
  }
  m_[i] = std::move(m);
  v_[i] = std::move(v);
}

template <typename T>
double clip_global_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      TensorT<T> t = p.tensor;  // handle copy; gradients live on the shared node
      if (!t.has_grad()) continue;
      for (T& g : t.grad()) g = static_cast<T>(static_cast<double>(g) * scale);
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_global_norm<float>(const ParamList<float>&, double);
template double clip_global_norm<double>(const ParamList<double>&, double);

PlateauScheduler::PlateauScheduler(double factor, int64_t patience, int64_t stop_after)
    : factor_(factor),
      patience_(patience),
      stop_after_(stop_after),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(factor_ > 0.0 && factor_ < 1.0)) {
    throw std::invalid_argument("scheduler: decay factor must lie in (0, 1)");
  }
  if (patience_ < 1 || stop_after_ < 1) {
    throw std::invalid_argument("scheduler: patience and stop_after must be positive");
  }
}

PlateauScheduler::Decision PlateauScheduler::observe(double metric, double& lr) {
  Decision d;
  if (stopped_) {
    d.stop = true;
    return d;
  }
  if (metric < best_) {  // strict; a NaN metric never counts as improvement
    best_ = metric;
    stale_ = 0;
    d.improved = true;
    return d;
  }
  ++stale_;
  if (stale_ % patience_ == 0) {
    lr *= factor_;
    d.decayed = true;
  }
  if (stale_ >= stop_after_) {
    stopped_ = true;
    d.stop = true;
  }
  return d;
}

void PlateauScheduler::restore(double best, int64_t stale, bool stopped) {
  best_ = best;
  stale_ = stale;
  stopped_ = stopped;
}

void TrainOptions::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) {
    throw std::invalid_argument("train config: lr_factor must lie in (0, 1)");
  }
  if (patience < 1 || stop_after < 1) {
    throw std::invalid_argument("train config: patience and stop_after must be positive");
  }
  if (!(logit_eps > 0.0 && logit_eps < 0.5)) {
    throw std::invalid_argument("train config: logit_eps must lie in (0, 0.5)");
  }
  if (clip_norm < 0.0) throw std::invalid_argument("train config: clip_norm must be >= 0");
}

std::string TrainOptions::to_json() const {
  nlohmann::json j;
  j["variable"] = variable_name(variable);
  j["seed"] = seed;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["lr_factor"] = lr_factor;
  j["patience"] = patience;
  j["stop_after"] = stop_after;
  j["max_epochs"] = max_epochs;
  j["max_hours"] = max_hours;
  j["augment"] = augment;
  j["logit_eps"] = logit_eps;
  j["clip_norm"] = clip_norm;
  return j.dump();
}

TrainOptions TrainOptions::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  TrainOptions opt;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "variable") {
        opt.variable = variable_from_name(value.get<std::string>());
      } else if (key == "seed") {
        opt.seed = value.get<uint64_t>();
      } else if (key == "batch_size") {
        opt.batch_size = value.get<int64_t>();
      } else if (key == "lr") {
        opt.lr = value.get<double>();
      } else if (key == "lr_factor") {
        opt.lr_factor = value.get<double>();
      } else if (key == "patience") {
        opt.patience = value.get<int64_t>();
      } else if (key == "stop_after") {
        opt.stop_after = value.get<int64_t>();
      } else if (key == "max_epochs") {
        opt.max_epochs = value.get<int64_t>();
      } else if (key == "max_hours") {
        opt.max_hours = value.get<double>();
      } else if (key == "augment") {
        opt.augment = value.get<bool>();
      } else if (key == "logit_eps") {
        opt.logit_eps = value.get<double>();
      } else if (key == "clip_norm") {
        opt.clip_norm = value.get<double>();
      } else {
        throw std::invalid_argument("train config: unknown key \"" + key + "\"");
      }
    }
  } catch (const nlohmann::json::type_error& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  opt.validate();
  return opt;
}

namespace {

Checkpoint snapshot(const EncoderForecaster<float>& model, const Adam<float>& adam,
                    const PlateauScheduler& sched, double lr, int64_t epochs_done,
                    double last_metric) {
  Checkpoint ck;
  ck.config_json = model.config().to_json();
  const auto& params = adam.params();
  ck.tensors = params;
  for (size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].tensor.shape();
    ck.tensors.push_back(
        {"adam.m." + params[i].name, Tensor::from_data(shape, adam.moment1(i))});
    ck.tensors.push_back(
        {"adam.v." + params[i].name, Tensor::from_data(shape, adam.moment2(i))});
  }
  ck.best_metric = sched.best();
  ck.lr = lr;
  ck.stale_epochs = static_cast<uint32_t>(sched.stale());
  ck.stopped = sched.stopped();
  ck.adam_steps = static_cast<uint64_t>(adam.step_count());
  ck.epochs_done = static_cast<uint32_t>(epochs_done);
  ck.last_metric = last_metric;
  return ck;
}

}  // namespace

TrainResult train(EncoderForecaster<float>& model, const FrameArchive& train_data,
                  const FrameArchive& val_data, const TrainOptions& opt,
                  const std::string& out_dir, std::ostream* log) {
  opt.validate();
  train_data.validate();
  val_data.validate();
  const ModelConfig& cfg = model.config();
  for (const FrameArchive* a : {&train_data, &val_data}) {
    if (a->channels + a->statics != cfg.input_channels) {
      throw std::invalid_argument(
          "train: archive provides " + std::to_string(a->channels + a->statics) +
          " channels per frame, model expects " + std::to_string(cfg.input_channels));
    }
  }
  const std::string& var_name = variable_name(opt.variable);
  const int64_t target_channel = channel_index(train_data, var_name);
  if (target_channel >= train_data.channels) {
    throw std::invalid_argument("train: \"" + var_name + "\" is a static channel");
  }
  const int64_t win_len = cfg.input_frames + cfg.output_frames;
  if (window_starts(train_data, win_len).empty()) {
    throw std::invalid_argument("train: training archive holds no gapless window of " +
                                std::to_string(win_len) + " frames");
  }

  Adam<float> adam(model.named_parameters(), opt.lr);
  PlateauScheduler sched(opt.lr_factor, opt.patience, opt.stop_after);
  double lr = opt.lr;
  int64_t epoch = 0;

  std::filesystem::create_directories(out_dir);
  const std::string last_path = out_dir + "/last.ckpt";
  const std::string best_path = out_dir + "/best.ckpt";
  bool fresh_run = true;
  if (std::filesystem::exists(last_path)) {
    fresh_run = false;
    const Checkpoint ck = load_checkpoint(last_path);
    if (ck.config_json != cfg.to_json()) {
      throw std::runtime_error("train: " + last_path +
                               " was written for a different model config; refusing to resume");
    }
    apply_weights(model, ck);
    const auto& params = adam.params();
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& m = find_tensor(ck, "adam.m." + params[i].name).tensor;
      const auto& v = find_tensor(ck, "adam.v." + params[i].name).tensor;
      adam.set_moments(i, {m.data().begin(), m.data().end()}, {v.data().begin(), v.data().end()});
    }
    adam.set_step_count(static_cast<int64_t>(ck.adam_steps));
    sched.restore(ck.best_metric, ck.stale_epochs, ck.stopped);
    lr = ck.lr;
    epoch = ck.epochs_done;
    if (log) {
      *log << "resuming from " << last_path << " after epoch " << epoch << " (best "
           << sched.best() << ")\n";
    }
  }
  adam.set_lr(lr);
  if (fresh_run) {
    // A zero-epoch budget still leaves a usable checkpoint of the seeded
    // initialization behind.
    save_checkpoint(last_path,
                    snapshot(model, adam, sched, lr, 0, std::numeric_limits<double>::infinity()));
  }

  const MetricKind train_kind = train_loss_for(opt.variable);
  const float run_eps = static_cast<float>(opt.logit_eps);
  const auto start_time = std::chrono::steady_clock::now();
  auto hours_elapsed = [&] {
    return std::chrono::duration<double, std::ratio<3600>>(std::chrono::steady_clock::now() -
                                                           start_time)
        .count();
  };

  TrainResult result;
  while (true) {
    if (sched.stopped()) {
      result.stopped = true;
      break;
    }
    if (opt.max_epochs >= 0 && epoch >= opt.max_epochs) break;
    if (opt.max_hours >= 0.0 && hours_elapsed() >= opt.max_hours) break;

    BatchIterator batches(train_data, cfg.input_frames, cfg.output_frames, target_channel,
                          opt.batch_size, opt.augment, Rng::for_epoch(opt.seed, epoch));
    double loss_sum = 0.0;
    int64_t batch_count = 0;
    while (auto b = batches.next()) {
      const Tensor pred = model.forward(b->inputs);
      const Tensor loss = loss_tensor(train_kind, pred, b->target, b->target_mask, run_eps);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        // Leave the checkpoints of completed epochs untouched so the run can
        // be restarted from the last good state.
        throw std::runtime_error("train: non-finite loss in epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batch_count + 1) + "; aborting");
      }
      adam.zero_grad();
      backward(loss);
      if (opt.clip_norm > 0.0) clip_global_norm(adam.params(), opt.clip_norm);
      adam.step();
      loss_sum += loss_value;
      ++batch_count;
    }
    ++epoch;

    const Predictor validate = [&model](const Tensor& x) {
      NoGradGuard inference;
      return model.forward(x);
    };
    const EvalResult ev =
        evaluate_archive(val_data, opt.variable, validate, cfg.input_frames, cfg.output_frames,
                         opt.batch_size, opt.logit_eps);

    const double lr_used = lr;
    const auto decision = sched.observe(ev.value, lr);
    adam.set_lr(lr);

    const Checkpoint ck = snapshot(model, adam, sched, lr, epoch, ev.value);
    if (decision.improved) save_checkpoint(best_path, ck);
    save_checkpoint(last_path, ck);

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batch_count);
    stats.val_metric = ev.value;
    stats.lr = lr_used;
    stats.checkpointed = decision.improved;
    result.history.push_back(stats);
    if (log) {
      *log << "epoch " << epoch << "  train " << stats.train_loss << "  val " << stats.val_metric
           << "  lr " << lr_used << (stats.checkpointed ? "  *" : "") << "\n";
    }
  }

  result.best_metric = sched.best();
  result.epochs_done = epoch;
  return result;
}

void write_history(std::ostream& os, const std::vector<EpochStats>& history) {
  const auto old_precision = os.precision(12);
  for (const auto& e : history) {
    os << e.epoch << '\t' << e.train_loss << '\t' << e.val_metric << '\t' << e.lr << '\t'
       << (e.checkpointed ? 1 : 0) << '\n';
  }
  os.precision(old_precision);
}

}  // namespace nowcast
