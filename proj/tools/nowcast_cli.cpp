#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/data.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"
#include "nowcast/pgm.hpp"
#include "nowcast/synth.hpp"
#include "nowcast/trainer.hpp"

namespace {

using namespace nowcast;

void apply_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Config file: {"model": {...}, "train": {...}}, both sections optional.
void load_config(const std::string& path, ModelConfig& mcfg, TrainOptions& topt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error(path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      mcfg = ModelConfig::from_json(value.dump());
    } else if (key == "train") {
      topt = TrainOptions::from_json(value.dump());
    } else {
      throw std::runtime_error(path + ": unknown section \"" + key +
                               "\" (expected \"model\" and/or \"train\")");
    }
  }
}

EncoderForecaster<float> model_from_checkpoint(const Checkpoint& ck) {
  const ModelConfig cfg = ModelConfig::from_json(ck.config_json);
  EncoderForecaster<float> model(cfg, 0);
  apply_weights(model, ck);
  return model;
}

int run_synth(const SynthOptions& opt, const std::string& out) {
  const FrameArchive a = make_synthetic_archive(opt);
  save_archive(out, a);
  std::cout << "wrote " << a.frames << " frames (" << a.channels << " dynamic + " << a.statics
            << " static channels, " << a.height << "x" << a.width << ") to " << out << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& val_path, const std::string& out_dir,
              const std::string& variable, bool seed_set, uint64_t seed, int64_t budget_epochs,
              double budget_hours, bool no_augment) {
  ModelConfig mcfg;
  TrainOptions topt;
  if (!config_path.empty()) load_config(config_path, mcfg, topt);
  if (!variable.empty()) topt.variable = variable_from_name(variable);
  if (seed_set) topt.seed = seed;
  if (budget_epochs >= 0) topt.max_epochs = budget_epochs;
  if (budget_hours >= 0) topt.max_hours = budget_hours;
  if (no_augment) topt.augment = false;

  const FrameArchive train_data = load_archive(data_path);
  const FrameArchive val_data = load_archive(val_path);

  EncoderForecaster<float> model(mcfg, topt.seed);
  std::cout << mcfg.variant << " model, " << model.parameter_count() << " parameters, target "
            << variable_name(topt.variable) << "\n";

  const TrainResult result = train(model, train_data, val_data, topt, out_dir, &std::cout);

  const std::string history_path = out_dir + "/history.tsv";
  const bool fresh = !std::filesystem::exists(history_path);
  std::ofstream hist(history_path, std::ios::app);
  if (!hist) throw std::runtime_error("cannot open " + history_path + " for writing");
  if (fresh) hist << "epoch\ttrain_loss\tval_metric\tlr\tcheckpointed\n";
  write_history(hist, result.history);

  std::cout << "done: " << result.epochs_done << " epochs, best " << variable_name(topt.variable)
            << " metric " << result.best_metric << (result.stopped ? " (plateau stop)" : "")
            << "\ncheckpoints in " << out_dir << ", history in " << history_path << "\n";
  return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& data_path,
                const std::string& out_path, int64_t start, const std::string& variable) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  EncoderForecaster<float> model = model_from_checkpoint(ck);
  const ModelConfig& cfg = model.config();
  const FrameArchive a = load_archive(data_path);
  if (a.channels + a.statics != cfg.input_channels) {
    throw std::runtime_error("archive provides " + std::to_string(a.channels + a.statics) +
                             " channels per frame, model expects " +
                             std::to_string(cfg.input_channels));
  }
  if (!variable.empty()) variable_from_name(variable);  // reject unknown names early
  const int64_t tin = cfg.input_frames, tout = cfg.output_frames;
  if (start < 0 || start + tin > a.frames) {
    throw std::runtime_error("window start " + std::to_string(start) + " leaves no " +
                             std::to_string(tin) + " input frames in a " +
                             std::to_string(a.frames) + "-frame archive");
  }
  for (int64_t t = 1; t < tin; ++t) {
    const auto i = static_cast<size_t>(start + t);
    if (a.timestamps[i] - a.timestamps[i - 1] != kFrameSpacingSeconds) {
      throw std::runtime_error("input frames at start " + std::to_string(start) +
                               " are not contiguous (gap before frame " +
                               std::to_string(start + t) + ")");
    }
  }

  const int64_t plane = a.height * a.width;
  const int64_t cin = a.channels + a.statics;
  Tensor inputs = Tensor::zeros({1, tin, cin, a.height, a.width});
  auto id = inputs.data();
  for (int64_t t = 0; t < tin; ++t) {
    float* frame = id.data() + t * cin * plane;
    std::copy_n(a.data.begin() + (start + t) * a.channels * plane, a.channels * plane, frame);
    std::copy_n(a.static_data.begin(), a.statics * plane, frame + a.channels * plane);
  }
  NoGradGuard inference;
  const Tensor pred = model.forward(inputs);

  FrameArchive out;
  out.frames = tout;
  out.channels = 1;
  out.statics = 0;
  out.height = a.height;
  out.width = a.width;
  out.channel_names = {"prediction"};
  out.data.assign(pred.data().begin(), pred.data().end());
  out.mask.assign(out.data.size(), 1);
  for (int64_t t = 0; t < tout; ++t) {
    out.timestamps.push_back(a.timestamps[static_cast<size_t>(start + tin - 1)] +
                             (t + 1) * kFrameSpacingSeconds);
  }
  save_archive(out_path, out);
  std::cout << "wrote " << tout << " predicted frames to " << out_path << "\n";

  if (variable == "cma") {
    // The cloud-mask product is consumed thresholded, so write that form too.
    for (float& v : out.data) v = v >= 0.5f ? 1.0f : 0.0f;
    const std::filesystem::path p(out_path);
    const std::string tpath = (p.parent_path() / (p.stem().string() + ".thresholded" +
                                                  p.extension().string())).string();
    save_archive(tpath, out);
    std::cout << "wrote thresholded frames to " << tpath << "\n";
  }
  return 0;
}

int run_evaluate(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& variable, const std::string& out_path, int64_t batch,
                 double logit_eps) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  EncoderForecaster<float> model = model_from_checkpoint(ck);
  const FrameArchive a = load_archive(data_path);
  const Predictor predict = [&model](const Tensor& x) {
    NoGradGuard inference;
    return model.forward(x);
  };
  const EvalResult r =
      evaluate_archive(a, variable_from_name(variable), predict, model.config().input_frames,
                       model.config().output_frames, batch, logit_eps);
  if (out_path.empty() || out_path == "-") {
    write_report(std::cout, {r});
  } else {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot open " + out_path + " for writing");
    write_report(os, {r});
    std::cout << "wrote report to " << out_path << "\n";
  }
  return 0;
}

int run_export_images(const std::string& data_path, const std::string& out_dir,
                      const std::string& channel, int64_t limit) {
  const FrameArchive a = load_archive(data_path);
  const int64_t idx = channel_index(a, channel);
  std::filesystem::create_directories(out_dir);
  const int64_t plane = a.height * a.width;
  if (idx >= a.channels) {
    const std::string path = out_dir + "/" + channel + ".pgm";
    write_pgm(path, a.static_data.data() + (idx - a.channels) * plane, a.height, a.width);
    std::cout << "wrote 1 image to " << out_dir << "\n";
    return 0;
  }
  int64_t n = a.frames;
  if (limit >= 0) n = std::min(n, limit);
  std::vector<float> thresholded(static_cast<size_t>(plane));
  int64_t written = 0;
  for (int64_t t = 0; t < n; ++t) {
    char name[64];
    std::snprintf(name, sizeof name, "_%05lld.pgm", static_cast<long long>(t));
    const float* src = a.data.data() + (t * a.channels + idx) * plane;
    write_pgm(out_dir + "/" + channel + name, src, a.height, a.width);
    ++written;
    if (channel == "cma") {
      // The cloud mask is consumed after rounding at 0.5; export that view too.
      for (int64_t i = 0; i < plane; ++i) thresholded[i] = src[i] >= 0.5f ? 1.0f : 0.0f;
      std::snprintf(name, sizeof name, "_t_%05lld.pgm", static_cast<long long>(t));
      write_pgm(out_dir + "/" + channel + name, thresholded.data(), a.height, a.width);
      ++written;
    }
  }
  std::cout << "wrote " << written << " images to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-convolutional nowcasting: synthesize data, train, predict, evaluate"};
  app.require_subcommand(1);
  int threads = 0;

  auto* synth = app.add_subcommand("synth", "Write a synthetic frame archive");
  SynthOptions sopt;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output archive path")->required();
  synth->add_option("--frames", sopt.frames, "Number of frames");
  synth->add_option("--height", sopt.height, "Grid height");
  synth->add_option("--width", sopt.width, "Grid width");
  synth->add_option("--blobs", sopt.blobs, "Number of drifting blobs");
  synth->add_option("--seed", sopt.seed, "Random seed");
  synth->add_option("--gap-every", sopt.gap_every,
                    "Insert a timestamp gap after every N-th frame (0 = none)");
  synth->add_option("--missing-rate", sopt.missing_rate, "Fraction of pixels masked invalid");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string t_config, t_data, t_val, t_out, t_variable;
  uint64_t t_seed = 0;
  int64_t t_budget_epochs = -1;
  double t_budget_hours = -1.0;
  bool t_no_augment = false;
  train_cmd->add_option("--config", t_config, "JSON config with model/train sections");
  train_cmd->add_option("--data", t_data, "Training archive")->required();
  train_cmd->add_option("--val", t_val, "Validation archive")->required();
  train_cmd->add_option("--out", t_out, "Output directory for checkpoints and history")
      ->required();
  train_cmd->add_option("--variable", t_variable, "Target variable (overrides config)");
  auto* seed_opt = train_cmd->add_option("--seed", t_seed, "Random seed (overrides config)");
  train_cmd->add_option("--budget-epochs", t_budget_epochs, "Stop after this many epochs");
  train_cmd->add_option("--budget-hours", t_budget_hours, "Stop at the first epoch boundary past this");
  train_cmd->add_flag("--no-augment", t_no_augment, "Disable dihedral augmentation");
  train_cmd->add_option("--threads", threads, "OpenMP thread count (0 = library default)");

  auto* predict_cmd = app.add_subcommand("predict", "Forecast one window from an archive");
  std::string p_ckpt, p_data, p_out, p_variable;
  int64_t p_start = 0;
  predict_cmd->add_option("--checkpoint", p_ckpt, "Checkpoint path")->required();
  predict_cmd->add_option("--data", p_data, "Input archive")->required();
  predict_cmd->add_option("--out", p_out, "Output archive path")->required();
  predict_cmd->add_option("--start", p_start, "First input frame index");
  predict_cmd->add_option("--variable", p_variable,
                          "Variable name; cma also writes a thresholded companion");
  predict_cmd->add_option("--threads", threads, "OpenMP thread count (0 = library default)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on an archive");
  std::string e_ckpt, e_data, e_variable, e_out;
  int64_t e_batch = 4;
  double e_eps = 1e-3;
  eval_cmd->add_option("--checkpoint", e_ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--data", e_data, "Evaluation archive")->required();
  eval_cmd->add_option("--variable", e_variable, "Variable to score")->required();
  eval_cmd->add_option("--out", e_out, "Report path (default: stdout)");
  eval_cmd->add_option("--batch", e_batch, "Windows per forward pass");
  eval_cmd->add_option("--logit-eps", e_eps, "Logit truncation for asii_turb_trop_prob");
  eval_cmd->add_option("--threads", threads, "OpenMP thread count (0 = library default)");

  auto* export_cmd = app.add_subcommand("export-images", "Render archive planes as PGM images");
  std::string x_data, x_out, x_channel;
  int64_t x_limit = -1;
  export_cmd->add_option("--data", x_data, "Archive path")->required();
  export_cmd->add_option("--out", x_out, "Output directory")->required();
  export_cmd->add_option("--channel", x_channel, "Channel name")->required();
  export_cmd->add_option("--limit", x_limit, "Maximum number of frames (-1 = all)");

  CLI11_PARSE(app, argc, argv);

  try {
    apply_threads(threads);
    if (synth->parsed()) return run_synth(sopt, synth_out);
    if (train_cmd->parsed()) {
      return run_train(t_config, t_data, t_val, t_out, t_variable, seed_opt->count() > 0, t_seed,
                       t_budget_epochs, t_budget_hours, t_no_augment);
    }
    if (predict_cmd->parsed()) return run_predict(p_ckpt, p_data, p_out, p_start, p_variable);
    if (eval_cmd->parsed()) return run_evaluate(e_ckpt, e_data, e_variable, e_out, e_batch, e_eps);
    if (export_cmd->parsed()) return run_export_images(x_data, x_out, x_channel, x_limit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
