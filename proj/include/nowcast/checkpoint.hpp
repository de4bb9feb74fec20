#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nowcast/layers.hpp"
#include "nowcast/model.hpp"

namespace nowcast {

/// Serialized training state: model weights, optimizer moments (stored under
/// "adam.m." / "adam.v." prefixes) and the scheduler scalars, plus the model
/// config as a JSON echo so a checkpoint is self-describing.
struct Checkpoint {
  uint32_t version = 1;
  std::string config_json;
  std::vector<NamedParam<float>> tensors;

  double best_metric = std::numeric_limits<double>::infinity();
  double lr = 0.0;
  uint32_t stale_epochs = 0;
  bool stopped = false;
  uint64_t adam_steps = 0;
  uint32_t epochs_done = 0;
  double last_metric = std::numeric_limits<double>::quiet_NaN();
};

/// Binary checkpoint file ("W4CK", version 1, little-endian). Throws
/// std::runtime_error on I/O failure or malformed content.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into the model's parameters by name, ignoring
/// the optimizer entries. Throws std::runtime_error naming the offending
/// tensor when one is missing or its shape disagrees.
void apply_weights(EncoderForecaster<float>& model, const Checkpoint& ckpt);

/// Fetches a named tensor; throws std::runtime_error when absent.
const NamedParam<float>& find_tensor(const Checkpoint& ckpt, const std::string& name);
bool has_tensor(const Checkpoint& ckpt, const std::string& name);

}  // namespace nowcast
