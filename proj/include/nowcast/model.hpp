#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nowcast/layers.hpp"

namespace nowcast {

struct ModelConfig {
  std::string variant = "convgru";  // "convgru" | "resgru"
  int64_t input_frames = 4;
  int64_t output_frames = 32;
  int64_t input_channels = 7;  // dynamic + static channels in every input frame
  int64_t output_channels = 1;
  std::vector<int64_t> stage_channels = {32, 64, 128, 256};
  int64_t gru_kernel = 3;
  int64_t block_kernel = 3;

  int64_t depth() const { return static_cast<int64_t>(stage_channels.size()); }
  void validate() const;  // throws std::invalid_argument

  std::string to_json() const;
  /// Parses a JSON object; every key is optional, unknown keys are an error.
  static ModelConfig from_json(const std::string& text);
};

/// Recurrent encoder-forecaster. The encoder walks the input frames through
/// depth() stages of strided residual block + recurrent cell, halving the
/// resolution at each stage. The final state of every stage passes through a
/// bridge convolution and seeds the matching forecaster stage. The forecaster
/// runs one recurrent step per output frame at every stage, deepest first,
/// feeding each stage's upsampled, block-transformed output to the stage
/// above; the deepest stage is driven by a learned per-channel constant. A
/// 1x1 projection plus sigmoid maps the top stage to the predicted frames.
template <typename T>
class EncoderForecaster {
 public:
  EncoderForecaster(const ModelConfig& cfg, uint64_t seed);

  /// [B, input_frames, input_channels, H, W] ->
  /// [B, output_frames, output_channels, H, W]. H and W must be divisible by
  /// 2^depth(). Throws std::invalid_argument on any shape violation.
  TensorT<T> forward(const TensorT<T>& input) const;

  /// Parameters in a fixed construction order with stable names.
  ParamList<T> named_parameters() const;
  int64_t parameter_count() const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  std::vector<ResidualBlock<T>> enc_blocks_;  // stride 2, stage d: c_{d-1} -> c_d
  std::vector<GruCell<T>> enc_grus_;          // stage d: c_d -> c_d
  std::vector<Conv2dLayer<T>> bridges_;       // stage d: c_d -> c_d, stride 1
  TensorT<T> seed_;                           // [c_last], drives the deepest stage
  std::vector<GruCell<T>> dec_grus_;          // stage d: c_d -> c_d
  std::vector<ResidualBlock<T>> dec_blocks_;  // stage d: c_d -> c_{d-1} (c_0 -> c_0), stride 1
  Conv2dLayer<T> head_;                       // 1x1, c_0 -> output_channels
};

extern template class EncoderForecaster<float>;
extern template class EncoderForecaster<double>;

}  // namespace nowcast
