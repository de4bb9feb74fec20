#include "nowcast/model.hpp"

#include <stdexcept>
#include <string>

#include "json.hpp"

namespace nowcast {

void ModelConfig::validate() const {
  if (variant != "convgru" && variant != "resgru") {
    throw std::invalid_argument("model config: variant must be \"convgru\" or \"resgru\", got \"" +
                                variant + "\"");
  }
  if (input_frames < 1 || output_frames < 1) {
    throw std::invalid_argument("model config: input_frames and output_frames must be positive");
  }
  if (input_channels < 1 || output_channels < 1) {
    throw std::invalid_argument("model config: channel counts must be positive");
  }
  if (stage_channels.empty()) {
    throw std::invalid_argument("model config: stage_channels must name at least one stage");
  }
  for (int64_t c : stage_channels) {
    if (c < 1) throw std::invalid_argument("model config: stage channel counts must be positive");
  }
  if (depth() > 16) {
    throw std::invalid_argument("model config: more than 16 stages is not meaningful");
  }
  for (int64_t k : {gru_kernel, block_kernel}) {
    if (k < 1 || k % 2 == 0) {
      throw std::invalid_argument("model config: kernel sizes must be odd and positive");
    }
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["input_frames"] = input_frames;
  j["output_frames"] = output_frames;
  j["input_channels"] = input_channels;
  j["output_channels"] = output_channels;
  j["stage_channels"] = stage_channels;
  j["gru_kernel"] = gru_kernel;
  j["block_kernel"] = block_kernel;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "variant") {
        cfg.variant = value.get<std::string>();
      } else if (key == "input_frames") {
        cfg.input_frames = value.get<int64_t>();
      } else if (key == "output_frames") {
        cfg.output_frames = value.get<int64_t>();
      } else if (key == "input_channels") {
        cfg.input_channels = value.get<int64_t>();
      } else if (key == "output_channels") {
        cfg.output_channels = value.get<int64_t>();
      } else if (key == "stage_channels") {
        cfg.stage_channels = value.get<std::vector<int64_t>>();
      } else if (key == "gru_kernel") {
        cfg.gru_kernel = value.get<int64_t>();
      } else if (key == "block_kernel") {
        cfg.block_kernel = value.get<int64_t>();
      } else {
        throw std::invalid_argument("model config: unknown key \"" + key + "\"");
      }
    }
  } catch (const nlohmann::json::type_error& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename T>
EncoderForecaster<T>::EncoderForecaster(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const auto& ch = cfg_.stage_channels;
  const int64_t depth = cfg_.depth();
  const bool res = cfg_.variant == "resgru";
  auto make_gru = [&](int64_t cx, int64_t chid) {
    return res ? GruCell<T>::res_gru(cx, chid, cfg_.gru_kernel, rng)
               : GruCell<T>::conv_gru(cx, chid, cfg_.gru_kernel, rng);
  };
  for (int64_t d = 0; d < depth; ++d) {
    const int64_t cin = d == 0 ? cfg_.input_channels : ch[d - 1];
    enc_blocks_.emplace_back(cin, ch[d], cfg_.block_kernel, 2, rng);
    enc_grus_.push_back(make_gru(ch[d], ch[d]));
  }
  for (int64_t d = 0; d < depth; ++d) {
    bridges_.emplace_back(ch[d], ch[d], cfg_.block_kernel, 1, rng);
  }
  seed_ = TensorT<T>::zeros({ch[depth - 1]}, true);
  for (int64_t d = 0; d < depth; ++d) dec_grus_.push_back(make_gru(ch[d], ch[d]));
  for (int64_t d = 0; d < depth; ++d) {
    const int64_t cout = d == 0 ? ch[0] : ch[d - 1];
    dec_blocks_.emplace_back(ch[d], cout, cfg_.block_kernel, 1, rng);
  }
  head_ = Conv2dLayer<T>(ch[0], cfg_.output_channels, 1, 1, rng);
}

template <typename T>
TensorT<T> EncoderForecaster<T>::forward(const TensorT<T>& input) const {
  if (!input.defined() || input.rank() != 5) {
    throw std::invalid_argument("forward: input must be [B,T,C,H,W]");
  }
  if (input.dim(1) != cfg_.input_frames) {
    throw std::invalid_argument("forward: expected " + std::to_string(cfg_.input_frames) +
                                " input frames, got " + std::to_string(input.dim(1)));
  }
  if (input.dim(2) != cfg_.input_channels) {
    throw std::invalid_argument("forward: expected " + std::to_string(cfg_.input_channels) +
                                " input channels, got " + std::to_string(input.dim(2)));
  }
  const int64_t b = input.dim(0), h = input.dim(3), w = input.dim(4);
  const int64_t depth = cfg_.depth();
  const int64_t div = int64_t(1) << depth;
  if (h % div != 0 || w % div != 0) {
    throw std::invalid_argument("forward: H and W must be divisible by " + std::to_string(div) +
                                ", got " + std::to_string(h) + "x" + std::to_string(w));
  }

  std::vector<TensorT<T>> state(static_cast<size_t>(depth));
  for (int64_t d = 0; d < depth; ++d) {
    state[d] = TensorT<T>::zeros({b, cfg_.stage_channels[d], h >> (d + 1), w >> (d + 1)});
  }
  for (int64_t t = 0; t < cfg_.input_frames; ++t) {
    auto y = ops::time_slice(input, t);
    for (int64_t d = 0; d < depth; ++d) {
      y = enc_blocks_[d].forward(y);
      state[d] = enc_grus_[d].step(y, state[d]);
      y = state[d];
    }
  }
  for (int64_t d = 0; d < depth; ++d) state[d] = bridges_[d].forward(state[d]);

  std::vector<TensorT<T>> frames;
  frames.reserve(static_cast<size_t>(cfg_.output_frames));
  for (int64_t t = 0; t < cfg_.output_frames; ++t) {
    auto u = ops::broadcast_channels(seed_, b, h >> depth, w >> depth);
    for (int64_t d = depth - 1; d >= 0; --d) {
      state[d] = dec_grus_[d].step(u, state[d]);
      u = dec_blocks_[d].forward(ops::bilinear_upsample2x(state[d]));
    }
    frames.push_back(ops::sigmoid(head_.forward(u)));
  }
  return ops::time_stack(std::span<const TensorT<T>>(frames.data(), frames.size()));
}

template <typename T>
ParamList<T> EncoderForecaster<T>::named_parameters() const {
  ParamList<T> out;
  const int64_t depth = cfg_.depth();
  for (int64_t d = 0; d < depth; ++d) {
    enc_blocks_[d].collect("encoder.block" + std::to_string(d), out);
    enc_grus_[d].collect("encoder.gru" + std::to_string(d), out);
  }
  for (int64_t d = 0; d < depth; ++d) {
    bridges_[d].collect("bridge" + std::to_string(d), out);
  }
  out.push_back({"forecaster.seed", seed_});
  for (int64_t d = 0; d < depth; ++d) {
    dec_grus_[d].collect("forecaster.gru" + std::to_string(d), out);
  }
  for (int64_t d = 0; d < depth; ++d) {
    dec_blocks_[d].collect("forecaster.block" + std::to_string(d), out);
  }
  head_.collect("head", out);
  return out;
}

template <typename T>
int64_t EncoderForecaster<T>::parameter_count() const {
  return param_count(named_parameters());
}

template class EncoderForecaster<float>;
template class EncoderForecaster<double>;

}  // namespace nowcast
