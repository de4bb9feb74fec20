#include "nowcast/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace nowcast {

namespace {

constexpr char kMagic[4] = {'W', '4', 'C', 'F'};
constexpr uint32_t kVersion = 1;
// Caps extents to keep size arithmetic overflow-free on hostile files.
constexpr int64_t kMaxExtent = int64_t(1) << 20;
constexpr int64_t kMaxElements = int64_t(1) << 33;

}  // namespace

void FrameArchive::validate() const {
  if (frames < 1 || channels < 1 || statics < 0 || height < 1 || width < 1) {
    throw std::invalid_argument("archive: extents must be positive (statics may be zero)");
  }
  if (static_cast<int64_t>(timestamps.size()) != frames) {
    throw std::invalid_argument("archive: timestamp count does not match frame count");
  }
  for (int64_t i = 1; i < frames; ++i) {
    if (timestamps[i] <= timestamps[i - 1]) {
      throw std::invalid_argument("archive: timestamps must be strictly increasing");
    }
  }
  if (static_cast<int64_t>(channel_names.size()) != channels + statics) {
    throw std::invalid_argument("archive: expected " + std::to_string(channels + statics) +
                                " channel names, got " + std::to_string(channel_names.size()));
  }
  for (size_t i = 0; i < channel_names.size(); ++i) {
    if (channel_names[i].empty()) throw std::invalid_argument("archive: empty channel name");
    for (size_t j = 0; j < i; ++j) {
      if (channel_names[i] == channel_names[j]) {
        throw std::invalid_argument("archive: duplicate channel name \"" + channel_names[i] +
                                    "\"");
      }
    }
  }
  const size_t dyn = static_cast<size_t>(frames * channels * height * width);
  if (data.size() != dyn || mask.size() != dyn) {
    throw std::invalid_argument("archive: data/mask size does not match extents");
  }
  if (static_data.size() != static_cast<size_t>(statics * height * width)) {
    throw std::invalid_argument("archive: static data size does not match extents");
  }
  for (uint8_t m : mask) {
    if (m > 1) throw std::invalid_argument("archive: mask values must be 0 or 1");
  }
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("archive: frame values must lie in [0,1]");
    }
  }
  for (float v : static_data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("archive: static values must lie in [0,1]");
    }
  }
}

void save_archive(const std::string& path, const FrameArchive& a) {
  a.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  io::write_bytes(os, kMagic, 4);
  io::write_pod<uint32_t>(os, kVersion);
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(a.frames));
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(a.channels));
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(a.statics));
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(a.height));
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(a.width));
  io::write_vec(os, a.timestamps);
  for (const auto& name : a.channel_names) io::write_str16(os, name);
  io::write_vec(os, a.data);
  io::write_vec(os, a.mask);
  io::write_vec(os, a.static_data);
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path);
}

FrameArchive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  io::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a frame archive (bad magic)");
  }
  const auto version = io::read_pod<uint32_t>(is, "version");
  if (version != kVersion) {
    throw std::runtime_error(path + ": unsupported archive version " + std::to_string(version));
  }
  FrameArchive a;
  a.frames = io::read_pod<uint32_t>(is, "frame count");
  a.channels = io::read_pod<uint32_t>(is, "channel count");
  a.statics = io::read_pod<uint32_t>(is, "static channel count");
  a.height = io::read_pod<uint32_t>(is, "height");
  a.width = io::read_pod<uint32_t>(is, "width");
  if (a.frames > kMaxExtent || a.channels > kMaxExtent || a.statics > kMaxExtent ||
      a.height > kMaxExtent || a.width > kMaxExtent ||
      a.frames * a.channels > kMaxElements / (a.height * a.width + 1)) {
    throw std::runtime_error(path + ": implausible extents");
  }
  a.timestamps = io::read_vec<uint64_t>(is, static_cast<size_t>(a.frames), "timestamps");
  for (int64_t i = 0; i < a.channels + a.statics; ++i) {
    a.channel_names.push_back(io::read_str16(is, "channel name"));
  }
  const size_t dyn = static_cast<size_t>(a.frames * a.channels * a.height * a.width);
  a.data = io::read_vec<float>(is, dyn, "frame data");
  a.mask = io::read_vec<uint8_t>(is, dyn, "mask");
  a.static_data =
      io::read_vec<float>(is, static_cast<size_t>(a.statics * a.height * a.width), "static data");
  // A well-formed file ends exactly here.
  is.peek();
  if (!is.eof()) throw std::runtime_error(path + ": trailing bytes after archive payload");
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return a;
}

int64_t channel_index(const FrameArchive& a, const std::string& name) {
  for (size_t i = 0; i < a.channel_names.size(); ++i) {
    if (a.channel_names[i] == name) return static_cast<int64_t>(i);
  }
  throw std::invalid_argument("archive has no channel named \"" + name + "\"");
}

void normalize_channel(const float* raw, size_t n, const ChannelScale& scale, float* out,
                       uint8_t* mask) {
  if (!(scale.phys_min < scale.phys_max)) {
    throw std::invalid_argument("channel scale: phys_min must be below phys_max");
  }
  const double span = scale.phys_max - scale.phys_min;
  for (size_t i = 0; i < n; ++i) {
    if (scale.has_sentinel && raw[i] == scale.sentinel) {
      out[i] = 0.0f;
      mask[i] = 0;
    } else {
      out[i] = static_cast<float>((raw[i] - scale.phys_min) / span);
      mask[i] = 1;
    }
  }
}

float denormalize(float value, const ChannelScale& scale) {
  return static_cast<float>(scale.phys_min + value * (scale.phys_max - scale.phys_min));
}

std::vector<std::pair<int64_t, int64_t>> gapless_runs(const FrameArchive& a) {
  std::vector<std::pair<int64_t, int64_t>> runs;
  int64_t begin = 0;
  for (int64_t i = 1; i < a.frames; ++i) {
    if (a.timestamps[i] - a.timestamps[i - 1] != kFrameSpacingSeconds) {
      runs.emplace_back(begin, i);
      begin = i;
    }
  }
  if (a.frames > 0) runs.emplace_back(begin, a.frames);
  return runs;
}

std::vector<int64_t> window_starts(const FrameArchive& a, int64_t win_len) {
  if (win_len < 1) throw std::invalid_argument("window_starts: window length must be positive");
  std::vector<int64_t> starts;
  for (const auto& [begin, end] : gapless_runs(a)) {
    for (int64_t s = begin; s + win_len <= end; ++s) starts.push_back(s);
  }
  return starts;
}

void apply_d4(const float* src, float* dst, int64_t h, int64_t w, const AugmentOp& op) {
  const int rot = ((op.rot % 4) + 4) % 4;
  if (rot % 2 == 1 && h != w) {
    throw std::invalid_argument("apply_d4: quarter-turn rotations need square planes");
  }
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t yy = op.flip_v ? h - 1 - y : y;
      const int64_t xx = op.flip_h ? w - 1 - x : x;
      int64_t sy, sx;
      switch (rot) {
        case 0:
          sy = yy;
          sx = xx;
          break;
        case 1:  // one quarter turn counterclockwise
          sy = xx;
          sx = w - 1 - yy;
          break;
        case 2:
          sy = h - 1 - yy;
          sx = w - 1 - xx;
          break;
        default:
          sy = h - 1 - xx;
          sx = yy;
          break;
      }
      dst[y * w + x] = src[sy * w + sx];
    }
  }
}

SampleWindow make_window(const FrameArchive& a, int64_t start, int64_t tin, int64_t tout,
                         int64_t target_channel, const AugmentOp& op) {
  if (tin < 1 || tout < 1) throw std::invalid_argument("make_window: frame counts must be positive");
  if (start < 0 || start + tin + tout > a.frames) {
    throw std::invalid_argument("make_window: window [" + std::to_string(start) + ", " +
                                std::to_string(start + tin + tout) + ") exceeds " +
                                std::to_string(a.frames) + " frames");
  }
  if (target_channel < 0 || target_channel >= a.channels) {
    throw std::invalid_argument("make_window: target channel must be dynamic");
  }
  const int64_t h = a.height, w = a.width, plane = h * w;
  const int64_t cin = a.channels + a.statics;

  SampleWindow s;
  s.inputs = Tensor::zeros({tin, cin, h, w});
  s.target = Tensor::zeros({tout, 1, h, w});
  s.target_mask = Tensor::zeros({tout, 1, h, w});

  float* dst = s.inputs.data().data();
  for (int64_t t = 0; t < tin; ++t) {
    for (int64_t c = 0; c < a.channels; ++c) {
      apply_d4(a.data.data() + ((start + t) * a.channels + c) * plane, dst, h, w, op);
      dst += plane;
    }
    for (int64_t c = 0; c < a.statics; ++c) {
      apply_d4(a.static_data.data() + c * plane, dst, h, w, op);
      dst += plane;
    }
  }
  std::vector<float> buf(static_cast<size_t>(plane));
  for (int64_t t = 0; t < tout; ++t) {
    const int64_t frame = start + tin + t;
    apply_d4(a.data.data() + (frame * a.channels + target_channel) * plane,
             s.target.data().data() + t * plane, h, w, op);
    const uint8_t* m = a.mask.data() + (frame * a.channels + target_channel) * plane;
    for (int64_t i = 0; i < plane; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(m[i]);
    apply_d4(buf.data(), s.target_mask.data().data() + t * plane, h, w, op);
  }
  return s;
}

BatchIterator::BatchIterator(const FrameArchive& a, int64_t tin, int64_t tout,
                             int64_t target_channel, int64_t batch_size, bool augment, Rng rng)
    : archive_(a),
      tin_(tin),
      tout_(tout),
      target_channel_(target_channel),
      batch_size_(batch_size),
      augment_(augment),
      rng_(rng),
      starts_(window_starts(a, tin + tout)) {
  if (batch_size_ < 1) throw std::invalid_argument("batch size must be positive");
  rng_.shuffle(starts_);
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= starts_.size()) return std::nullopt;
  const int64_t b = std::min<int64_t>(batch_size_, static_cast<int64_t>(starts_.size() - cursor_));
  const int64_t cin = archive_.channels + archive_.statics;
  const int64_t h = archive_.height, w = archive_.width;

  Batch batch;
  batch.inputs = Tensor::zeros({b, tin_, cin, h, w});
  batch.target = Tensor::zeros({b, tout_, 1, h, w});
  batch.target_mask = Tensor::zeros({b, tout_, 1, h, w});
  for (int64_t i = 0; i < b; ++i) {
    AugmentOp op;
    if (augment_) {
      op.rot = static_cast<int>(rng_.below(4));
      op.flip_h = rng_.below(2) == 1;
      op.flip_v = rng_.below(2) == 1;
    }
    const auto s = make_window(archive_, starts_[cursor_++], tin_, tout_, target_channel_, op);
    std::copy(s.inputs.data().begin(), s.inputs.data().end(),
              batch.inputs.data().begin() + i * s.inputs.size());
    std::copy(s.target.data().begin(), s.target.data().end(),
              batch.target.data().begin() + i * s.target.size());
    std::copy(s.target_mask.data().begin(), s.target_mask.data().end(),
              batch.target_mask.data().begin() + i * s.target_mask.size());
  }
  return batch;
}

}  // namespace nowcast
