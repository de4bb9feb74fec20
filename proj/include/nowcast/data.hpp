#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/rng.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

/// Nominal spacing of consecutive frames, in seconds.
constexpr uint64_t kFrameSpacingSeconds = 900;

/// In-memory frame archive: T frames of C dynamic channels plus S static
/// channels shared by all frames. Values are expected in [0, 1]; mask is 1
/// where a pixel is valid. channel_names holds the C dynamic names followed
/// by the S static names.
struct FrameArchive {
  int64_t frames = 0;    // T
  int64_t channels = 0;  // C
  int64_t statics = 0;   // S
  int64_t height = 0;    // H
  int64_t width = 0;     // W
  std::vector<uint64_t> timestamps;        // [T], seconds, strictly increasing
  std::vector<std::string> channel_names;  // [C + S]
  std::vector<float> data;                 // [T, C, H, W]
  std::vector<uint8_t> mask;               // [T, C, H, W], 1 = valid
  std::vector<float> static_data;          // [S, H, W]

  void validate() const;  // throws std::invalid_argument on inconsistency
};

/// Binary archive file ("W4CF", version 1, little-endian). Throws
/// std::runtime_error on I/O failure or malformed content.
void save_archive(const std::string& path, const FrameArchive& a);
FrameArchive load_archive(const std::string& path);

/// Index of a named channel: dynamic channels map to [0, C), static channels
/// to [C, C+S). Throws std::invalid_argument for unknown names.
int64_t channel_index(const FrameArchive& a, const std::string& name);

/// Physical scaling of one raw channel: an affine map [phys_min, phys_max]
/// -> [0, 1] plus an optional missing-value sentinel.
struct ChannelScale {
  double phys_min = 0.0;
  double phys_max = 1.0;
  bool has_sentinel = false;
  float sentinel = 0.0f;
};

/// Maps raw physical values into [0, 1]; sentinel pixels become value 0 with
/// mask 0, everything else mask 1. Throws if phys_min >= phys_max.
void normalize_channel(const float* raw, size_t n, const ChannelScale& scale, float* out,
                       uint8_t* mask);

/// Inverse of normalize_channel on valid pixels.
float denormalize(float value, const ChannelScale& scale);

/// Maximal [begin, end) runs of frames spaced exactly kFrameSpacingSeconds
/// apart. Every frame belongs to exactly one run; isolated frames form runs
/// of length 1.
std::vector<std::pair<int64_t, int64_t>> gapless_runs(const FrameArchive& a);

/// Start indices of every window of win_len consecutive frames that fits
/// inside a single gapless run, ascending.
std::vector<int64_t> window_starts(const FrameArchive& a, int64_t win_len);

/// One of the 8 dihedral symmetries of the square: rot quarter-turns
/// counterclockwise, then optional horizontal (left-right) and vertical
/// (up-down) flips.
struct AugmentOp {
  int rot = 0;  // 0..3
  bool flip_h = false;
  bool flip_v = false;
};

/// Applies op to one h x w plane. Rotations require h == w.
void apply_d4(const float* src, float* dst, int64_t h, int64_t w, const AugmentOp& op);

/// One training example materialized from the archive: the input frames with
/// the static channels appended to each, and the target variable's future
/// frames with their validity mask.
struct SampleWindow {
  Tensor inputs;       // [Tin, C + S, H, W]
  Tensor target;       // [Tout, 1, H, W]
  Tensor target_mask;  // [Tout, 1, H, W]
};

/// Materializes the window starting at frame `start`: frames [start,
/// start+tin) as inputs, channel target_channel of frames [start+tin,
/// start+tin+tout) as the target. The same spatial transform is applied to
/// every plane.
SampleWindow make_window(const FrameArchive& a, int64_t start, int64_t tin, int64_t tout,
                         int64_t target_channel, const AugmentOp& op);

struct Batch {
  Tensor inputs;       // [B, Tin, C + S, H, W]
  Tensor target;       // [B, Tout, 1, H, W]
  Tensor target_mask;  // [B, Tout, 1, H, W]
};

/// Iterates the archive's windows once in a shuffled order, materializing
/// batches (the last one may be smaller). With augment on, every sample
/// draws an independent symmetry. The whole pass is a pure function of the
/// archive and the Rng handed in, so an epoch can be replayed exactly.
class BatchIterator {
 public:
  BatchIterator(const FrameArchive& a, int64_t tin, int64_t tout, int64_t target_channel,
                int64_t batch_size, bool augment, Rng rng);

  std::optional<Batch> next();
  int64_t window_count() const { return static_cast<int64_t>(starts_.size()); }

 private:
  const FrameArchive& archive_;
  int64_t tin_, tout_, target_channel_, batch_size_;
  bool augment_;
  Rng rng_;
  std::vector<int64_t> starts_;
  size_t cursor_ = 0;
};

}  // namespace nowcast
