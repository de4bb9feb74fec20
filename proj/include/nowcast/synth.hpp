#pragma once

#include <cstdint>
#include <limits>

#include "nowcast/data.hpp"

namespace nowcast {

/// Synthetic weather-like archive: Gaussian blobs drifting on a torus drive
/// four dynamic channels (named like the satellite products they stand in
/// for) plus three static channels (elevation, latitude, longitude). All
/// values lie in [0, 1].
struct SynthOptions {
  int64_t frames = 48;
  int64_t height = 32;
  int64_t width = 32;
  int64_t blobs = 3;
  uint64_t seed = 1;
  /// Insert a timestamp gap after every gap_every-th frame (0 = none).
  int64_t gap_every = 0;
  /// Fraction of pixels marked invalid in the mask (0 = all valid).
  double missing_rate = 0.0;
  /// When set (not NaN), every blob drifts at exactly this velocity in
  /// pixels per frame instead of a random one.
  double fixed_vx = std::numeric_limits<double>::quiet_NaN();
  double fixed_vy = std::numeric_limits<double>::quiet_NaN();
};

FrameArchive make_synthetic_archive(const SynthOptions& opt);

}  // namespace nowcast
