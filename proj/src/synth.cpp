#include "nowcast/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "nowcast/rng.hpp"

namespace nowcast {

namespace {

// Signed minimum-image distance on a ring of circumference n.
double torus_delta(double a, double b, double n) {
  double d = std::fmod(a - b, n);
  if (d < -n / 2) d += n;
  if (d >= n / 2) d -= n;
  return d;
}

struct Blob {
  double cx, cy, sigma, vx, vy, amp;
};

}  // namespace

FrameArchive make_synthetic_archive(const SynthOptions& opt) {
  if (opt.frames < 1) throw std::invalid_argument("synth: frames must be positive");
  if (opt.height < 4 || opt.width < 4) throw std::invalid_argument("synth: grid must be at least 4x4");
  if (opt.blobs < 0) throw std::invalid_argument("synth: blob count must be non-negative");
  if (opt.gap_every < 0) throw std::invalid_argument("synth: gap_every must be non-negative");
  if (opt.missing_rate < 0.0 || opt.missing_rate >= 1.0) {
    throw std::invalid_argument("synth: missing_rate must lie in [0, 1)");
  }

  Rng rng(opt.seed);
  const double h = static_cast<double>(opt.height), w = static_cast<double>(opt.width);
  std::vector<Blob> blobs;
  for (int64_t i = 0; i < opt.blobs; ++i) {
    Blob b;
    b.cx = rng.uniform(0.0, w);
    b.cy = rng.uniform(0.0, h);
    b.sigma = rng.uniform(std::min(h, w) / 12.0, std::min(h, w) / 5.0);
    b.vx = rng.uniform(-1.5, 1.5);
    b.vy = rng.uniform(-1.5, 1.5);
    if (!std::isnan(opt.fixed_vx)) b.vx = opt.fixed_vx;
    if (!std::isnan(opt.fixed_vy)) b.vy = opt.fixed_vy;
    b.amp = rng.uniform(0.6, 1.0);
    blobs.push_back(b);
  }
  const double phase_x = rng.uniform(0.0, 2.0 * M_PI);
  const double phase_y = rng.uniform(0.0, 2.0 * M_PI);

  FrameArchive a;
  a.frames = opt.frames;
  a.channels = 4;
  a.statics = 3;
  a.height = opt.height;
  a.width = opt.width;
  a.channel_names = {"temperature", "crr_intensity", "asii_turb_trop_prob", "cma",
                     "elevation",   "latitude",      "longitude"};

  const uint64_t t0 = 1600000000;
  for (int64_t t = 0; t < opt.frames; ++t) {
    const uint64_t skipped = opt.gap_every > 0 ? static_cast<uint64_t>(t / opt.gap_every) : 0;
    a.timestamps.push_back(t0 + kFrameSpacingSeconds * (static_cast<uint64_t>(t) + skipped));
  }

  const int64_t plane = opt.height * opt.width;
  a.data.resize(static_cast<size_t>(opt.frames * 4 * plane));
  a.mask.assign(static_cast<size_t>(opt.frames * 4 * plane), 1);
  a.static_data.resize(static_cast<size_t>(3 * plane));

  for (int64_t t = 0; t < opt.frames; ++t) {
    float* temperature = a.data.data() + (t * 4 + 0) * plane;
    float* crr = a.data.data() + (t * 4 + 1) * plane;
    float* asii = a.data.data() + (t * 4 + 2) * plane;
    float* cma = a.data.data() + (t * 4 + 3) * plane;
    for (int64_t y = 0; y < opt.height; ++y) {
      for (int64_t x = 0; x < opt.width; ++x) {
        double g = 0.0;
        for (const Blob& b : blobs) {
          const double dx = torus_delta(x + 0.5, b.cx + b.vx * t, w);
          const double dy = torus_delta(y + 0.5, b.cy + b.vy * t, h);
          g += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        }
        if (g > 1.0) g = 1.0;
        const int64_t i = y * opt.width + x;
        temperature[i] = static_cast<float>(0.15 + 0.7 * g);
        crr[i] = static_cast<float>(g > 0.55 ? (g - 0.55) / 0.45 : 0.0);
        asii[i] = static_cast<float>(g);
        cma[i] = g > 0.45 ? 1.0f : 0.0f;
      }
    }
  }

  float* elevation = a.static_data.data();
  float* latitude = a.static_data.data() + plane;
  float* longitude = a.static_data.data() + 2 * plane;
  for (int64_t y = 0; y < opt.height; ++y) {
    for (int64_t x = 0; x < opt.width; ++x) {
      const int64_t i = y * opt.width + x;
      elevation[i] = static_cast<float>(
          0.5 + 0.25 * std::sin(2.0 * M_PI * x / w + phase_x) * std::sin(2.0 * M_PI * y / h + phase_y));
      latitude[i] = static_cast<float>(y) / static_cast<float>(opt.height - 1);
      longitude[i] = static_cast<float>(x) / static_cast<float>(opt.width - 1);
    }
  }

  if (opt.missing_rate > 0.0) {
    for (auto& m : a.mask) m = rng.uniform() < opt.missing_rate ? 0 : 1;
  }
  return a;
}

}  // namespace nowcast
