#pragma once

#include <cstdint>
#include <string>

namespace nowcast {

/// Binary PGM (P5), maxval 255. Values are clamped to [0, 1] and quantized
/// with round-half-up, so 0.5 maps to 128. Throws std::runtime_error on I/O
/// failure.
void write_pgm(const std::string& path, const float* plane, int64_t h, int64_t w);

}  // namespace nowcast
