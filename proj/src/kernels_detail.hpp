#pragma once

#include <cstdint>

namespace nowcast::kernels::detail {

// Floor/ceil division for possibly negative numerators, positive divisor.
inline int64_t floordiv(int64_t a, int64_t d) {
  return a >= 0 ? a / d : -((-a + d - 1) / d);
}

inline int64_t ceildiv(int64_t a, int64_t d) {
  return a >= 0 ? (a + d - 1) / d : -((-a) / d);
}

// Valid output range [lo, hi) so that 0 <= ox*stride + off < extent.
inline void valid_out_range(int64_t off, int64_t stride, int64_t extent, int64_t out_extent,
                            int64_t& lo, int64_t& hi) {
  lo = ceildiv(-off, stride);
  if (lo < 0) lo = 0;
  hi = floordiv(extent - 1 - off, stride) + 1;
  if (hi > out_extent) hi = out_extent;
  if (hi < lo) hi = lo;
}

}  // namespace nowcast::kernels::detail
