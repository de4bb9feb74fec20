#include <stdexcept>
#include <string>

#include "nowcast/kernels.hpp"

namespace nowcast::kernels {

Conv2dGeom conv2d_geometry(int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout,
                           int64_t k, int64_t stride, int64_t padding) {
  if (batch < 1 || cin < 1 || h < 1 || w < 1 || cout < 1) {
    throw std::invalid_argument("conv2d: all tensor extents must be positive");
  }
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(k));
  }
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (padding != (k - 1) / 2) {
    throw std::invalid_argument("conv2d: padding must be (k-1)/2 so that stride 1 preserves size");
  }
  Conv2dGeom g;
  g.batch = batch;
  g.cin = cin;
  g.h = h;
  g.w = w;
  g.cout = cout;
  g.k = k;
  g.stride = stride;
  g.padding = padding;
  // With p = (k-1)/2 this is ceil(h / stride): size-preserving at stride 1,
  // exact halving at stride 2 for even extents.
  g.out_h = (h + 2 * padding - k) / stride + 1;
  g.out_w = (w + 2 * padding - k) / stride + 1;
  return g;
}

}  // namespace nowcast::kernels
