#pragma once

#include <cstdint>

namespace nowcast::kernels {

/// Validated geometry of a same-padded 2-D convolution.
struct Conv2dGeom {
  int64_t batch = 0;
  int64_t cin = 0;
  int64_t h = 0;
  int64_t w = 0;
  int64_t cout = 0;
  int64_t k = 0;  // odd
  int64_t stride = 1;
  int64_t padding = 0;  // (k-1)/2
  int64_t out_h = 0;
  int64_t out_w = 0;
};

/// Computes output extents and validates k odd, stride in {1,2},
/// padding == (k-1)/2. Throws std::invalid_argument otherwise.
Conv2dGeom conv2d_geometry(int64_t batch, int64_t cin, int64_t h, int64_t w,
                           int64_t cout, int64_t k, int64_t stride, int64_t padding);

// Production kernels (OpenMP-parallel). All tensors are dense row-major:
// in[b][cin][h][w], kernel[cout][cin][kh][kw], out[b][cout][oh][ow].
// Per output element the accumulation order is fixed: (cin, kh, kw) for the
// forward pass, (cout, kh, kw) for the input gradient; each weight-gradient
// element sums per-column subtotals in ascending ox, a column accumulating
// over (b, oh). Results are therefore bit-identical for any thread count.
// They also match the serial reference implementations below exactly, with
// one qualifier: conv2d_backward_input applies its terms as individual +=
// updates while the reference adds one gathered sum, so the two agree bit for
// bit when din starts zero-filled (as freshly allocated gradients do) and can
// differ in last-bit grouping otherwise.
template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out, const Conv2dGeom& g);

/// Accumulates (+=) into din.
template <typename T>
void conv2d_backward_input(const T* kernel, const T* dout, T* din, const Conv2dGeom& g);

/// Accumulates (+=) into dkernel and dbias.
template <typename T>
void conv2d_backward_params(const T* in, const T* dout, T* dkernel, T* dbias, const Conv2dGeom& g);

/// Bilinear 2x upsampling, align-corners-false: output pixel o samples the
/// source at (o + 0.5)/2 - 0.5, clamped to the valid range. planes = B*C.
template <typename T>
void upsample2x_forward(const T* in, T* out, int64_t planes, int64_t h, int64_t w);

/// Accumulates (+=) into din.
template <typename T>
void upsample2x_backward(const T* dout, T* din, int64_t planes, int64_t h, int64_t w);

// Straightforward single-threaded reference implementations, kept for
// correctness tests and benchmarking of the parallel kernels.
namespace serial {

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out, const Conv2dGeom& g);

template <typename T>
void conv2d_backward_input(const T* kernel, const T* dout, T* din, const Conv2dGeom& g);

template <typename T>
void conv2d_backward_params(const T* in, const T* dout, T* dkernel, T* dbias, const Conv2dGeom& g);

template <typename T>
void upsample2x_forward(const T* in, T* out, int64_t planes, int64_t h, int64_t w);

template <typename T>
void upsample2x_backward(const T* dout, T* din, int64_t planes, int64_t h, int64_t w);

}  // namespace serial

}  // namespace nowcast::kernels
