// Bilinear 2x upsampling. Output pixel o samples the source at
// (o + 0.5) / 2 - 0.5, clamped to [0, n-1] ("align corners" off), then
// interpolates the two nearest cells. Serial and parallel variants share the
// per-plane body; the parallel ones only split the plane loop.

#include "nowcast/kernels.hpp"

namespace nowcast::kernels {

namespace {

template <typename T>
struct Tap {
  int64_t i0, i1;
  T frac;
};

template <typename T>
Tap<T> tap_at(int64_t o, int64_t n) {
  T src = T(o) * T(0.5) - T(0.25);
  if (src < T(0)) src = T(0);
  if (src > T(n - 1)) src = T(n - 1);
  Tap<T> t;
  t.i0 = static_cast<int64_t>(src);
  t.i1 = t.i0 + 1 < n ? t.i0 + 1 : n - 1;
  t.frac = src - T(t.i0);
  return t;
}

template <typename T>
void upsample_plane(const T* in, T* out, int64_t h, int64_t w) {
  for (int64_t oy = 0; oy < 2 * h; ++oy) {
    const Tap<T> ty = tap_at<T>(oy, h);
    const T* r0 = in + ty.i0 * w;
    const T* r1 = in + ty.i1 * w;
    T* orow = out + oy * 2 * w;
    for (int64_t ox = 0; ox < 2 * w; ++ox) {
      const Tap<T> tx = tap_at<T>(ox, w);
      const T top = r0[tx.i0] * (T(1) - tx.frac) + r0[tx.i1] * tx.frac;
      const T bot = r1[tx.i0] * (T(1) - tx.frac) + r1[tx.i1] * tx.frac;
      orow[ox] = top * (T(1) - ty.frac) + bot * ty.frac;
    }
  }
}

// Scatters each output-gradient pixel to its four taps in output row-major
// order, the fixed accumulation order for both variants.
template <typename T>
void upsample_plane_backward(const T* dout, T* din, int64_t h, int64_t w) {
  for (int64_t oy = 0; oy < 2 * h; ++oy) {
    const Tap<T> ty = tap_at<T>(oy, h);
    T* d0 = din + ty.i0 * w;
    T* d1 = din + ty.i1 * w;
    const T* dorow = dout + oy * 2 * w;
    for (int64_t ox = 0; ox < 2 * w; ++ox) {
      const Tap<T> tx = tap_at<T>(ox, w);
      const T gy = dorow[ox];
      d0[tx.i0] += gy * (T(1) - ty.frac) * (T(1) - tx.frac);
      d0[tx.i1] += gy * (T(1) - ty.frac) * tx.frac;
      d1[tx.i0] += gy * ty.frac * (T(1) - tx.frac);
      d1[tx.i1] += gy * ty.frac * tx.frac;
    }
  }
}

}  // namespace

template <typename T>
void upsample2x_forward(const T* in, T* out, int64_t planes, int64_t h, int64_t w) {
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    upsample_plane(in + pl * h * w, out + pl * 4 * h * w, h, w);
  }
}

template <typename T>
void upsample2x_backward(const T* dout, T* din, int64_t planes, int64_t h, int64_t w) {
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    upsample_plane_backward(dout + pl * 4 * h * w, din + pl * h * w, h, w);
  }
}

namespace serial {

template <typename T>
void upsample2x_forward(const T* in, T* out, int64_t planes, int64_t h, int64_t w) {
  for (int64_t pl = 0; pl < planes; ++pl) {
    upsample_plane(in + pl * h * w, out + pl * 4 * h * w, h, w);
  }
}

template <typename T>
void upsample2x_backward(const T* dout, T* din, int64_t planes, int64_t h, int64_t w) {
  for (int64_t pl = 0; pl < planes; ++pl) {
    upsample_plane_backward(dout + pl * 4 * h * w, din + pl * h * w, h, w);
  }
}

template void upsample2x_forward<float>(const float*, float*, int64_t, int64_t, int64_t);
template void upsample2x_forward<double>(const double*, double*, int64_t, int64_t, int64_t);
template void upsample2x_backward<float>(const float*, float*, int64_t, int64_t, int64_t);
template void upsample2x_backward<double>(const double*, double*, int64_t, int64_t, int64_t);

}  // namespace serial

template void upsample2x_forward<float>(const float*, float*, int64_t, int64_t, int64_t);
template void upsample2x_forward<double>(const double*, double*, int64_t, int64_t, int64_t);
template void upsample2x_backward<float>(const float*, float*, int64_t, int64_t, int64_t);
template void upsample2x_backward<double>(const double*, double*, int64_t, int64_t, int64_t);

}  // namespace nowcast::kernels
