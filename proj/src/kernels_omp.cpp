// Parallel convolution kernels. Work is split across independent output (or
// input-gradient) planes, and every accumulated value follows the same fixed
// term order as the serial reference:
//   forward          each output element sums over (cin, kh, kw)
//   backward input   each input-gradient element sums over (cout, kh, kw)
//   backward params  each kernel-gradient element is a sum of per-column
//                    subtotals: column ox accumulates over (batch, oy), and
//                    columns combine in ascending ox
// The inner loops below run one term per output element per iteration, so
// simd vectorization cannot reassociate any individual sum. Together with
// -ffp-contract=off this makes results bit-identical to kernels::serial at
// any thread count.

#include <vector>

#include "kernels_detail.hpp"
#include "nowcast/kernels.hpp"

namespace nowcast::kernels {

using detail::valid_out_range;

namespace {

// Per-tap valid output ranges along one axis; loop-invariant for a given
// geometry, so computed once per call instead of inside the pixel loops.
struct TapRanges {
  std::vector<int64_t> lo, hi;
  TapRanges(int64_t k, int64_t p, int64_t stride, int64_t extent, int64_t out_extent)
      : lo(k), hi(k) {
    for (int64_t i = 0; i < k; ++i) valid_out_range(i - p, stride, extent, out_extent, lo[i], hi[i]);
  }
};

}  // namespace

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out, const Conv2dGeom& g) {
  const int64_t cin = g.cin, h = g.h, w = g.w, k = g.k;
  const int64_t s = g.stride, p = g.padding, out_h = g.out_h, out_w = g.out_w;
  const TapRanges xr(k, p, s, w, out_w);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t co = 0; co < g.cout; ++co) {
      T* const out_plane = out + (b * g.cout + co) * out_h * out_w;
      const T bv = bias ? bias[co] : T(0);
      for (int64_t i = 0; i < out_h * out_w; ++i) out_plane[i] = bv;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const T* const in_plane = in + (b * cin + ci) * h * w;
        const T* const kplane = kernel + (co * cin + ci) * k * k;
        if (s == 1 && k == 3 && w >= 2) {
          // Fast path: one fused pass per (kh, row). Each output element sees
          // the same tap sequence (kw ascending) as the general path below,
          // so values are unchanged bit for bit.
          for (int64_t oy = 0; oy < out_h; ++oy) {
            T* const orow = out_plane + oy * out_w;
            for (int64_t kh = 0; kh < 3; ++kh) {
              const int64_t iy = oy + kh - 1;
              if (iy < 0 || iy >= h) continue;
              const T* const ir = in_plane + iy * w;
              const T k0 = kplane[kh * 3], k1 = kplane[kh * 3 + 1], k2 = kplane[kh * 3 + 2];
              T v0 = orow[0];
              v0 += k1 * ir[0];
              v0 += k2 * ir[1];
              orow[0] = v0;
#pragma omp simd
              for (int64_t ox = 1; ox < w - 1; ++ox) {
                T v = orow[ox];
                v += k0 * ir[ox - 1];
                v += k1 * ir[ox];
                v += k2 * ir[ox + 1];
                orow[ox] = v;
              }
              T v1 = orow[w - 1];
              v1 += k0 * ir[w - 2];
              v1 += k1 * ir[w - 1];
              orow[w - 1] = v1;
            }
          }
          continue;
        }
        for (int64_t oy = 0; oy < out_h; ++oy) {
          T* const orow = out_plane + oy * out_w;
          for (int64_t kh = 0; kh < k; ++kh) {
            const int64_t iy = oy * s + kh - p;
            if (iy < 0 || iy >= h) continue;
            const T* const irow = in_plane + iy * w;
            for (int64_t kw = 0; kw < k; ++kw) {
              const T kv = kplane[kh * k + kw];
              const int64_t lo = xr.lo[kw], hi = xr.hi[kw];
              if (s == 1) {
                const T* const ir = irow + kw - p;
#pragma omp simd
                for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += kv * ir[ox];
              } else {
                const T* const ir = irow + kw - p;
#pragma omp simd
                for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += kv * ir[ox * 2];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const T* kernel, const T* dout, T* din, const Conv2dGeom& g) {
  const int64_t cin = g.cin, cout = g.cout, h = g.h, w = g.w, k = g.k;
  const int64_t s = g.stride, p = g.padding, out_h = g.out_h, out_w = g.out_w;
  const TapRanges xr(k, p, s, w, out_w);
  const TapRanges yr(k, p, s, h, out_h);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      T* const din_plane = din + (b * cin + ci) * h * w;
      for (int64_t co = 0; co < cout; ++co) {
        const T* const dout_plane = dout + (b * cout + co) * out_h * out_w;
        const T* const kplane = kernel + (co * cin + ci) * k * k;
        if (s == 1 && k == 3 && w >= 2) {
          // Fast path, mirroring the forward one: per input element the taps
          // apply in ascending kw, identical to the general scatter below.
          for (int64_t kh = 0; kh < 3; ++kh) {
            for (int64_t oy = yr.lo[kh]; oy < yr.hi[kh]; ++oy) {
              T* const drow = din_plane + (oy + kh - 1) * w;
              const T* const dorow = dout_plane + oy * out_w;
              const T k0 = kplane[kh * 3], k1 = kplane[kh * 3 + 1], k2 = kplane[kh * 3 + 2];
              T v0 = drow[0];
              v0 += k0 * dorow[1];
              v0 += k1 * dorow[0];
              drow[0] = v0;
#pragma omp simd
              for (int64_t ix = 1; ix < w - 1; ++ix) {
                T v = drow[ix];
                v += k0 * dorow[ix + 1];
                v += k1 * dorow[ix];
                v += k2 * dorow[ix - 1];
                drow[ix] = v;
              }
              T v1 = drow[w - 1];
              v1 += k1 * dorow[w - 1];
              v1 += k2 * dorow[w - 2];
              drow[w - 1] = v1;
            }
          }
          continue;
        }
        for (int64_t kh = 0; kh < k; ++kh) {
          for (int64_t oy = yr.lo[kh]; oy < yr.hi[kh]; ++oy) {
            T* const drow = din_plane + (oy * s + kh - p) * w;
            const T* const dorow = dout_plane + oy * out_w;
            for (int64_t kw = 0; kw < k; ++kw) {
              const T kv = kplane[kh * k + kw];
              const int64_t lo = xr.lo[kw], hi = xr.hi[kw];
              if (s == 1) {
                T* const dr = drow + kw - p;
#pragma omp simd
                for (int64_t ox = lo; ox < hi; ++ox) dr[ox] += kv * dorow[ox];
              } else {
                T* const dr = drow + kw - p;
#pragma omp simd
                for (int64_t ox = lo; ox < hi; ++ox) dr[ox * 2] += kv * dorow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const T* in, const T* dout, T* dkernel, T* dbias,
                            const Conv2dGeom& g) {
  const int64_t cin = g.cin, h = g.h, w = g.w, k = g.k;
  const int64_t s = g.stride, p = g.padding, out_h = g.out_h, out_w = g.out_w;
  const TapRanges xr(k, p, s, w, out_w);
  const TapRanges yr(k, p, s, h, out_h);
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < g.cout; ++co) {
    if (s == 1 && k == 3 && w >= 2) {
      // Fast path: the three kw columns accumulate in one pass per row.
      // Each column element still sums over (b, oy) in ascending order and
      // untouched border entries stay exactly zero, so the final ascending
      // column sums match the general path bit for bit.
      std::vector<T> col(3 * out_w);
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t kh = 0; kh < 3; ++kh) {
          T* const c0 = col.data();
          T* const c1 = col.data() + out_w;
          T* const c2 = col.data() + 2 * out_w;
          for (int64_t i = 0; i < 3 * out_w; ++i) col[i] = T(0);
          for (int64_t b = 0; b < g.batch; ++b) {
            const T* const in_plane = in + (b * cin + ci) * h * w;
            const T* const dout_plane = dout + (b * g.cout + co) * out_h * out_w;
            for (int64_t oy = yr.lo[kh]; oy < yr.hi[kh]; ++oy) {
              const T* const ir = in_plane + (oy + kh - 1) * w;
              const T* const dorow = dout_plane + oy * out_w;
              c1[0] += dorow[0] * ir[0];
              c2[0] += dorow[0] * ir[1];
#pragma omp simd
              for (int64_t ox = 1; ox < w - 1; ++ox) {
                const T d = dorow[ox];
                c0[ox] += d * ir[ox - 1];
                c1[ox] += d * ir[ox];
                c2[ox] += d * ir[ox + 1];
              }
              c0[w - 1] += dorow[w - 1] * ir[w - 2];
              c1[w - 1] += dorow[w - 1] * ir[w - 1];
            }
          }
          for (int64_t kw = 0; kw < 3; ++kw) {
            const T* const c = col.data() + kw * out_w;
            T acc = T(0);
            for (int64_t ox = 0; ox < out_w; ++ox) acc += c[ox];
            dkernel[((co * cin + ci) * 3 + kh) * 3 + kw] += acc;
          }
        }
      }
      if (dbias) {
        T acc = T(0);
        for (int64_t b = 0; b < g.batch; ++b) {
          const T* const dout_plane = dout + (b * g.cout + co) * out_h * out_w;
          for (int64_t i = 0; i < out_h * out_w; ++i) acc += dout_plane[i];
        }
        dbias[co] += acc;
      }
      continue;
    }
    std::vector<T> col(out_w);
    for (int64_t ci = 0; ci < cin; ++ci) {
      for (int64_t kh = 0; kh < k; ++kh) {
        for (int64_t kw = 0; kw < k; ++kw) {
          const int64_t lo = xr.lo[kw], hi = xr.hi[kw];
          for (int64_t ox = lo; ox < hi; ++ox) col[ox] = T(0);
          for (int64_t b = 0; b < g.batch; ++b) {
            const T* const in_plane = in + (b * cin + ci) * h * w;
            const T* const dout_plane = dout + (b * g.cout + co) * out_h * out_w;
            for (int64_t oy = yr.lo[kh]; oy < yr.hi[kh]; ++oy) {
              const T* const irow = in_plane + (oy * s + kh - p) * w + kw - p;
              const T* const dorow = dout_plane + oy * out_w;
              T* const c = col.data();
              if (s == 1) {
#pragma omp simd
                for (int64_t ox = lo; ox < hi; ++ox) c[ox] += dorow[ox] * irow[ox];
              } else {
#pragma omp simd
                for (int64_t ox = lo; ox < hi; ++ox) c[ox] += dorow[ox] * irow[ox * 2];
              }
            }
          }
          T acc = T(0);
          for (int64_t ox = lo; ox < hi; ++ox) acc += col[ox];
          dkernel[((co * cin + ci) * k + kh) * k + kw] += acc;
        }
      }
    }
    if (dbias) {
      T acc = T(0);
      for (int64_t b = 0; b < g.batch; ++b) {
        const T* const dout_plane = dout + (b * g.cout + co) * out_h * out_w;
        for (int64_t i = 0; i < out_h * out_w; ++i) acc += dout_plane[i];
      }
      dbias[co] += acc;
    }
  }
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*,
                                    const Conv2dGeom&);
template void conv2d_forward<double>(const double*, const double*, const double*, double*,
                                     const Conv2dGeom&);
template void conv2d_backward_input<float>(const float*, const float*, float*, const Conv2dGeom&);
template void conv2d_backward_input<double>(const double*, const double*, double*,
                                            const Conv2dGeom&);
template void conv2d_backward_params<float>(const float*, const float*, float*, float*,
                                            const Conv2dGeom&);
template void conv2d_backward_params<double>(const double*, const double*, double*, double*,
                                             const Conv2dGeom&);

}  // namespace nowcast::kernels
