// Straight-line reference kernels. Every value is a gather over its
// contributing terms in a fixed order, so the parallel kernels can be checked
// against these for bit-identical output.

#include "nowcast/kernels.hpp"

namespace nowcast::kernels::serial {

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out, const Conv2dGeom& g) {
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t co = 0; co < g.cout; ++co) {
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          T acc = bias ? bias[co] : T(0);
          for (int64_t ci = 0; ci < g.cin; ++ci) {
            for (int64_t kh = 0; kh < g.k; ++kh) {
              const int64_t iy = oy * g.stride + kh - g.padding;
              if (iy < 0 || iy >= g.h) continue;
              for (int64_t kw = 0; kw < g.k; ++kw) {
                const int64_t ix = ox * g.stride + kw - g.padding;
                if (ix < 0 || ix >= g.w) continue;
                acc += kernel[((co * g.cin + ci) * g.k + kh) * g.k + kw] *
                       in[((b * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
          }
          out[((b * g.cout + co) * g.out_h + oy) * g.out_w + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const T* kernel, const T* dout, T* din, const Conv2dGeom& g) {
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t ci = 0; ci < g.cin; ++ci) {
      for (int64_t iy = 0; iy < g.h; ++iy) {
        for (int64_t ix = 0; ix < g.w; ++ix) {
          T acc = T(0);
          for (int64_t co = 0; co < g.cout; ++co) {
            for (int64_t kh = 0; kh < g.k; ++kh) {
              const int64_t ty = iy + g.padding - kh;
              if (ty < 0 || ty % g.stride != 0) continue;
              const int64_t oy = ty / g.stride;
              if (oy >= g.out_h) continue;
              for (int64_t kw = 0; kw < g.k; ++kw) {
                const int64_t tx = ix + g.padding - kw;
                if (tx < 0 || tx % g.stride != 0) continue;
                const int64_t ox = tx / g.stride;
                if (ox >= g.out_w) continue;
                acc += kernel[((co * g.cin + ci) * g.k + kh) * g.k + kw] *
                       dout[((b * g.cout + co) * g.out_h + oy) * g.out_w + ox];
              }
            }
          }
          din[((b * g.cin + ci) * g.h + iy) * g.w + ix] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const T* in, const T* dout, T* dkernel, T* dbias,
                            const Conv2dGeom& g) {
  // Each kernel-gradient element sums per-column subtotals in ascending ox;
  // a column accumulates over (batch, oy). The parallel kernel follows the
  // same order.
  for (int64_t co = 0; co < g.cout; ++co) {
    for (int64_t ci = 0; ci < g.cin; ++ci) {
      for (int64_t kh = 0; kh < g.k; ++kh) {
        for (int64_t kw = 0; kw < g.k; ++kw) {
          T acc = T(0);
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride + kw - g.padding;
            if (ix < 0 || ix >= g.w) continue;
            T colacc = T(0);
            for (int64_t b = 0; b < g.batch; ++b) {
              for (int64_t oy = 0; oy < g.out_h; ++oy) {
                const int64_t iy = oy * g.stride + kh - g.padding;
                if (iy < 0 || iy >= g.h) continue;
                colacc += dout[((b * g.cout + co) * g.out_h + oy) * g.out_w + ox] *
                          in[((b * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
            acc += colacc;
          }
          dkernel[((co * g.cin + ci) * g.k + kh) * g.k + kw] += acc;
        }
      }
    }
  }
  if (dbias) {
    for (int64_t co = 0; co < g.cout; ++co) {
      T acc = T(0);
      for (int64_t b = 0; b < g.batch; ++b) {
        for (int64_t i = 0; i < g.out_h * g.out_w; ++i) {
          acc += dout[(b * g.cout + co) * g.out_h * g.out_w + i];
        }
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

}  // namespace nowcast::kernels::serial
