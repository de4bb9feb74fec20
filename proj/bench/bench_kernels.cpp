// Times the parallel kernels against the serial references on model-sized
// problems and verifies that both produce bit-identical results.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "nowcast/kernels.hpp"
#include "nowcast/rng.hpp"

using namespace nowcast;
using kernels::Conv2dGeom;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool identical(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void bench_case(const char* name, const Conv2dGeom& g, int reps, Rng& rng) {
  const auto in = random_vec(static_cast<size_t>(g.batch * g.cin * g.h * g.w), rng);
  const auto ker = random_vec(static_cast<size_t>(g.cout * g.cin * g.k * g.k), rng);
  const auto bias = random_vec(static_cast<size_t>(g.cout), rng);
  const size_t out_n = static_cast<size_t>(g.batch * g.cout * g.out_h * g.out_w);
  const auto dout = random_vec(out_n, rng);
  std::vector<float> out_s(out_n), out_p(out_n);
  std::vector<float> din_s(in.size()), din_p(in.size());
  std::vector<float> dk_s(ker.size()), dk_p(ker.size());
  std::vector<float> db_s(bias.size()), db_p(bias.size());

  const double fwd_s = time_ms(
      [&] { kernels::serial::conv2d_forward(in.data(), ker.data(), bias.data(), out_s.data(), g); },
      reps);
  const double fwd_p = time_ms(
      [&] { kernels::conv2d_forward(in.data(), ker.data(), bias.data(), out_p.data(), g); }, reps);
  const double bwi_s = time_ms(
      [&] {
        std::fill(din_s.begin(), din_s.end(), 0.0f);
        kernels::serial::conv2d_backward_input(ker.data(), dout.data(), din_s.data(), g);
      },
      reps);
  const double bwi_p = time_ms(
      [&] {
        std::fill(din_p.begin(), din_p.end(), 0.0f);
        kernels::conv2d_backward_input(ker.data(), dout.data(), din_p.data(), g);
      },
      reps);
  const double bwp_s = time_ms(
      [&] {
        std::fill(dk_s.begin(), dk_s.end(), 0.0f);
        std::fill(db_s.begin(), db_s.end(), 0.0f);
        kernels::serial::conv2d_backward_params(in.data(), dout.data(), dk_s.data(), db_s.data(),
                                                g);
      },
      reps);
  const double bwp_p = time_ms(
      [&] {
        std::fill(dk_p.begin(), dk_p.end(), 0.0f);
        std::fill(db_p.begin(), db_p.end(), 0.0f);
        kernels::conv2d_backward_params(in.data(), dout.data(), dk_p.data(), db_p.data(), g);
      },
      reps);

  const bool ok = identical(out_s, out_p) && identical(din_s, din_p) && identical(dk_s, dk_p) &&
                  identical(db_s, db_p);
  std::printf("%-28s fwd %8.2f -> %8.2f ms (x%.2f)   bw_in %8.2f -> %8.2f (x%.2f)   bw_par %8.2f "
              "-> %8.2f (x%.2f)   %s\n",
              name, fwd_s, fwd_p, fwd_s / fwd_p, bwi_s, bwi_p, bwi_s / bwi_p, bwp_s, bwp_p,
              bwp_s / bwp_p, ok ? "bit-identical" : "MISMATCH");
}

void bench_upsample(int64_t planes, int64_t h, int64_t w, int reps, Rng& rng) {
  const auto in = random_vec(static_cast<size_t>(planes * h * w), rng);
  std::vector<float> out_s(in.size() * 4), out_p(in.size() * 4);
  const double up_s = time_ms(
      [&] { kernels::serial::upsample2x_forward(in.data(), out_s.data(), planes, h, w); }, reps);
  const double up_p =
      time_ms([&] { kernels::upsample2x_forward(in.data(), out_p.data(), planes, h, w); }, reps);
  std::printf("%-28s fwd %8.2f -> %8.2f ms (x%.2f)   %s\n", "upsample2x 64x64x64", up_s, up_p,
              up_s / up_p, identical(out_s, out_p) ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  Rng rng(7);
  std::printf("OpenMP max threads: %d\n", omp_get_max_threads());
  bench_case("conv 4x32->32 64x64 k3 s1",
             kernels::conv2d_geometry(4, 32, 64, 64, 32, 3, 1, 1), 5, rng);
  bench_case("conv 4x64->64 32x32 k3 s1",
             kernels::conv2d_geometry(4, 64, 32, 32, 64, 3, 1, 1), 5, rng);
  bench_case("conv 2x128->256 32x32 k3 s2",
             kernels::conv2d_geometry(2, 128, 32, 32, 256, 3, 2, 1), 5, rng);
  bench_case("conv 1x512->256 16x16 k3 s1",
             kernels::conv2d_geometry(1, 512, 16, 16, 256, 3, 1, 1), 5, rng);
  bench_upsample(64, 64, 64, 5, rng);
  return 0;
}
