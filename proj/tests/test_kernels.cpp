#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <omp.h>

#include <cstring>
#include <vector>

#include "nowcast/kernels.hpp"
#include "nowcast/rng.hpp"

using namespace nowcast::kernels;
using nowcast::Rng;

namespace {

template <typename T>
std::vector<T> random_vec(size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

template <typename T>
bool bytes_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

struct Geometry {
  int64_t b, cin, cout, h, w, k, stride;
};

// Covers the fused k=3/stride-1 fast path, both strides, k=1 and k=5 general
// paths, and degenerate extents (w=1 skips the fast path, w=2 runs it with
// nothing between the edge columns).
const Geometry kGeometries[] = {
    {2, 3, 4, 8, 7, 3, 1}, {1, 5, 2, 9, 9, 5, 1}, {2, 4, 4, 8, 8, 3, 2},
    {1, 2, 3, 7, 8, 1, 1}, {1, 3, 2, 6, 5, 3, 2}, {2, 1, 1, 4, 2, 3, 1},
    {1, 2, 2, 5, 1, 3, 1}, {1, 1, 1, 1, 1, 1, 1},
};

// Runs fn at 1 thread and again at `threads`, returning both results so the
// caller can check bit-identity across thread counts.
template <typename Fn>
auto with_threads(int threads, Fn fn) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto serial_count = fn();
  omp_set_num_threads(threads);
  auto parallel_count = fn();
  omp_set_num_threads(saved);
  return std::make_pair(std::move(serial_count), std::move(parallel_count));
}

template <typename T>
void check_all_kernels_match() {
  Rng rng(99);
  for (const auto& g0 : kGeometries) {
    CAPTURE(g0.b);
    CAPTURE(g0.cin);
    CAPTURE(g0.h);
    CAPTURE(g0.w);
    CAPTURE(g0.k);
    CAPTURE(g0.stride);
    const auto g = conv2d_geometry(g0.b, g0.cin, g0.h, g0.w, g0.cout, g0.k, g0.stride,
                                   (g0.k - 1) / 2);
    const auto in = random_vec<T>(static_cast<size_t>(g.batch * g.cin * g.h * g.w), rng);
    const auto kernel = random_vec<T>(static_cast<size_t>(g.cout * g.cin * g.k * g.k), rng);
    const auto bias = random_vec<T>(static_cast<size_t>(g.cout), rng);
    const size_t out_n = static_cast<size_t>(g.batch * g.cout * g.out_h * g.out_w);
    const auto dout = random_vec<T>(out_n, rng);

    // forward: serial reference vs parallel kernel, and 1 vs 4 threads
    std::vector<T> ref_out(out_n), out(out_n);
    serial::conv2d_forward(in.data(), kernel.data(), bias.data(), ref_out.data(), g);
    auto [out1, out4] = with_threads(4, [&] {
      std::fill(out.begin(), out.end(), T(0));
      conv2d_forward(in.data(), kernel.data(), bias.data(), out.data(), g);
      return out;
    });
    CHECK(bytes_equal(ref_out, out1));
    CHECK(bytes_equal(out1, out4));

    // input gradient: both accumulate into zero-filled buffers
    std::vector<T> ref_din(in.size(), T(0));
    serial::conv2d_backward_input(kernel.data(), dout.data(), ref_din.data(), g);
    auto [din1, din4] = with_threads(4, [&] {
      std::vector<T> din(in.size(), T(0));
      conv2d_backward_input(kernel.data(), dout.data(), din.data(), g);
      return din;
    });
    CHECK(bytes_equal(ref_din, din1));
    CHECK(bytes_equal(din1, din4));

    // parameter gradients
    std::vector<T> ref_dk(kernel.size(), T(0)), ref_db(bias.size(), T(0));
    serial::conv2d_backward_params(in.data(), dout.data(), ref_dk.data(), ref_db.data(), g);
    auto [dkb1, dkb4] = with_threads(4, [&] {
      std::vector<T> dk(kernel.size(), T(0)), db(bias.size(), T(0));
      conv2d_backward_params(in.data(), dout.data(), dk.data(), db.data(), g);
      dk.insert(dk.end(), db.begin(), db.end());
      return dk;
    });
    std::vector<T> ref_dkb = ref_dk;
    ref_dkb.insert(ref_dkb.end(), ref_db.begin(), ref_db.end());
    CHECK(bytes_equal(ref_dkb, dkb1));
    CHECK(bytes_equal(dkb1, dkb4));
  }
}

}  // namespace

TEST_CASE("parallel conv kernels match the serial reference bit for bit (float)") {
  check_all_kernels_match<float>();
}

TEST_CASE("parallel conv kernels match the serial reference bit for bit (double)") {
  check_all_kernels_match<double>();
}

TEST_CASE("upsample kernels match and are thread-invariant") {
  Rng rng(7);
  const int64_t planes = 5, h = 6, w = 7;
  const auto in = random_vec<float>(static_cast<size_t>(planes * h * w), rng);
  const auto dout = random_vec<float>(static_cast<size_t>(planes * 4 * h * w), rng);

  std::vector<float> ref_out(in.size() * 4);
  serial::upsample2x_forward(in.data(), ref_out.data(), planes, h, w);
  auto [out1, out4] = with_threads(4, [&] {
    std::vector<float> out(in.size() * 4);
    upsample2x_forward(in.data(), out.data(), planes, h, w);
    return out;
  });
  CHECK(bytes_equal(ref_out, out1));
  CHECK(bytes_equal(out1, out4));

  std::vector<float> ref_din(in.size(), 0.0f);
  serial::upsample2x_backward(dout.data(), ref_din.data(), planes, h, w);
  auto [din1, din4] = with_threads(4, [&] {
    std::vector<float> din(in.size(), 0.0f);
    upsample2x_backward(dout.data(), din.data(), planes, h, w);
    return din;
  });
  CHECK(bytes_equal(ref_din, din1));
  CHECK(bytes_equal(din1, din4));
}

TEST_CASE("upsample interpolation weights") {
  // One 2x2 plane. Align-corners-false: output column x samples the source at
  // (x + 0.5)/2 - 0.5, so a row upsamples to [a, 0.75a+0.25b, 0.25a+0.75b, b].
  const double a = 0.3, b = 0.9, c = -0.4, d = 0.1;
  std::vector<double> in = {a, b, c, d};
  std::vector<double> out(16);
  upsample2x_forward(in.data(), out.data(), 1, 2, 2);

  const double row0[] = {a, 0.75 * a + 0.25 * b, 0.25 * a + 0.75 * b, b};
  const double row3[] = {c, 0.75 * c + 0.25 * d, 0.25 * c + 0.75 * d, d};
  for (int x = 0; x < 4; ++x) {
    CHECK(out[x] == doctest::Approx(row0[x]).epsilon(1e-12));
    CHECK(out[12 + x] == doctest::Approx(row3[x]).epsilon(1e-12));
    // interior rows blend the outer rows with the same 3:1 weights
    CHECK(out[4 + x] == doctest::Approx(0.75 * row0[x] + 0.25 * row3[x]).epsilon(1e-12));
    CHECK(out[8 + x] == doctest::Approx(0.25 * row0[x] + 0.75 * row3[x]).epsilon(1e-12));
  }
}

TEST_CASE("geometry validation") {
  CHECK_THROWS_AS((void)conv2d_geometry(1, 1, 4, 4, 1, 2, 1, 0), std::invalid_argument);  // even k
  CHECK_THROWS_AS((void)conv2d_geometry(1, 1, 4, 4, 1, 3, 3, 1), std::invalid_argument);  // stride 3
  CHECK_THROWS_AS((void)conv2d_geometry(1, 1, 4, 4, 1, 3, 1, 0), std::invalid_argument);  // bad pad
  CHECK_THROWS_AS((void)conv2d_geometry(0, 1, 4, 4, 1, 3, 1, 1), std::invalid_argument);  // empty

  const auto g = conv2d_geometry(2, 3, 9, 8, 4, 3, 2, 1);
  CHECK(g.out_h == 5);
  CHECK(g.out_w == 4);
}
