#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/random.hpp"

using namespace avgsim;

namespace {

std::vector<double> draw(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  KeyedStream rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("scalar reductions agree with naive sums") {
  const auto& s = kernels::scalar_table();
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u}) {
    auto a = draw(n, 10 + n), b = draw(n, 20 + n), w = draw(n, 30 + n);
    double dot = 0, ss = 0, wss = 0, dist = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += a[i] * b[i];
      ss += a[i] * a[i];
      wss += w[i] * a[i] * a[i];
      dist += (a[i] - b[i]) * (a[i] - b[i]);
    }
    CHECK(s.dot(a.data(), b.data(), n) == doctest::Approx(dot).epsilon(1e-12));
    CHECK(s.sum_squares(a.data(), n) == doctest::Approx(ss).epsilon(1e-12));
    CHECK(s.weighted_sum_squares(w.data(), a.data(), n) == doctest::Approx(wss).epsilon(1e-12));
    CHECK(s.squared_distance(a.data(), b.data(), n) == doctest::Approx(dist).epsilon(1e-12));
  }
}

TEST_CASE("semi-implicit update matches its formula") {
  const auto& s = kernels::scalar_table();
  auto y = draw(9, 1), drift = draw(9, 2), diff = draw(9, 3), dw = draw(9, 4);
  std::vector<double> denom(9);
  for (std::size_t i = 0; i < 9; ++i) denom[i] = 1.0 + 0.1 * i;
  auto expect = y;
  for (std::size_t i = 0; i < 9; ++i) expect[i] = (y[i] + 0.01 * drift[i] + diff[i] * dw[i]) / denom[i];
  s.semi_implicit_update(y.data(), drift.data(), 0.01, diff.data(), dw.data(), denom.data(), 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

#if defined(__x86_64__) || defined(_M_X64)
TEST_CASE("avx2 kernels are bit-identical to the scalar reference") {
  if (!kernels::isa_available(kernels::Isa::avx2)) {
    MESSAGE("avx2 not available on this host");
    return;
  }
  const auto& s = kernels::scalar_table();
  const auto& v = kernels::avx2_table();
  for (std::size_t n = 0; n < 70; ++n) {
    auto a = draw(n, 100 + n, 3.0), b = draw(n, 200 + n), w = draw(n, 300 + n, 0.5);
    CHECK(same_bits(s.dot(a.data(), b.data(), n), v.dot(a.data(), b.data(), n)));
    CHECK(same_bits(s.sum_squares(a.data(), n), v.sum_squares(a.data(), n)));
    CHECK(same_bits(s.weighted_sum_squares(w.data(), a.data(), n), v.weighted_sum_squares(w.data(), a.data(), n)));
    CHECK(same_bits(s.squared_distance(a.data(), b.data(), n), v.squared_distance(a.data(), b.data(), n)));

    auto y1 = b, y2 = b;
    s.axpy(0.37, a.data(), y1.data(), n);
    v.axpy(0.37, a.data(), y2.data(), n);
    CHECK(same_bits(y1, y2));

    auto drift = draw(n, 400 + n), diff = draw(n, 500 + n), dw = draw(n, 600 + n);
    std::vector<double> denom(n);
    for (std::size_t i = 0; i < n; ++i) denom[i] = 1.0 + std::abs(w[i]);
    y1 = b;
    y2 = b;
    s.semi_implicit_update(y1.data(), drift.data(), 1e-3, diff.data(), dw.data(), denom.data(), n);
    v.semi_implicit_update(y2.data(), drift.data(), 1e-3, diff.data(), dw.data(), denom.data(), n);
    CHECK(same_bits(y1, y2));

    std::vector<double> sum1(n, 0.5), sq1(n, 0.25), sum2 = sum1, sq2 = sq1;
    s.accumulate_moments(a.data(), sum1.data(), sq1.data(), n);
    v.accumulate_moments(a.data(), sum2.data(), sq2.data(), n);
    CHECK(same_bits(sum1, sum2));
    CHECK(same_bits(sq1, sq2));
  }
}

TEST_CASE("gemv gives identical bits under either dispatch") {
  if (!kernels::isa_available(kernels::Isa::avx2)) return;
  const std::size_t rows = 13, cols = 29;
  auto m = draw(rows * cols, 7), x = draw(cols, 8);
  std::vector<double> o1(rows), o2(rows);
  kernels::force_isa(kernels::Isa::scalar);
  kernels::gemv(m, rows, cols, x, o1);
  kernels::force_isa(kernels::Isa::avx2);
  kernels::gemv(m, rows, cols, x, o2);
  CHECK(same_bits(o1, o2));
}
#endif

TEST_CASE("isa names and the scalar override") {
  CHECK(kernels::isa_available(kernels::Isa::scalar));
  CHECK(kernels::isa_name(kernels::Isa::scalar) == "scalar");
  kernels::force_isa(kernels::Isa::scalar);
  CHECK(kernels::active_isa() == kernels::Isa::scalar);
  if (!kernels::isa_available(kernels::Isa::avx2)) CHECK_THROWS_AS(kernels::force_isa(kernels::Isa::avx2), InvalidArgument);
}
