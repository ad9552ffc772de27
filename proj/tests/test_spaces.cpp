#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "avgsim/errors.hpp"
#include "avgsim/random.hpp"
#include "avgsim/spaces.hpp"

using namespace avgsim;
constexpr double pi = std::numbers::pi;

namespace {

// Asymptotic two-sample Kolmogorov-Smirnov p-value.
double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lam = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) q += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(q, 0.0, 1.0);
}

}  // namespace

TEST_CASE("analytic spectra") {
  auto d = make_space(3, OperatorKind::dirichlet_laplacian_1d, 1.0);
  REQUIRE(d.dim() == 3);
  CHECK(d.eigenvalue(0) == doctest::Approx(pi * pi));
  CHECK(d.eigenvalue(2) == doctest::Approx(9 * pi * pi));
  CHECK(make_space(1, OperatorKind::dirichlet_laplacian_1d, 1.0).first_eigenvalue() == doctest::Approx(pi * pi));

  auto n = make_space(3, OperatorKind::neumann_laplacian_1d, 1.0, 2.0);
  CHECK(n.eigenvalue(0) == 2.0);
  CHECK(n.eigenvalue(1) == doctest::Approx(pi * pi));

  CHECK_THROWS_AS(make_space(0, OperatorKind::dirichlet_laplacian_1d, 1.0), InvalidArgument);
  CHECK_THROWS_AS(GalerkinSpace::from_eigenvalues({2.0, 1.0}, 1.0, "bad"), InvalidArgument);
  CHECK_THROWS_AS(GalerkinSpace::from_eigenvalues({0.0, 1.0}, 1.0, "bad"), InvalidArgument);
}

TEST_CASE("norms") {
  auto sp = make_space(3, OperatorKind::dirichlet_laplacian_1d, 1.0);
  State zero(3);
  CHECK(norm(sp, zero, NormKind::H) == 0.0);
  CHECK(norm(sp, zero, NormKind::V) == 0.0);
  CHECK(norm(sp, zero, NormKind::V_star) == 0.0);

  State e1(std::vector<double>{1, 0, 0});
  CHECK(norm(sp, e1, NormKind::H) == doctest::Approx(1.0));
  CHECK(norm(sp, e1, NormKind::V) == doctest::Approx(pi));
  CHECK(norm(sp, e1, NormKind::V_star) == doctest::Approx(1.0 / pi));

  // Parseval and the embedding |u|_H <= C |u|_V.
  KeyedStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    State u(3);
    double ss = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      u[k] = rng.normal();
      ss += u[k] * u[k];
    }
    CHECK(norm(sp, u, NormKind::H) == doctest::Approx(std::sqrt(ss)));
    CHECK(norm(sp, u, NormKind::H) <= sp.embedding_constant() * norm(sp, u, NormKind::V) * (1 + 1e-12));
    CHECK(norm(sp, u, NormKind::V_star) <= sp.embedding_constant() * norm(sp, u, NormKind::H) * (1 + 1e-12));
  }
}

TEST_CASE("time grid") {
  TimeGrid g(0.0, 1.0, 0.25);
  CHECK(g.points() == 5);
  CHECK(g.time(4) == 1.0);
  CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0.3), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid(1.0, 0.0, 0.1), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0.0), InvalidArgument);
}

TEST_CASE("noise is a pure function of its key") {
  NoiseSource src{42, 3, stream::W1, 20};
  auto a = wiener_increment(src, 0.1, 0.7);
  auto b = wiener_increment(src, 0.1, 0.7);
  CHECK(a == b);
  NoiseSource other = src;
  other.seed = 43;
  CHECK(wiener_increment(other, 0.1, 0.7) != a);
  other = src;
  other.stream_id = stream::W2;
  CHECK(wiener_increment(other, 0.1, 0.7) != a);

  // A cursor with a warm cache returns what a fresh query returns.
  NoiseCursor cur(src);
  for (double t = 0.0; t < 2.0; t += 0.013) (void)cur.increment(t, t + 0.013);
  CHECK(cur.increment(0.1, 0.7) == a);
  CHECK(cur.increment(-3.0, -1.0) == wiener_increment(src, -3.0, -1.0));

  CHECK_THROWS_AS(wiener_increment(src, 1.0, 0.5), InvalidArgument);
}

TEST_CASE("increments over adjacent intervals add exactly") {
  NoiseSource src{7, 2, stream::W2, 20};
  NoiseCursor cur(src);
  for (auto [s, m, t] : {std::array<double, 3>{0.0, 0.5, 1.0}, {0.0, 0.3, 0.7}, {-1.0, 0.0, 1.0}, {-2.5, -0.4, 3.1}}) {
    auto a = cur.increment(s, m), b = cur.increment(m, t), c = cur.increment(s, t);
    for (std::size_t k = 0; k < 2; ++k) CHECK(a[k] + b[k] == c[k]);
  }
  CHECK(cur.value(0, 0.0) == 0.0);
  // Refinement: sum of 2^6 sub-increments of [0, 1] equals the whole.
  for (std::size_t k = 0; k < 2; ++k) {
    double sum = 0.0;
    for (int i = 0; i < 64; ++i) sum += cur.increment(i / 64.0, (i + 1) / 64.0)[k];
    CHECK(sum == cur.increment(0.0, 1.0)[k]);
  }
}

TEST_CASE("increment statistics") {
  const std::size_t n = 20000;
  std::vector<double> pos(n), neg(n), straddle(n);
  double sp = 0, sn = 0, cross = 0, cross_modes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    NoiseSource src{1000 + i, 2, stream::W2, 20};
    NoiseCursor cur(src);
    auto p = cur.increment(0.0, 1.0);
    auto q = cur.increment(-1.0, 0.0);
    pos[i] = p[0];
    neg[i] = q[0];
    straddle[i] = cur.increment(-0.5, 0.5)[0] / 1.0;
    sp += p[0] * p[0];
    sn += q[0] * q[0];
    cross += p[0] * q[0];
    cross_modes += p[0] * p[1];
  }
  CHECK(sp / n == doctest::Approx(1.0).epsilon(0.03));
  CHECK(sn / n == doctest::Approx(1.0).epsilon(0.03));
  CHECK(std::abs(cross / n) < 0.03);
  CHECK(std::abs(cross_modes / n) < 0.03);
  CHECK(ks_pvalue(pos, straddle) > 0.01);
}

TEST_CASE("Brownian scaling: W(eps t) has the law of sqrt(eps) W(t)") {
  const std::size_t n = 10000;
  const double eps = 0.01;
  std::vector<double> small(n), scaled(n);
  for (std::size_t i = 0; i < n; ++i) {
    small[i] = wiener_increment({5000 + i, 1, stream::W1, 20}, 0.0, eps)[0];
    scaled[i] = std::sqrt(eps) * wiener_increment({90000 + i, 1, stream::W1, 20}, 0.0, 1.0)[0];
  }
  CHECK(ks_pvalue(small, scaled) > 0.01);
}

TEST_CASE("disjoint intervals are uncorrelated") {
  const std::size_t n = 20000;
  double c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    NoiseCursor cur({300000 + i, 1, stream::W1, 20});
    c += cur.increment(0.0, 0.37)[0] * cur.increment(0.37, 1.0)[0];
  }
  CHECK(std::abs(c / n) / std::sqrt(0.37 * 0.63) < 0.03);
}

TEST_CASE("sub-cell times use a bridge fill") {
  NoiseSource coarse{9, 1, stream::W1, 4};
  NoiseCursor cur(coarse);
  const double h = 1.0 / 64;  // below the 2^-4 cell
  double sum = 0.0;
  for (int i = 0; i < 64; ++i) sum += cur.increment(i * h, (i + 1) * h)[0];
  CHECK(sum == cur.increment(0.0, 1.0)[0]);
  CHECK(cur.increment(0.0, h)[0] != 0.0);
}
