#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "avgsim/ergodic.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/harness.hpp"
#include "avgsim/random.hpp"

using namespace avgsim;

namespace {

CoefficientBundle heat(std::size_t dim, AlmostPeriodicScalar phi, double c) {
  ExampleParams p;
  p.phi = std::move(phi);
  p.c = c;
  SpacesConfig sc;
  sc.slow_dim = dim;
  sc.fast_dim = dim;
  return build_system({ExampleName::cahn_hilliard_heat_1d, p}, sc.slow(), sc.fast());
}

State harmonic(std::size_t n, double amp) {
  State s(n);
  for (std::size_t k = 0; k < n; ++k) s[k] = amp / double(k + 1);
  return s;
}

// m' = (phi(t) - b) m + a x on [s, t], classical RK4.
double mean_ode(const AlmostPeriodicScalar& phi, double b, double ax, double m, double s, double t, std::size_t n) {
  const double h = (t - s) / double(n);
  auto f = [&](double u, double v) { return (phi(u) - b) * v + ax; };
  for (std::size_t i = 0; i < n; ++i) {
    const double u = s + h * double(i);
    const double k1 = f(u, m), k2 = f(u + h / 2, m + h / 2 * k1), k3 = f(u + h / 2, m + h / 2 * k2),
                 k4 = f(u + h, m + h * k3);
    m += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return m;
}

std::vector<State> gaussian_cloud(std::size_t M, std::size_t dim, double shift, std::uint64_t seed) {
  KeyedStream rng(seed);
  std::vector<State> out(M, State(dim));
  for (auto& p : out) {
    for (std::size_t k = 0; k < dim; ++k) p[k] = rng.normal();
    p[0] += shift;
  }
  return out;
}

}  // namespace

TEST_CASE("noise-free ensemble collapses onto x_k / lambda_k") {
  auto b = heat(4, AlmostPeriodicScalar::zero(), 0.0);
  State x = harmonic(4, 1.0);
  EnsembleOptions o;
  o.M = 50;
  o.S = 40.0 / b.fast_space.first_eigenvalue();
  o.bias_tol = 0.0;
  auto e = estimate_evolution_measure(b, x, 3.0, o);
  auto m = e.mean();
  auto v = e.variance();
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(v[k] < 1e-10);
    CHECK(m[k] == doctest::Approx(x[k] / b.fast_space.eigenvalue(k)).epsilon(1e-9));
  }
  CHECK(e.pullback_horizon >= o.S);
  CHECK(e.pullback_horizon < o.S + o.step);
}

TEST_CASE("ensemble mean follows the pullback mean equation") {
  auto b = heat(3, AlmostPeriodicScalar::sine(), 0.5);
  State x = harmonic(3, 2.0);
  EnsembleOptions o;
  o.M = 2000;
  o.S = 3.0;
  o.step = 0x1.0p-11;
  o.bias_tol = 0.0;
  const double t = 1.3;
  auto e = estimate_evolution_measure(b, x, t, o);
  auto m = e.mean();
  auto v = e.variance();
  for (std::size_t k = 0; k < 3; ++k) {
    const double oracle = mean_ode(b.phi, b.fast_space.eigenvalue(k), b.a_coupling * x[k], 0.0, t - e.pullback_horizon,
                                   t, 200000);
    const double se = std::sqrt(v[k] / double(o.M));
    INFO("mode " << k << " mean " << m[k] << " oracle " << oracle << " se " << se);
    CHECK(std::abs(m[k] - oracle) < 5.0 * se + 5e-3 * std::abs(oracle));
  }
}

TEST_CASE("pullback bias guard and the single-particle ensemble") {
  auto b = heat(4, AlmostPeriodicScalar::sine(), 0.5);
  State x = harmonic(4, 1.0);
  EnsembleOptions o;
  o.S = 0.1;
  o.bias_tol = 1e-3;
  const double need = required_pullback(b, x, State(4), 1e-3);
  CHECK(pullback_bias_bound(b, x, State(4), need) == doctest::Approx(1e-3));
  try {
    estimate_evolution_measure(b, x, 0.0, o);
    FAIL("expected PullbackTooShort");
  } catch (const PullbackTooShort& e) {
    CHECK(e.required_S() == doctest::Approx(need));
  }
  o.S = need;
  o.M = 1;
  auto e = estimate_evolution_measure(b, x, 0.0, o);
  CHECK(e.size() == 1);
  CHECK(e.bias_bound <= 1e-3 * (1 + 1e-9));
  CHECK(e.variance() == std::vector<double>(4, 0.0));
}

TEST_CASE("second moment of the invariant family grows at most affinely in |x|^2") {
  auto b = heat(4, AlmostPeriodicScalar::sine(), 0.5);
  EnsembleOptions o;
  o.M = 200;
  o.bias_tol = 0.0;
  o.S = 5.0;
  for (double amp : {0.0, 0.5, 2.0, 8.0, 32.0}) {
    auto e = estimate_evolution_measure(b, harmonic(4, amp), 0.0, o);
    CHECK(e.moment_constant <= b.profile.generic_C);
  }
}

TEST_CASE("synchronous coupling: deterministic and noisy contraction rates") {
  State y1(4), y2(4);
  y1[0] = 1.0;
  y2[0] = -1.0;
  {
    auto b = heat(4, AlmostPeriodicScalar::zero(), 0.0);
    MixingOptions o;
    o.horizon = 1.0;
    o.step = 0x1.0p-12;
    o.replicas = 4;
    auto r = estimate_mixing_rate(b, harmonic(4, 1), y1, y2, o);
    REQUIRE(r.theoretical_gamma.has_value());
    CHECK(r.fitted_rate == doctest::Approx(-*r.theoretical_gamma).epsilon(0.01));
    CHECK(r.fit_r2 > 0.999);
  }
  {
    auto b = heat(4, AlmostPeriodicScalar::zero(), 0.5);
    MixingOptions o;
    o.horizon = 1.0;
    o.step = 0x1.0p-10;
    o.replicas = 500;
    auto r = estimate_mixing_rate(b, harmonic(4, 1), y1, y2, o);
    CHECK(r.fitted_rate == doctest::Approx(-*r.theoretical_gamma).epsilon(0.1));
    o.synchronous = false;
    auto ind = estimate_mixing_rate(b, harmonic(4, 1), y1, y2, o);
    CHECK(ind.fitted_rate > -0.5 * *r.theoretical_gamma);
  }
  {
    auto b = heat(4, AlmostPeriodicScalar::sine(), 0.5);
    MixingOptions o;
    o.horizon = 0.5;
    o.replicas = 10;
    auto r = estimate_mixing_rate(b, harmonic(4, 1), y1, y1, o);
    CHECK(r.degenerate);
    CHECK(r.mean_sq_distance.front() == 0.0);
  }
}

TEST_CASE("semigroup expectations") {
  auto b = heat(3, AlmostPeriodicScalar::sine(), 0.5);
  State x = harmonic(3, 1.0), y = harmonic(3, 0.3);
  auto one = semigroup_expectation(b, x, 0.0, 0.5, y, [](auto) { return 1.0; }, 100, 0x1.0p-9, 1);
  CHECK(one.estimate == 1.0);
  CHECK(one.stderr_ == 0.0);
  auto same = semigroup_expectation(b, x, 0.7, 0.7, y, [](auto v) { return v[0] * v[0]; }, 100, 0x1.0p-9, 1);
  CHECK(same.estimate == y[0] * y[0]);

  const double s = 0.5, t = 0.75;
  auto lin = semigroup_expectation(b, x, s, t, y, [](auto v) { return v[0]; }, 4000, 0x1.0p-12, 9);
  const double oracle = mean_ode(b.phi, b.fast_space.eigenvalue(0), b.a_coupling * x[0], y[0], s, t, 20000);
  CHECK(std::abs(lin.estimate - oracle) < 4.0 * lin.stderr_ + 1e-3 * std::abs(oracle));
}

TEST_CASE("evolution check is exact when t = s") {
  auto b = heat(3, AlmostPeriodicScalar::sine(), 0.5);
  EvolutionCheckOptions o;
  o.M = 50;
  o.S = 3.0;
  std::vector<TestFunction> fns{[](auto v) { return v[0]; }, [](auto v) { return std::tanh(v[1]); }};
  auto r = check_evolution_property(b, harmonic(3, 1), 2.0, 2.0, fns, o);
  CHECK(r.passed);
  CHECK(r.max_abs_z == 0.0);
  for (double d : r.discrepancy) CHECK(d == 0.0);
}

TEST_CASE("dictionary distance") {
  auto a = gaussian_cloud(4000, 2, 0.0, 1);
  auto dict = make_dictionary(2, 256, 1);
  CHECK(dict.size() == 256);
  for (const auto& f : dict) {
    const double an = std::sqrt(f.a[0] * f.a[0] + f.a[1] * f.a[1]);
    CHECK(an / (an + 1) + 1 / (an + 1) <= 1.0 + 1e-12);  // Lipschitz + sup norm bound
  }
  CHECK(dbl_distance(a, a, dict) == 0.0);

  std::vector<State> p{State(std::vector<double>{0.0, 0.0})}, q{State(std::vector<double>{0.3, -0.4})};
  const double d_pq = dbl_distance(p, q, dict);
  CHECK(d_pq > 0.0);
  CHECK(d_pq <= 0.5);

  auto b = gaussian_cloud(4000, 2, 1.0, 2);
  const double d1 = dbl_distance(a, b, dict);
  const double d2 = dbl_distance(gaussian_cloud(4000, 2, 0.0, 3), gaussian_cloud(4000, 2, 1.0, 4), dict);
  CHECK(d1 >= 0.15);
  CHECK(d1 <= 1.0);
  CHECK(std::abs(d1 - d2) < 0.02);
  CHECK(dbl_distance(b, a, dict) == d1);

  auto c = gaussian_cloud(4000, 2, 0.5, 5);
  CHECK(dbl_distance(a, b, dict) <= dbl_distance(a, c, dict) + dbl_distance(c, b, dict) + 1e-12);

  CHECK_THROWS_AS(dbl_distance(a, gaussian_cloud(10, 3, 0.0, 1), dict), InvalidArgument);
}

TEST_CASE("ensemble files round-trip") {
  auto b = heat(3, AlmostPeriodicScalar::sine(), 0.5);
  EnsembleOptions o;
  o.M = 20;
  o.S = 3.0;
  o.bias_tol = 0.0;
  auto e = estimate_evolution_measure(b, harmonic(3, 1), 0.5, o);
  std::stringstream ss;
  write_ensemble(ss, e);
  auto r = read_ensemble(ss);
  CHECK(r.particles == e.particles);
  CHECK(r.t_anchor == e.t_anchor);
  CHECK(r.x_anchor == e.x_anchor);
  CHECK(r.pullback_horizon == e.pullback_horizon);
  CHECK(r.seed == e.seed);
  CHECK(r.bias_bound == e.bias_bound);

  std::stringstream bad("{\"format\":\"other\"}\n");
  CHECK_THROWS_AS(read_ensemble(bad), InvalidArgument);
}
