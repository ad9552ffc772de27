#include <doctest.h>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "avgsim/coeffs.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/harness.hpp"
#include "avgsim/random.hpp"

using namespace avgsim;
constexpr double pi = std::numbers::pi;

namespace {

CoefficientBundle builtin(ExampleName name, ExampleParams p = {}) {
  SpacesConfig sc;
  return build_system({name, p}, sc.slow(), sc.fast());
}

std::string rejection(const ExampleParams& p) {
  try {
    builtin(ExampleName::cahn_hilliard_heat_1d, p);
  } catch (const ConfigurationRejected& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("heat fast drift on the built-in") {
  ExampleParams p;
  p.phi = AlmostPeriodicScalar::zero();
  p.c = 0.0;
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, p);
  KeyedStream rng(3);
  std::vector<double> x(b.slow_dim()), v(b.fast_dim()), out(b.fast_dim());
  for (auto& e : x) e = rng.normal();
  for (auto& e : v) e = rng.normal();
  b.B(0.3, x, v, out);
  for (std::size_t k = 0; k < b.fast_dim(); ++k)
    CHECK(out[k] == doctest::Approx(-b.fast_space.eigenvalue(k) * v[k] + x[k]));
  std::vector<double> g(b.fast_noise_modes);
  b.G2(0.3, x, v, g);
  for (double e : g) CHECK(e == 0.0);
}

TEST_CASE("dissipativity of the fast equation is enforced") {
  ExampleParams ok;
  ok.phi = AlmostPeriodicScalar::sine(4.0);
  ok.c = 3.0;
  ok.generic_C = 100.0;
  CHECK(rejection(ok).empty());

  ExampleParams bad = ok;
  bad.c = 4.0;
  const auto msg = rejection(bad);
  CHECK(msg.find("phi_sup + c^2/2 must be < lambda_star (9.8696), got 12.0") != std::string::npos);

  ExampleParams xi;
  xi.ell1.offset = 0.0;
  CHECK(rejection(xi).find("ell1") != std::string::npos);
  xi = {};
  xi.ell2.iota = -1.0;
  CHECK(rejection(xi).find("ell2.iota") != std::string::npos);
  ExampleParams cubic;
  cubic.slow_cubic = -1.0;
  CHECK(rejection(cubic).find("cubic") != std::string::npos);
}

TEST_CASE("Xi members and almost-periodic scalars") {
  XiFunction ell{1.0, 1.0, 1.0};
  CHECK(ell(0.0) == 2.0);
  CHECK(ell(-3.0) == doctest::Approx(1.25));
  CHECK(ell.limit() == 1.0);
  CHECK(ell.sup() == 2.0);
  CHECK(ell.inf() == 1.0);
  CHECK_FALSE(ell.autonomous());
  CHECK(XiFunction::constant(3.0)(17.0) == 3.0);

  auto b = builtin(ExampleName::cahn_hilliard_heat_1d);
  REQUIRE(b.ap.has_value());
  CHECK(b.ap->ell1_limit == 1.0);
  CHECK(b.ap->ell2_limit == 1.0);
  CHECK(b.ap->frequencies == std::vector<double>{1.0});

  AlmostPeriodicScalar phi{0.5, {{2.0, 1.0, 0.0}, {1.0, std::sqrt(2.0), 0.3}}};
  CHECK(phi.mean() == 0.5);
  CHECK(phi.sup() == 3.5);
  CHECK(phi.sup_abs() == 3.5);
  // integral against a fine trapezoid
  double q = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) q += 0.5 * (phi(-1.0 + 5.0 * i / n) + phi(-1.0 + 5.0 * (i + 1) / n)) * 5.0 / n;
  CHECK(phi.integral(-1.0, 4.0) == doctest::Approx(q).epsilon(1e-8));
}

TEST_CASE("linear fast rate") {
  auto b = CoefficientBundle::linear(make_space(4, OperatorKind::dirichlet_laplacian_1d, 1.0),
                                     make_space(4, OperatorKind::dirichlet_laplacian_1d, 1.0));
  b.phi = AlmostPeriodicScalar::sine(0.5);
  b.c = 0.5;
  CHECK(linear_fast_rate(b) == doctest::Approx(2 * pi * pi - 1.0 - 0.25));
}

TEST_CASE("built-ins pass all five checkers") {
  CheckOptions opts;
  opts.samples = 10000;
  for (auto name : {ExampleName::cahn_hilliard_heat_1d, ExampleName::reaction_diffusion_1d, ExampleName::porous_fast_1d}) {
    auto b = builtin(name);
    for (const auto& r : check_all_conditions(b, opts)) {
      INFO(to_string(name) << " " << r.condition << " margin " << r.max_margin);
      CHECK(r.passed);
      CHECK(r.samples == opts.samples);
      CHECK(r.max_margin <= 0.0);
    }
  }
}

TEST_CASE("checkers are deterministic in the seed") {
  auto b = builtin(ExampleName::reaction_diffusion_1d);
  CheckOptions opts;
  opts.samples = 500;
  auto r1 = check_coercivity(b, opts), r2 = check_coercivity(b, opts);
  CHECK(r1.max_margin == r2.max_margin);
}

TEST_CASE("local monotonicity: linear bundle and an expanding operator") {
  auto lin = CoefficientBundle::linear(make_space(8, OperatorKind::dirichlet_laplacian_1d, 1.0),
                                       make_space(8, OperatorKind::dirichlet_laplacian_1d, 1.0));
  CheckOptions opts;
  opts.samples = 2000;
  auto r = check_local_monotonicity(lin, opts, [](auto, auto) { return 0.0; });
  CHECK(r.passed);
  CHECK(r.max_margin <= 0.0);

  auto bad = lin;
  for (auto& a : bad.slow_rates) a = -1.0;  // A(u) = +u
  auto rb = check_local_monotonicity(bad, opts, [](auto, auto) { return 0.0; });
  CHECK_FALSE(rb.passed);
  CHECK(rb.violations > 0);
  CHECK(rb.max_margin > 0.0);
}

TEST_CASE("coercivity fails when theta exceeds what A provides") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d);
  b.profile.theta = 2.0 * b.ell1.sup();
  CheckOptions opts;
  opts.samples = 2000;
  auto r = check_coercivity(b, opts);
  CHECK_FALSE(r.passed);
}

TEST_CASE("strong monotonicity: equality on mode-1 differences, failure above the linear rate") {
  ExampleParams p;
  p.phi = AlmostPeriodicScalar::zero();
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, p);
  b.profile.gamma = linear_fast_rate(b);
  CheckOptions opts;
  opts.samples = 2000;
  auto r = check_strong_monotonicity_fast(b, opts, {false, true});
  CHECK(r.passed);
  CHECK(std::abs(r.max_margin) < 1e-12);

  b.profile.gamma = 1.5 * linear_fast_rate(b);
  auto rb = check_strong_monotonicity_fast(b, opts, {false, true});
  CHECK_FALSE(rb.passed);
  CHECK(rb.violations == opts.samples);
}

TEST_CASE("Lipschitz and growth checkers catch undersized constants") {
  auto b = builtin(ExampleName::reaction_diffusion_1d);
  CheckOptions opts;
  opts.samples = 2000;
  auto lip = b;
  lip.profile.lip_F = 0.1 * b.profile.lip_F;
  CHECK_FALSE(check_lipschitz_F_G1(lip, opts).passed);
  auto growth = b;
  growth.profile.generic_C = 0.01;
  CHECK_FALSE(check_growth_fast(growth, opts).passed);
}

TEST_CASE("hemicontinuity: jumps shrink with the grid") {
  for (auto name : {ExampleName::reaction_diffusion_1d, ExampleName::porous_fast_1d}) {
    auto b = builtin(name);
    for (auto kind : {DriftKind::slow, DriftKind::fast}) {
      const double j1 = hemicontinuity_max_jump(b, kind, 101, 20, 4);
      const double j2 = hemicontinuity_max_jump(b, kind, 201, 20, 4);
      CHECK(j2 < 0.6 * j1);
      CHECK(j2 > 0.4 * j1);
    }
  }
}

TEST_CASE("cubic projection is exact") {
  // P(u^3) for u = e_1 in the Dirichlet basis sqrt(2) sin(pi x):
  // int (sqrt2 sin)^3 sqrt2 sin(k pi x) = 2 int sin^3 sin(k pi x) = 3/2 (k=1), -1/2 (k=3).
  SpectralTransform tr(OperatorKind::dirichlet_laplacian_1d, 4);
  std::vector<double> u{1, 0, 0, 0}, out(4);
  tr.project_cube(u, out);
  CHECK(out[0] == doctest::Approx(1.5));
  CHECK(std::abs(out[1]) < 1e-13);
  CHECK(out[2] == doctest::Approx(-0.5));
  CHECK(std::abs(out[3]) < 1e-13);
  CHECK(tr.quartic_integral(u) == doctest::Approx(1.5));
  // Jacobian against central differences
  std::vector<double> w{0.3, -0.7, 0.2, 0.5}, jac(16), p(4), m(4);
  tr.cube_jacobian(w, jac);
  for (std::size_t j = 0; j < 4; ++j) {
    auto wp = w, wm = w;
    wp[j] += 1e-6;
    wm[j] -= 1e-6;
    tr.project_cube(wp, p);
    tr.project_cube(wm, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(jac[i * 4 + j] == doctest::Approx((p[i] - m[i]) / 2e-6).epsilon(1e-6));
  }
}
