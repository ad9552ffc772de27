#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "avgsim/errors.hpp"
#include "avgsim/harness.hpp"
#include "avgsim/integrate.hpp"
#include "avgsim/parallel.hpp"

using namespace avgsim;
constexpr double pi = std::numbers::pi;

namespace {

CoefficientBundle builtin(ExampleName name, std::size_t slow_dim = 16, std::size_t fast_dim = 16,
                          ExampleParams p = {}) {
  SpacesConfig sc;
  sc.slow_dim = slow_dim;
  sc.fast_dim = fast_dim;
  return build_system({name, p}, sc.slow(), sc.fast());
}

State harmonic(std::size_t n, double amp) {
  State s(n);
  for (std::size_t k = 0; k < n; ++k) s[k] = amp / double(k + 1);
  return s;
}

double hdist(const State& a, const State& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.dim(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

double hnorm2(const State& a) {
  double s = 0;
  for (std::size_t k = 0; k < a.dim(); ++k) s += a[k] * a[k];
  return s;
}

}  // namespace

TEST_CASE("one implicit step on the biharmonic mode") {
  auto sp = make_space(3, OperatorKind::dirichlet_laplacian_1d, 2.0);
  auto b = CoefficientBundle::linear(sp, sp);
  for (std::size_t k = 0; k < 3; ++k) b.slow_rates[k] = sp.eigenvalue(k) * sp.eigenvalue(k);
  b.ell1 = XiFunction{1.0, 1.0, 1.0};
  const double eps = 0.1, t = 0.3, h = 1e-3;
  State x(std::vector<double>{1, 0, 0}), y(3);
  auto [xn, yn] = step_coupled(b, eps, x, y, t, h, make_noise(b, {1}, {}));
  const double lam = pi * pi;
  CHECK(xn[0] == doctest::Approx(1.0 / (1.0 + h * b.ell1(t / eps) * lam * lam)).epsilon(1e-14));
  CHECK(xn[1] == 0.0);
}

TEST_CASE("zero state is a fixed point of the built-ins") {
  for (auto name : {ExampleName::cahn_hilliard_heat_1d, ExampleName::reaction_diffusion_1d, ExampleName::porous_fast_1d}) {
    auto b = builtin(name, 8, 8);
    auto p = simulate_coupled(b, 0.1, State(8), State(8), TimeGrid(0, 0.1, 1e-3), {5});
    for (const auto& s : p.slow) CHECK(hnorm2(s) == 0.0);
    for (const auto& s : p.fast) CHECK(hnorm2(s) == 0.0);
  }
}

TEST_CASE("same seed, same path; different seed, different path") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8);
  TimeGrid g(0, 0.2, 1e-3);
  auto p1 = simulate_coupled(b, 0.05, harmonic(8, 1), State(8), g, {11});
  auto p2 = simulate_coupled(b, 0.05, harmonic(8, 1), State(8), g, {11});
  auto p3 = simulate_coupled(b, 0.05, harmonic(8, 1), State(8), g, {12});
  CHECK(p1.slow == p2.slow);
  CHECK(p1.fast == p2.fast);
  CHECK(p1.w1_checksum == p2.w1_checksum);
  CHECK(p1.slow.back() != p3.slow.back());
}

TEST_CASE("eps = 1 with no coupling: fast marginal equals the frozen equation") {
  ExampleParams p;
  p.a_coupling = 0.0;
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8, p);
  State y0 = harmonic(8, 0.5);
  auto c = simulate_coupled(b, 1.0, harmonic(8, 1), y0, TimeGrid(0, 0.5, 1e-3), {21});
  auto f = simulate_frozen(b, State(8), 0.0, 0.5, y0, 1e-3, {21});
  REQUIRE(c.fast.size() == f.fast.size());
  for (std::size_t i = 0; i < c.fast.size(); ++i) CHECK(c.fast[i] == f.fast[i]);
}

TEST_CASE("frozen equation relaxes to x_k / lambda_k without noise") {
  ExampleParams p;
  p.phi = AlmostPeriodicScalar::zero();
  p.c = 0.0;
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 4, 4, p);
  State x = harmonic(4, 1.0);
  const double lam1 = b.fast_space.eigenvalue(0);
  const double span = 1.02;  // >= 10 / lambda_1
  REQUIRE(span >= 10.0 / lam1);
  State y = advance_frozen(b, x, -3.0, -3.0 + span, State(4), 1e-4, {1, 4, stream::W2, 20});
  const double target = x[0] / lam1;
  CHECK(std::abs(y[0] - target) / target <= std::exp(-10.0));

  State fixed(4);
  for (std::size_t k = 0; k < 4; ++k) fixed[k] = x[k] / b.fast_space.eigenvalue(k);
  State z = advance_frozen(b, x, 0.0, 1.0, fixed, 1e-3, {1, 4, stream::W2, 20});
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(z[k] - fixed[k]) <= 1e-12 * std::abs(fixed[k]));
}

TEST_CASE("geometric Brownian fast mode converges with strong order 1/2") {
  auto sp = make_space(1, OperatorKind::dirichlet_laplacian_1d, 1.0);
  auto b = CoefficientBundle::linear(sp, sp);
  b.fast_rates[0] = 0.0;
  b.c = 0.5;
  b.finalize();
  const std::size_t n = 400;
  auto err = [&](double h) {
    double e = 0;
    for (std::size_t i = 0; i < n; ++i) {
      NoiseSource w2{100 + i, 1, stream::W2, 20};
      State y = advance_frozen(b, State(1), 0.0, 1.0, State(std::vector<double>{1.0}), h, w2);
      const double w = wiener_increment(w2, 0.0, 1.0)[0];
      e += std::abs(y[0] - std::exp(-0.5 * b.c * b.c + b.c * w));
    }
    return e / n;
  };
  const double e1 = err(1.0 / 64), e2 = err(1.0 / 256);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.25));
}

TEST_CASE("averaged equation: limit scale one equals the autonomous eps equation") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8);
  b.ell1 = XiFunction::constant(1.0);
  b.ell2 = XiFunction::constant(1.0);
  SlowDrift drift = [](double, std::span<const double> x, std::span<double> out) {
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = -0.5 * x[k];
  };
  TimeGrid g(0, 0.3, 1e-3);
  auto a = simulate_averaged_eps(b, 0.1, harmonic(8, 1), g, drift, {3});
  auto l = simulate_averaged_limit(b, {1.0, 1.0, drift}, harmonic(8, 1), g, {3});
  for (std::size_t i = 0; i < a.slow.size(); ++i) CHECK(a.slow[i] == l.slow[i]);
}

TEST_CASE("averaged equation: noise-free scalar closed form") {
  auto sp = GalerkinSpace::from_eigenvalues({0.1}, 1.0, "scalar");
  auto b = CoefficientBundle::linear(sp, sp);
  SlowDrift zero = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
  auto p = simulate_averaged_limit(b, {1.0, 1.0, zero}, State(std::vector<double>{1.0}), TimeGrid(0, 1, 1e-4), {1});
  CHECK(p.slow.back()[0] == doctest::Approx(std::exp(-0.1)).epsilon(1e-6));

  // F-bar = 0, G1 = 0: the H-energy never increases
  auto ch = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8);
  ch.g1_mult = 0.0;
  SlowDrift zero8 = [](double, std::span<const double>, std::span<double> out) {
    for (double& v : out) v = 0.0;
  };
  auto q = simulate_averaged_eps(ch, 0.1, harmonic(8, 1), TimeGrid(0, 0.2, 1e-3), zero8, {1});
  for (std::size_t i = 1; i < q.slow.size(); ++i) CHECK(hnorm2(q.slow[i]) <= hnorm2(q.slow[i - 1]));
}

TEST_CASE("coupled and averaged runs consume the same slow noise") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8);
  IntegratorConfig cfg;
  cfg.log_w1 = true;
  TimeGrid g(0, 0.1, 1e-3);
  SlowDrift zero = [](double, std::span<const double>, std::span<double> out) {
    for (double& v : out) v = 0.0;
  };
  auto c = simulate_coupled(b, 0.01, harmonic(8, 1), State(8), g, {77}, cfg);
  auto a = simulate_averaged_eps(b, 0.01, harmonic(8, 1), g, zero, {77}, cfg);
  CHECK(c.w1_checksum != 0);
  CHECK(c.w1_checksum == a.w1_checksum);
  CHECK(c.w1_log == a.w1_log);
  CHECK(c.w1_log.size() == 100 * b.slow_noise_modes);
}

TEST_CASE("second moments stay bounded uniformly in eps") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d);
  IntegratorConfig cfg;
  TimeGrid g(0, 1, 1e-3);
  auto sup_moment = [&](double eps) {
    const std::size_t n = 200;
    std::vector<std::vector<double>> m(n);
    parallel_for(n, [&](std::size_t i) {
      auto p = simulate_coupled(b, eps, harmonic(16, 1), State(16), g, {1 + i}, cfg);
      for (const auto& s : p.slow) m[i].push_back(hnorm2(s));
    });
    double sup = 0;
    for (std::size_t j = 0; j < g.points(); ++j) {
      double e = 0;
      for (std::size_t i = 0; i < n; ++i) e += m[i][j];
      sup = std::max(sup, e / n);
    }
    return sup;
  };
  const double a = sup_moment(0.1), c = sup_moment(0.01);
  CHECK(c / a < 3.0);
  CHECK(a / c < 3.0);
}

TEST_CASE("self-convergence under step halving") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8);
  const std::size_t n = 100;
  const double T = 0.5;
  std::vector<double> hs{1.0 / 256, 1.0 / 512, 1.0 / 1024, 1.0 / 2048};
  std::vector<std::vector<State>> finals(hs.size(), std::vector<State>(n));
  for (std::size_t l = 0; l < hs.size(); ++l) {
    parallel_for(n, [&](std::size_t i) {
      finals[l][i] = simulate_coupled(b, 0.1, harmonic(8, 1), State(8), TimeGrid(0, T, hs[l]), {500 + i}).slow.back();
    });
  }
  std::vector<double> d;
  for (std::size_t l = 0; l + 1 < hs.size(); ++l) {
    double e = 0;
    for (std::size_t i = 0; i < n; ++i) e += hdist(finals[l][i], finals[l + 1][i]);
    d.push_back(e / n);
  }
  for (std::size_t l = 0; l + 1 < d.size(); ++l) {
    INFO("d[" << l << "] = " << d[l] << ", d[" << l + 1 << "] = " << d[l + 1]);
    CHECK(d[l] / d[l + 1] >= 0.8 * std::sqrt(2.0));
  }
}

TEST_CASE("fast sub-cycling: halving the fast step barely moves E|Y_T|^2") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 8, 8);
  const std::size_t n = 200;
  auto moment = [&](double factor) {
    IntegratorConfig cfg;
    cfg.fast_factor = factor;
    std::vector<double> m(n);
    parallel_for(n, [&](std::size_t i) {
      m[i] = hnorm2(simulate_coupled(b, 0.1, harmonic(8, 1), State(8), TimeGrid(0, 1, 0.02), {900 + i}, cfg).fast.back());
    });
    double s = 0;
    for (double v : m) s += v;
    return s / n;
  };
  FastStepper fs(b, IntegratorConfig{}, 0.1);
  CHECK(fs.substeps(0.02) == 2);
  const double a = moment(0.1), c = moment(0.05);
  CHECK(std::abs(a - c) / c < 0.02);
}

TEST_CASE("no step failures on the built-ins") {
  for (auto name : {ExampleName::cahn_hilliard_heat_1d, ExampleName::reaction_diffusion_1d, ExampleName::porous_fast_1d}) {
    auto b = builtin(name);
    std::vector<int> failed(1000, 0);
    parallel_for(failed.size(), [&](std::size_t i) {
      try {
        simulate_coupled(b, 0.01, harmonic(16, 1), harmonic(16, 1), TimeGrid(0, 0.25, 1e-3), {10000 + i});
      } catch (const StepFailure&) {
        failed[i] = 1;
      } catch (const DivergenceDetected&) {
        failed[i] = 1;
      }
    });
    int total = 0;
    for (int f : failed) total += f;
    CHECK(total == 0);
  }
}

TEST_CASE("Newton handles large states in the cubic equations") {
  for (auto name : {ExampleName::reaction_diffusion_1d, ExampleName::porous_fast_1d}) {
    auto b = builtin(name, 8, 8);
    auto p = simulate_coupled(b, 0.1, harmonic(8, 50), harmonic(8, 50), TimeGrid(0, 0.05, 1e-3), {3});
    CHECK(p.slow.back().all_finite());
    CHECK(hnorm2(p.slow.back()) < hnorm2(p.slow.front()));
  }
  auto b = builtin(ExampleName::reaction_diffusion_1d, 8, 8);
  IntegratorConfig tight;
  tight.newton_max_iter = 1;
  tight.newton_tol = 1e-15;
  CHECK_THROWS_AS(simulate_coupled(b, 0.1, harmonic(8, 50), State(8), TimeGrid(0, 0.01, 1e-3), {3}, tight), StepFailure);
}

TEST_CASE("tamed Euler agrees with the semi-implicit scheme on a mildly stiff system") {
  auto b = builtin(ExampleName::reaction_diffusion_1d, 4, 4);
  IntegratorConfig tamed;
  tamed.scheme = Scheme::tamed_euler;
  TimeGrid g(0, 0.1, 1e-4);
  double num = 0, den = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    auto a = simulate_coupled(b, 1.0, harmonic(4, 1), State(4), g, {s});
    auto t = simulate_coupled(b, 1.0, harmonic(4, 1), State(4), g, {s}, tamed);
    num += hdist(a.slow.back(), t.slow.back());
    den += std::sqrt(hnorm2(a.slow.back()));
  }
  CHECK(num / den < 0.02);
}

TEST_CASE("path files round-trip") {
  auto b = builtin(ExampleName::porous_fast_1d, 4, 6);
  auto p = simulate_coupled(b, 0.1, harmonic(4, 1), State(6), TimeGrid(0, 0.05, 1e-3), {8, 3, 4});
  std::stringstream ss;
  write_path_binary(ss, p);
  auto q = read_path_binary(ss);
  CHECK(q.grid == p.grid);
  CHECK(q.slow == p.slow);
  CHECK(q.fast == p.fast);
  CHECK(q.seeds == p.seeds);
  CHECK(q.w1_checksum == p.w1_checksum);

  std::stringstream bad("not a path file at all");
  CHECK_THROWS_AS(read_path_binary(bad), InvalidArgument);
}

TEST_CASE("argument validation") {
  auto b = builtin(ExampleName::cahn_hilliard_heat_1d, 4, 4);
  CHECK_THROWS_AS(simulate_coupled(b, 0.0, State(4), State(4), TimeGrid(0, 1, 0.1), {1}), InvalidArgument);
  CHECK_THROWS_AS(simulate_coupled(b, 1.5, State(4), State(4), TimeGrid(0, 1, 0.1), {1}), InvalidArgument);
  CHECK_THROWS_AS(simulate_coupled(b, 0.1, State(3), State(4), TimeGrid(0, 1, 0.1), {1}), InvalidArgument);
  CHECK_THROWS_AS(simulate_frozen(b, State(4), 1.0, 0.0, State(4), 0.1, {1}), InvalidArgument);
  State bad(4);
  bad[0] = NAN;
  CHECK_THROWS_AS(check_divergence(bad.span(), 0.0, "x"), DivergenceDetected);
}
