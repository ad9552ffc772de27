#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "avgsim/coeffs.hpp"
#include "avgsim/errors.hpp"

namespace avgsim {
namespace {

std::string fmt_num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string fmt_fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void check_xi(const XiFunction& xi, const std::string& name) {
  if (!std::isfinite(xi.amplitude) || !std::isfinite(xi.iota) || !std::isfinite(xi.offset)) {
    throw ConfigurationRejected(name + ": parameters must be finite");
  }
  if (!(xi.offset > 0.0)) {
    throw ConfigurationRejected(name + ".offset (limit) must be > 0, got " + fmt_num(xi.offset));
  }
  if (!(xi.iota > 0.0)) throw ConfigurationRejected(name + ".iota must be > 0, got " + fmt_num(xi.iota));
  if (!(xi.inf() > 0.0)) {
    throw ConfigurationRejected(name + ": offset + min(amplitude, 0) must be > 0, got " + fmt_num(xi.inf()));
  }
}

}  // namespace

double XiFunction::operator()(double t) const {
  if (amplitude == 0.0) return offset;
  return amplitude / (1.0 + std::pow(std::abs(t), iota)) + offset;
}

double AlmostPeriodicScalar::operator()(double t) const {
  double v = constant;
  for (const auto& term : terms) v += term.amplitude * std::sin(term.frequency * t + term.phase);
  return v;
}

double AlmostPeriodicScalar::sup_abs() const {
  double s = std::abs(constant);
  for (const auto& term : terms) s += std::abs(term.amplitude);
  return s;
}

double AlmostPeriodicScalar::sup() const {
  double s = constant;
  for (const auto& term : terms) {
    s += term.frequency == 0.0 ? term.amplitude * std::sin(term.phase) : std::abs(term.amplitude);
  }
  return s;
}

double AlmostPeriodicScalar::mean() const {
  double m = constant;
  for (const auto& term : terms) {
    if (term.frequency == 0.0) m += term.amplitude * std::sin(term.phase);
  }
  return m;
}

double AlmostPeriodicScalar::integral(double t0, double t1) const {
  double v = constant * (t1 - t0);
  for (const auto& term : terms) {
    if (term.frequency == 0.0) {
      v += term.amplitude * std::sin(term.phase) * (t1 - t0);
    } else {
      v -= term.amplitude / term.frequency *
           (std::cos(term.frequency * t1 + term.phase) - std::cos(term.frequency * t0 + term.phase));
    }
  }
  return v;
}

bool AlmostPeriodicScalar::autonomous() const {
  return std::all_of(terms.begin(), terms.end(),
                     [](const TrigTerm& t) { return t.amplitude == 0.0 || t.frequency == 0.0; });
}

std::vector<double> AlmostPeriodicScalar::frequencies() const {
  std::vector<double> out;
  for (const auto& term : terms) {
    if (term.amplitude != 0.0 && term.frequency != 0.0) out.push_back(std::abs(term.frequency));
  }
  return out;
}

void ConditionProfile::validate() const {
  auto reject = [](const std::string& what, double v) {
    throw ConfigurationRejected("profile." + what + ", got " + fmt_num(v));
  };
  if (!(alpha > 1.0)) reject("alpha must be > 1", alpha);
  if (!(beta >= 0.0)) reject("beta must be >= 0", beta);
  if (!(theta > 0.0)) reject("theta must be > 0", theta);
  if (!(kappa > 1.0)) reject("kappa must be > 1", kappa);
  if (!(gamma > 0.0)) reject("gamma must be > 0", gamma);
  if (!(eta > 0.0)) reject("eta must be > 0", eta);
  if (!(zeta > 0.0 && zeta < 1.0)) reject("zeta must lie in (0, 1)", zeta);
  if (!(lip_F >= 0.0)) reject("lip_F must be >= 0", lip_F);
  if (!(lip_G1 >= 0.0)) reject("lip_G1 must be >= 0", lip_G1);
  if (!(generic_C > 0.0)) reject("generic_C must be > 0", generic_C);
}

CoefficientBundle CoefficientBundle::linear(const GalerkinSpace& slow, const GalerkinSpace& fast) {
  CoefficientBundle b;
  b.slow_space = slow;
  b.fast_space = fast;
  b.slow_rates.assign(slow.eigenvalues().begin(), slow.eigenvalues().end());
  b.fast_rates.assign(fast.eigenvalues().begin(), fast.eigenvalues().end());
  b.slow_noise_modes = slow.dim();
  b.fast_noise_modes = fast.dim();
  b.finalize();
  return b;
}

void CoefficientBundle::finalize() {
  if (slow_rates.size() != slow_dim() || fast_rates.size() != fast_dim()) {
    throw InvalidArgument("CoefficientBundle: rate vectors must match the space dims");
  }
  if (slow_noise_modes == 0 || slow_noise_modes > slow_dim() || fast_noise_modes == 0 ||
      fast_noise_modes > fast_dim()) {
    throw InvalidArgument("CoefficientBundle: noise modes must lie in [1, dim]");
  }
  slow_transform_.reset();
  fast_transform_.reset();
  if (slow_cubic != 0.0) slow_transform_ = std::make_shared<SpectralTransform>(slow_space.kind(), slow_dim());
  if (fast_cubic != 0.0) fast_transform_ = std::make_shared<SpectralTransform>(fast_space.kind(), fast_dim());
}

bool CoefficientBundle::autonomous() const { return ell1.autonomous() && ell2.autonomous() && phi.autonomous(); }

void CoefficientBundle::A(double t, std::span<const double> u, std::span<double> out) const {
  A_scaled(ell1(t), u, out);
}

void CoefficientBundle::A_scaled(double scale, std::span<const double> u, std::span<double> out) const {
  const std::size_t n = slow_dim();
  if (slow_transform_) {
    slow_transform_->project_cube(u, out);
    for (std::size_t k = 0; k < n; ++k) out[k] = -scale * slow_rates[k] * u[k] - slow_cubic * out[k];
  } else {
    for (std::size_t k = 0; k < n; ++k) out[k] = -scale * slow_rates[k] * u[k];
  }
}

void CoefficientBundle::F(double, std::span<const double> x, std::span<const double> y,
                          std::span<double> out) const {
  const std::size_t shared = shared_modes();
  for (std::size_t k = 0; k < slow_dim(); ++k) out[k] = f_x * x[k] + (k < shared ? f_y * y[k] : 0.0);
}

void CoefficientBundle::G1(double t, std::span<const double> x, std::span<double> out) const {
  const double l = ell2(t);
  for (std::size_t k = 0; k < slow_noise_modes; ++k) out[k] = l * (g1_mult * x[k] + g1_add);
}

void CoefficientBundle::B(double t, std::span<const double> x, std::span<const double> v,
                          std::span<double> out) const {
  const std::size_t n = fast_dim();
  const std::size_t shared = shared_modes();
  const double p = phi(t);
  if (fast_transform_) {
    fast_transform_->project_cube(v, out);
  } else {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  }
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = (-fast_rates[k] + p) * v[k] + (k < shared ? a_coupling * x[k] : 0.0) - fast_cubic * out[k];
  }
}

void CoefficientBundle::G2(double, std::span<const double>, std::span<const double> v,
                           std::span<double> out) const {
  for (std::size_t k = 0; k < fast_noise_modes; ++k) out[k] = c * v[k] + g2_add;
}

std::string to_string(ExampleName name) {
  switch (name) {
    case ExampleName::cahn_hilliard_heat_1d:
      return "cahn_hilliard_heat_1d";
    case ExampleName::reaction_diffusion_1d:
      return "reaction_diffusion_1d";
    case ExampleName::porous_fast_1d:
      return "porous_fast_1d";
  }
  return "cahn_hilliard_heat_1d";
}

ExampleName example_name_from_string(const std::string& name) {
  if (name == "cahn_hilliard_heat_1d") return ExampleName::cahn_hilliard_heat_1d;
  if (name == "reaction_diffusion_1d") return ExampleName::reaction_diffusion_1d;
  if (name == "porous_fast_1d") return ExampleName::porous_fast_1d;
  throw InvalidArgument("unknown example system '" + name + "'");
}

double linear_fast_rate(const CoefficientBundle& bundle) {
  return 2.0 * bundle.fast_rates.front() - 2.0 * bundle.phi.sup() - bundle.c * bundle.c;
}

CoefficientBundle build_system(const ExampleSystem& example, const GalerkinSpace& slow_space,
                               const GalerkinSpace& fast_space) {
  const ExampleParams& p = example.params;
  check_xi(p.ell1, "ell1");
  check_xi(p.ell2, "ell2");
  for (double v : {p.c, p.a_coupling, p.f_x, p.f_y, p.g1_mult, p.g1_add, p.g2_add, p.phi.constant}) {
    if (!std::isfinite(v)) throw ConfigurationRejected("system parameters must be finite");
  }

  const double lambda_star = fast_space.first_eigenvalue();
  const double lhs = p.phi.sup_abs() + 0.5 * p.c * p.c;
  if (!(lhs < lambda_star)) {
    throw ConfigurationRejected("phi_sup + c^2/2 must be < lambda_star (" + fmt_fixed4(lambda_star) + "), got " +
                                fmt_num(lhs));
  }

  CoefficientBundle b = CoefficientBundle::linear(slow_space, fast_space);
  b.name = to_string(example.name);
  b.ell1 = p.ell1;
  b.ell2 = p.ell2;
  b.phi = p.phi;
  b.c = p.c;
  b.a_coupling = p.a_coupling;
  b.f_x = p.f_x;
  b.f_y = p.f_y;
  b.g1_mult = p.g1_mult;
  b.g1_add = p.g1_add;
  b.g2_add = p.g2_add;

  switch (example.name) {
    case ExampleName::cahn_hilliard_heat_1d:
      for (std::size_t k = 0; k < b.slow_dim(); ++k) b.slow_rates[k] = slow_space.eigenvalue(k) * slow_space.eigenvalue(k);
      b.slow_cubic = p.slow_cubic.value_or(0.0);
      b.fast_cubic = p.fast_cubic.value_or(0.0);
      break;
    case ExampleName::reaction_diffusion_1d:
      b.slow_cubic = p.slow_cubic.value_or(1.0);
      b.fast_cubic = p.fast_cubic.value_or(0.0);
      break;
    case ExampleName::porous_fast_1d:
      b.slow_cubic = p.slow_cubic.value_or(0.0);
      b.fast_cubic = p.fast_cubic.value_or(1.0);
      break;
  }
  if (b.slow_cubic < 0.0 || b.fast_cubic < 0.0) {
    throw ConfigurationRejected("cubic coefficients must be >= 0 (absorbing)");
  }
  b.finalize();

  ConditionProfile& prof = b.profile;
  const double s = slow_space.v_exponent();
  double ratio = INFINITY;
  for (std::size_t k = 0; k < b.slow_dim(); ++k) ratio = std::min(ratio, b.slow_rates[k] / std::pow(slow_space.eigenvalue(k), s));
  prof.alpha = 2.0;
  prof.beta = 0.0;
  prof.theta = 0.5 * p.ell1.inf() * ratio;
  prof.kappa = b.linear_fast() ? 2.0 : 4.0;
  const double gamma_lin = linear_fast_rate(b);
  prof.gamma = 0.5 * gamma_lin;
  prof.eta = 0.5;
  prof.zeta = 0.5;
  prof.lip_F = std::abs(p.f_x) + std::abs(p.f_y);
  prof.lip_G1 = p.ell2.sup() * std::abs(p.g1_mult);
  prof.generic_C = p.generic_C;
  prof.validate();
  const double c_needed = 2.0 * p.a_coupling * p.a_coupling / gamma_lin;
  if (p.generic_C < c_needed) {
    throw ConfigurationRejected("generic_C must be >= 2 a^2 / gamma_lin (" + fmt_num(c_needed) + "), got " +
                                fmt_num(p.generic_C));
  }

  b.ap = ApMetadata{p.ell1.limit(), p.ell2.limit(), p.phi.frequencies()};
  return b;
}

}  // namespace avgsim
