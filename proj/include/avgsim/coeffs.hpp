#pragma once

// Coefficients (A, F, G1, B, G2) of the slow-fast system in a generic
// polynomial-spectral form, the built-in example systems, and the
// sample-based falsification checkers for the structural conditions.
//
// Slow:  A(t,u)_k   = -ell1(t) a_k u_k - nu_s P(u^3)_k
//        F(t,x,y)_k = f_x x_k + f_y y_k                    (shared modes)
//        G1(t,x)    : noise mode k -> ell2(t) (g1_mult x_k + g1_add) e_k
// Fast:  B(t,x,v)_k = (-b_k + phi(t)) v_k + a x_k - nu_f P(v^3)_k
//        G2(t,x,v)  : noise mode k -> (c v_k + g2_add) e_k
// P is the L2 projection onto the retained modes, evaluated exactly by
// quadrature. G1 takes no fast argument.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avgsim/spaces.hpp"

namespace avgsim {

/// Member of the class Xi: ell(t) = amplitude / (1 + |t|^iota) + offset -> offset.
struct XiFunction {
  double amplitude = 1.0;
  double iota = 1.0;
  double offset = 1.0;

  static XiFunction constant(double value) { return {0.0, 1.0, value}; }
  double operator()(double t) const;
  double limit() const noexcept { return offset; }
  bool autonomous() const noexcept { return amplitude == 0.0; }
  double inf() const noexcept { return offset + (amplitude < 0.0 ? amplitude : 0.0); }
  double sup() const noexcept { return offset + (amplitude > 0.0 ? amplitude : 0.0); }

  friend bool operator==(const XiFunction&, const XiFunction&) = default;
};

struct TrigTerm {
  double amplitude = 0.0;
  double frequency = 1.0;
  double phase = 0.0;
  friend bool operator==(const TrigTerm&, const TrigTerm&) = default;
};

/// phi(t) = constant + sum_j amplitude_j sin(frequency_j t + phase_j).
struct AlmostPeriodicScalar {
  double constant = 0.0;
  std::vector<TrigTerm> terms;

  static AlmostPeriodicScalar zero() { return {}; }
  static AlmostPeriodicScalar sine(double amplitude = 1.0, double frequency = 1.0) {
    return {0.0, {{amplitude, frequency, 0.0}}};
  }

  double operator()(double t) const;
  /// |constant| + sum |amplitude|, an upper bound of sup |phi|.
  double sup_abs() const;
  /// constant + sum |amplitude|, an upper bound of sup phi.
  double sup() const;
  /// Bohr mean.
  double mean() const;
  /// integral of phi over [t0, t1].
  double integral(double t0, double t1) const;
  bool autonomous() const;
  std::vector<double> frequencies() const;

  friend bool operator==(const AlmostPeriodicScalar&, const AlmostPeriodicScalar&) = default;
};

/// Constants of the structural conditions on the slow (alpha, beta, theta) and
/// fast (kappa, gamma, eta, zeta) coefficients.
struct ConditionProfile {
  double alpha = 2.0;
  double beta = 0.0;
  double theta = 0.5;
  double kappa = 2.0;
  double gamma = 1.0;
  double eta = 0.5;
  double zeta = 0.5;
  double lip_F = 1.0;
  double lip_G1 = 1.0;
  double generic_C = 10.0;

  /// Throws ConfigurationRejected naming the first violated range.
  void validate() const;
  friend bool operator==(const ConditionProfile&, const ConditionProfile&) = default;
};

/// Limits used by the time-averaged (epsilon-free) equation.
struct ApMetadata {
  double ell1_limit = 1.0;
  double ell2_limit = 1.0;
  std::vector<double> frequencies;
};

/// Exact L2 projection of pointwise cubes on a sine or cosine basis.
class SpectralTransform {
 public:
  SpectralTransform(OperatorKind kind, std::size_t dim);
  std::size_t dim() const noexcept { return dim_; }
  /// out = P(u^3)
  void project_cube(std::span<const double> u, std::span<double> out) const;
  /// d P(u^3) / du as a row-major dim x dim matrix.
  void cube_jacobian(std::span<const double> u, std::span<double> jac) const;
  /// integral of u^4 over the domain.
  double quartic_integral(std::span<const double> u) const;

 private:
  std::size_t dim_;
  std::size_t nodes_;
  std::vector<double> basis_;  // nodes x dim, row-major
  std::vector<double> basis_t_weighted_;  // dim x nodes, w_q e_k(xi_q)
};

class CoefficientBundle {
 public:
  std::string name = "custom";
  GalerkinSpace slow_space = make_space(1, OperatorKind::dirichlet_laplacian_1d, 1.0);
  GalerkinSpace fast_space = make_space(1, OperatorKind::dirichlet_laplacian_1d, 1.0);

  XiFunction ell1 = XiFunction::constant(1.0);
  XiFunction ell2 = XiFunction::constant(1.0);
  std::vector<double> slow_rates;  // a_k
  double slow_cubic = 0.0;
  double f_x = 0.0;
  double f_y = 0.0;
  double g1_mult = 0.0;
  double g1_add = 0.0;
  std::size_t slow_noise_modes = 1;

  std::vector<double> fast_rates;  // b_k
  AlmostPeriodicScalar phi;
  double a_coupling = 0.0;
  double fast_cubic = 0.0;
  double c = 0.0;
  double g2_add = 0.0;
  std::size_t fast_noise_modes = 1;

  ConditionProfile profile;
  std::optional<ApMetadata> ap;

  /// Linear Dirichlet-heat bundle with zero slow dynamics, used by tests and as
  /// the base of the built-ins. Rates default to the space eigenvalues.
  static CoefficientBundle linear(const GalerkinSpace& slow, const GalerkinSpace& fast);

  /// Recomputes cached transforms; call after changing spaces or cubic terms.
  void finalize();

  std::size_t slow_dim() const noexcept { return slow_space.dim(); }
  std::size_t fast_dim() const noexcept { return fast_space.dim(); }
  std::size_t shared_modes() const noexcept { return std::min(slow_dim(), fast_dim()); }
  bool linear_fast() const noexcept { return fast_cubic == 0.0; }
  bool linear_slow() const noexcept { return slow_cubic == 0.0; }
  bool autonomous() const;

  void A(double t, std::span<const double> u, std::span<double> out) const;
  /// A with ell1 replaced by `scale`.
  void A_scaled(double scale, std::span<const double> u, std::span<double> out) const;
  void F(double t, std::span<const double> x, std::span<const double> y, std::span<double> out) const;
  /// Diagonal loadings of G1(t,x), one per slow noise mode.
  void G1(double t, std::span<const double> x, std::span<double> out) const;
  void B(double t, std::span<const double> x, std::span<const double> v, std::span<double> out) const;
  /// Diagonal loadings of G2(t,x,v), one per fast noise mode.
  void G2(double t, std::span<const double> x, std::span<const double> v, std::span<double> out) const;

  const SpectralTransform* slow_transform() const noexcept { return slow_transform_.get(); }
  const SpectralTransform* fast_transform() const noexcept { return fast_transform_.get(); }

 private:
  std::shared_ptr<const SpectralTransform> slow_transform_;
  std::shared_ptr<const SpectralTransform> fast_transform_;
};

enum class ExampleName { cahn_hilliard_heat_1d, reaction_diffusion_1d, porous_fast_1d };
std::string to_string(ExampleName name);
ExampleName example_name_from_string(const std::string& name);

struct ExampleParams {
  XiFunction ell1{1.0, 1.0, 1.0};
  XiFunction ell2{1.0, 1.0, 1.0};
  AlmostPeriodicScalar phi = AlmostPeriodicScalar::sine();
  double c = 0.5;
  double a_coupling = 1.0;
  double f_x = -1.0;
  double f_y = 5.0;
  double g1_mult = 0.5;
  double g1_add = 0.0;
  double g2_add = 0.0;
  /// Unset means the example's own default.
  std::optional<double> slow_cubic;
  std::optional<double> fast_cubic;
  double generic_C = 10.0;

  friend bool operator==(const ExampleParams&, const ExampleParams&) = default;
};

struct ExampleSystem {
  ExampleName name = ExampleName::cahn_hilliard_heat_1d;
  ExampleParams params;
  friend bool operator==(const ExampleSystem&, const ExampleSystem&) = default;
};

/// Spectral realization of a built-in system:
///   cahn_hilliard_heat_1d  A = -ell1 Delta^2 (+ optional absorption), linear heat fast equation
///   reaction_diffusion_1d  A = ell1 Delta u - nu u^3 (nu = 1 by default)
///   porous_fast_1d         A = ell1 Delta u, fast drift with absorption -nu v^3 (nu = 1 by default)
/// Throws ConfigurationRejected when sup|phi| + c^2/2 >= lambda_* of the fast space or
/// any Xi member or derived profile constant is out of range.
CoefficientBundle build_system(const ExampleSystem& example, const GalerkinSpace& slow_space,
                               const GalerkinSpace& fast_space);

/// Strong-monotonicity rate of the linear fast part, 2 b_1 - 2 sup phi - c^2.
double linear_fast_rate(const CoefficientBundle& bundle);

// ---------------------------------------------------------------------------
// Condition checkers. They sample (t, states) and evaluate both sides of the
// inequality; they falsify, they do not certify.

struct CheckOptions {
  std::size_t samples = 10000;
  std::uint64_t seed = 1;
  double state_scale = 1.0;  // component-wise Gaussian standard deviation
  double time_range = 100.0;  // t ~ U[-time_range, time_range]
  double tolerance = 1e-9;
};

struct CheckReport {
  std::string condition;
  std::size_t samples = 0;
  std::size_t violations = 0;
  /// Largest (lhs - rhs) / max(1, |lhs|, |rhs|) over samples.
  double max_margin = 0.0;
  bool passed = true;
};

/// rho(v) + eta(u) envelope of the local-monotonicity condition.
using MonotonicityEnvelope = std::function<double(std::span<const double> u, std::span<const double> v)>;

/// The default envelope rho(v) = eta(v) = C/2 (1 + ||v||_V^alpha) h_beta(||v||_H).
MonotonicityEnvelope default_envelope(const CoefficientBundle& bundle);

/// 1 + r^beta, or 1 when beta = 0 (the H-factor is absent).
double h_growth_factor(double r, double beta);

CheckReport check_local_monotonicity(const CoefficientBundle& bundle, const CheckOptions& opts = {});
CheckReport check_local_monotonicity(const CoefficientBundle& bundle, const CheckOptions& opts,
                                     const MonotonicityEnvelope& envelope);
CheckReport check_coercivity(const CoefficientBundle& bundle, const CheckOptions& opts = {});
CheckReport check_strong_monotonicity_fast(const CoefficientBundle& bundle, const CheckOptions& opts = {});
struct FastMonotonicitySampling {
  bool vary_slow = true;  // false keeps u1 = v1
  bool single_mode = false;  // differences only in the first mode
};
CheckReport check_strong_monotonicity_fast(const CoefficientBundle& bundle, const CheckOptions& opts,
                                           FastMonotonicitySampling sampling);
CheckReport check_lipschitz_F_G1(const CoefficientBundle& bundle, const CheckOptions& opts = {});
CheckReport check_growth_fast(const CoefficientBundle& bundle, const CheckOptions& opts = {});
std::vector<CheckReport> check_all_conditions(const CoefficientBundle& bundle, const CheckOptions& opts = {});

/// Hemicontinuity probe: largest jump of lambda -> <A(t,u+lambda v), w> (or the
/// fast analogue) between adjacent points of a uniform grid on [-1, 1].
enum class DriftKind { slow, fast };
double hemicontinuity_max_jump(const CoefficientBundle& bundle, DriftKind which, std::size_t grid_points,
                               std::size_t samples, std::uint64_t seed);

}  // namespace avgsim
