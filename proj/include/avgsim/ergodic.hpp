#pragma once

// Frozen-equation ergodics: pullback ensembles approximating the evolution
// system of measures mu_t^x, synchronous-coupling mixing rates, semigroup
// expectations, and a dictionary lower bound of the bounded-Lipschitz distance.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "avgsim/coeffs.hpp"
#include "avgsim/integrate.hpp"

namespace avgsim {

struct MeasureEnsemble {
  std::vector<State> particles;
  double t_anchor = 0.0;
  State x_anchor;
  double pullback_horizon = 0.0;  // S actually simulated (rounded up to whole steps)
  double step = 0.0;
  std::uint64_t seed = 0;
  /// Upper bound of the pullback bias e^{-gamma S / 2} sqrt(|y_start|^2 + C (1 + |x|^2)).
  double bias_bound = 0.0;
  /// Empirical second moment and the C it implies in int |y|^2 <= C (1 + |x|^2).
  double second_moment = 0.0;
  double moment_constant = 0.0;

  std::size_t size() const noexcept { return particles.size(); }
  std::size_t dim() const noexcept { return particles.empty() ? 0 : particles.front().dim(); }
  std::vector<double> mean() const;
  std::vector<double> variance() const;
};

struct EnsembleOptions {
  std::size_t M = 1000;
  double S = 10.0;
  double step = 0x1.0p-9;
  std::uint64_t seed = 1;
  std::optional<State> y_start;  // defaults to 0
  /// Largest admissible pullback bias; 0 disables the check.
  double bias_tol = 1e-3;
  IntegratorConfig integrator;
};

/// Pullback: M frozen-equation runs from t - S to t, particle i driven by the
/// two-sided fast noise seeded derive_seed(seed, tag, i). Throws PullbackTooShort
/// with the required S when the bias bound exceeds bias_tol.
MeasureEnsemble estimate_evolution_measure(const CoefficientBundle& bundle, const State& x, double t,
                                           const EnsembleOptions& opts);

/// Horizon S at which the pullback bias bound drops to tol.
double required_pullback(const CoefficientBundle& bundle, const State& x, const State& y_start, double tol);
double pullback_bias_bound(const CoefficientBundle& bundle, const State& x, const State& y_start, double S);

struct MixingOptions {
  double horizon = 5.0;
  double step = 0x1.0p-9;
  std::size_t replicas = 1000;
  std::uint64_t seed = 1;
  double s = 0.0;  // start time
  bool synchronous = true;  // false drives the second start with an independent noise
  std::size_t fit_points = 64;
  IntegratorConfig integrator;
};

struct MixingReport {
  double fitted_rate = 0.0;  // slope of log E|Y1 - Y2|^2 against elapsed time
  std::optional<double> theoretical_gamma;  // 2 b_1 - 2 sup phi - c^2 for a linear bundle; fitted_rate tends to its negative
  std::size_t pairs_used = 0;
  double fit_r2 = 0.0;
  bool truncated_window = false;
  bool degenerate = false;
  double window_end = 0.0;
  std::vector<double> times;
  std::vector<double> mean_sq_distance;
};

MixingReport estimate_mixing_rate(const CoefficientBundle& bundle, const State& x, const State& y1, const State& y2,
                                  const MixingOptions& opts);

using TestFunction = std::function<double(std::span<const double>)>;

struct McEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
};

/// E phi(Y_t^{s,x,y}) from M frozen runs.
McEstimate semigroup_expectation(const CoefficientBundle& bundle, const State& x, double s, double t, const State& y,
                                 const TestFunction& phi, std::size_t M, double step, std::uint64_t seed,
                                 const IntegratorConfig& cfg = {});

struct EvolutionCheckOptions {
  std::size_t M = 4000;
  double S = 10.0;
  double step = 0x1.0p-9;
  std::uint64_t seed = 1;
  double z_threshold = 4.0;
  /// Anchor of the comparison ensemble; defaults to x (the adversarial control sets x' != x).
  std::optional<State> x_compare;
  IntegratorConfig integrator;
};

struct EvolutionCheckReport {
  std::vector<double> discrepancy;  // mean_A(phi) - mean_B(phi)
  std::vector<double> z;
  double max_abs_z = 0.0;
  double combined_z = 0.0;  // sum of z / sqrt(n)
  bool passed = true;
};

/// Pushes a pullback ensemble for mu_s^x forward to t and compares it to an
/// independent pullback ensemble for mu_t^x; pass iff every |z| < z_threshold.
EvolutionCheckReport check_evolution_property(const CoefficientBundle& bundle, const State& x, double s, double t,
                                              const std::vector<TestFunction>& test_fns,
                                              const EvolutionCheckOptions& opts);

/// phi_j(y) = tanh(<a_j, y> + b_j) / (|a_j| + 1), each with BL-norm <= 1.
struct DictionaryFunction {
  std::vector<double> a;
  double b = 0.0;
  double operator()(std::span<const double> y) const;
};

/// Deterministic dictionary: per-mode axis functions over a few scales and
/// offsets first, then seeded random directions, size entries in total.
std::vector<DictionaryFunction> make_dictionary(std::size_t dim, std::size_t size, std::uint64_t seed);

/// Lower bound of d_BL(e1, e2): max over the dictionary of |mean_e1 phi - mean_e2 phi|.
double dbl_distance(const MeasureEnsemble& e1, const MeasureEnsemble& e2, std::size_t dictionary_size = 256,
                    std::uint64_t seed = 1);
double dbl_distance(const std::vector<State>& p1, const std::vector<State>& p2,
                    const std::vector<DictionaryFunction>& dictionary);

/// JSON header line followed by M * dim little-endian f64 values.
void write_ensemble(std::ostream& out, const MeasureEnsemble& ensemble);
MeasureEnsemble read_ensemble(std::istream& in);

}  // namespace avgsim
