#pragma once

// Averaged coefficients: F-bar(t,x) over mu_t^x, Bohr means and the limit
// drift F-bar(x), the asymptotic operator A-bar and time-averaged G1-bar,
// almost-periodicity diagnostics, and the Khasminskii auxiliary fast process.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "avgsim/coeffs.hpp"
#include "avgsim/ergodic.hpp"
#include "avgsim/integrate.hpp"

namespace avgsim {

enum class DriftMode { oracle_linear, nested_mc, tabulated };
std::string to_string(DriftMode mode);
DriftMode drift_mode_from_string(const std::string& name);

struct ProviderOptions {
  DriftMode mode = DriftMode::oracle_linear;
  std::size_t ensemble_M = 1000;
  double pullback_S = 0.0;  // 0 picks the S that meets bias_tol
  double bias_tol = 1e-3;
  double step = 0x1.0p-9;
  std::uint64_t seed = 1;
  double stderr_tol = 0.05;  // nested_mc: largest admissible per-mode stderr
  double t_quantum = 1e-3;
  double x_quantum = 1e-6;
  IntegratorConfig integrator;
  friend bool operator==(const ProviderOptions&, const ProviderOptions&) = default;
};

struct DriftKey {
  std::int64_t t;
  std::vector<std::int64_t> x;
  friend bool operator<(const DriftKey& a, const DriftKey& b) {
    return a.t != b.t ? a.t < b.t : a.x < b.x;
  }
  friend bool operator==(const DriftKey&, const DriftKey&) = default;
};

struct DriftValue {
  std::vector<double> drift;
  std::vector<double> stderr_;
};

/// Source of F-bar(t, x) = integral of F(t, x, y) mu_t^x(dy).
///
/// oracle_linear: closed form for a linear fast equation and F affine in y; the
///   mean of mu_t^x solves m' = (phi(t) - b_k) m + a x_k and is evaluated as its
///   pullback integral by Gauss-Legendre quadrature.
/// nested_mc: pullback ensemble per quantized (t, x) key, computed at the key
///   centre with seeds derived from the key, so values never depend on query order.
/// tabulated: exact key lookup in a loaded table.
///
/// Thread-safe; the referenced bundle must outlive the provider.
class AveragedDriftProvider {
 public:
  AveragedDriftProvider(const CoefficientBundle& bundle, ProviderOptions opts);

  const ProviderOptions& options() const noexcept { return opts_; }
  const CoefficientBundle& bundle() const noexcept { return bundle_; }
  void drift(double t, std::span<const double> x, std::span<double> out) const;
  /// Drift plus its Monte Carlo stderr (zeros for the oracle).
  DriftValue evaluate(double t, std::span<const double> x) const;
  SlowDrift as_slow_drift() const;

  DriftKey key(double t, std::span<const double> x) const;
  /// Evaluates the current mode at each key centre and stores it for export.
  void tabulate(const std::vector<double>& times, const std::vector<State>& xs);
  void export_table(std::ostream& out) const;
  /// Replaces the table; the provider should be in tabulated mode to use it.
  void load_table(std::istream& in);

  std::size_t cache_hits() const;
  std::size_t cache_misses() const;
  std::size_t table_size() const;

  /// Oracle mean factor g_k(t): the mode-k mean of mu_t^x is a x_k g_k(t).
  double oracle_mean_factor(std::size_t k, double t) const;

 private:
  DriftValue compute_nested(const DriftKey& k) const;
  DriftValue compute_oracle(double t, std::span<const double> x) const;
  double key_time(const DriftKey& k) const;
  std::vector<double> key_state(const DriftKey& k) const;

  const CoefficientBundle& bundle_;
  ProviderOptions opts_;
  mutable std::mutex mutex_;
  mutable std::map<DriftKey, DriftValue> table_;
  mutable std::unordered_map<std::uint64_t, std::vector<double>> oracle_cache_;
  mutable std::size_t hits_ = 0;
  mutable std::size_t misses_ = 0;
};

State averaged_drift(const AveragedDriftProvider& provider, double t, const State& x);

/// Convenience: simulate_averaged_eps driven by a provider.
PathSample simulate_averaged_eps(const CoefficientBundle& bundle, double eps, const State& x0, const TimeGrid& grid,
                                 const AveragedDriftProvider& provider, const SeedRecord& seeds,
                                 const IntegratorConfig& cfg = {});

struct BohrMeanReport {
  std::vector<double> value;
  double window_T = 0.0;
  double tail_estimate = 0.0;  // max over anchors of |window mean - value|
  std::size_t anchors_probed = 0;
  std::vector<std::vector<double>> window_means;
};

using VectorSignal = std::function<std::vector<double>(double)>;
using ScalarSignal = std::function<double(double)>;

/// Mean over anchors of the trapezoid window means T^-1 int_a^{a+T} f.
BohrMeanReport bohr_mean(const VectorSignal& f, double T, const std::vector<double>& anchors, double quad_step);
BohrMeanReport bohr_mean(const ScalarSignal& f, double T, const std::vector<double>& anchors, double quad_step);

/// F-bar(x) as the Bohr mean of s -> F-bar(s, x); tail_estimate is the anchor spread.
BohrMeanReport bohr_limit_drift(const AveragedDriftProvider& provider, const State& x, double T,
                                const std::vector<double>& anchors, double quad_step);

/// Diagonal L-bar with F-bar(x) = L-bar o x. Oracle providers only (F-bar(t,.) is linear there).
std::vector<double> limit_drift_diagonal(const AveragedDriftProvider& provider, double T,
                                         const std::vector<double>& anchors, double quad_step);

struct AsymptoticA {
  double ell1_bar = 1.0;
  double residual = 0.0;  // max over probes of |A(t_probe, x) - A-bar(x)|_{V*}
  void apply(const CoefficientBundle& bundle, std::span<const double> x, std::span<double> out) const {
    bundle.A_scaled(ell1_bar, x, out);
  }
};

/// Throws UnsupportedBundle without almost-periodic metadata.
AsymptoticA asymptotic_A(const CoefficientBundle& bundle, const std::vector<State>& probes, double t_probe);

struct TimeAveragedG1 {
  double ell2_bar = 1.0;  // G1-bar(x) = ell2_bar (g1_mult x + g1_add)
  double deviation = 0.0;  // max over anchors of T^-1 int |G1(s,x) - G1-bar(x)|^2 ds
};
TimeAveragedG1 time_avg_G1(const CoefficientBundle& bundle, const State& x, double T,
                           const std::vector<double>& anchors, double quad_step);

LimitCoefficients limit_coefficients(const CoefficientBundle& bundle, const AveragedDriftProvider& provider, double T,
                                     const std::vector<double>& anchors, double quad_step);

enum class DeltaRule { fixed, eps_two_thirds };
std::string to_string(DeltaRule rule);
DeltaRule delta_rule_from_string(const std::string& name);

struct KhasminskiiConfig {
  double delta = 0.01;
  DeltaRule rule = DeltaRule::eps_two_thirds;
  /// delta for this eps: eps^{2/3} under eps_two_thirds, else the fixed value.
  double effective_delta(double eps) const;
};

/// Fast auxiliary process with the slow input frozen on blocks [k delta, (k+1) delta):
/// at each step it uses the slow path at the latest grid point <= floor(t/delta) delta.
PathSample khasminskii_auxiliary(const CoefficientBundle& bundle, double eps, const PathSample& slow_path,
                                 const State& y0, const KhasminskiiConfig& kcfg, const SeedRecord& seeds,
                                 const IntegratorConfig& cfg = {});

/// tau in [tau_min, tau_max] on a tau_step lattice with max over probes of
/// |f(t + tau) - f(t)| < epsilon_ap. A necessary-condition scan on finite probes.
std::vector<double> translation_number_scan(const VectorSignal& f, double epsilon_ap, double tau_min, double tau_max,
                                            double tau_step, const std::vector<double>& probes);
std::vector<double> translation_number_scan(const ScalarSignal& f, double epsilon_ap, double tau_min, double tau_max,
                                            double tau_step, const std::vector<double>& probes);

/// Largest gap between consecutive accepted tau (including the range ends).
double max_translation_gap(const std::vector<double>& taus, double lo, double hi);

struct ApDiagnosticOptions {
  std::size_t M = 4000;
  double S = 0.0;  // 0 picks the S that meets bias_tol
  double bias_tol = 1e-3;
  double step = 0x1.0p-9;
  std::uint64_t seed = 1;
  std::size_t dictionary_size = 256;
  double epsilon_ap = 0.002;
  IntegratorConfig integrator;
};

struct ApDiagnosticReport {
  std::vector<double> taus;
  std::vector<double> anchors;
  std::vector<std::vector<double>> distances;  // [tau][anchor]
  double noise_floor = 0.0;  // max over anchors of d_BL between two independent ensembles at t
  double threshold = 0.0;  // epsilon_ap + 3 noise_floor
  double max_distance = 0.0;
  bool passed = true;
};

/// Compares mu_{t+tau}^x with mu_t^x on the dictionary for each tau and anchor.
ApDiagnosticReport measure_ap_diagnostic(const CoefficientBundle& bundle, const State& x,
                                         const std::vector<double>& taus, const std::vector<double>& anchors,
                                         const ApDiagnosticOptions& opts);

}  // namespace avgsim
