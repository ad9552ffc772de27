#pragma once

// Convergence experiments: strong errors of the slow component against the two
// averaged equations over an eps ladder, rate fits against the eps^{1/6}
// bound, the Khasminskii delta study, and the stopping-functional diagnostic.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avgsim/average.hpp"
#include "avgsim/coeffs.hpp"
#include "avgsim/integrate.hpp"
#include "avgsim/spaces.hpp"

namespace avgsim {

inline constexpr int kReportSchemaVersion = 1;

struct SpacesConfig {
  std::size_t slow_dim = 16;
  OperatorKind slow_kind = OperatorKind::neumann_laplacian_1d;
  double slow_v_exponent = 2.0;
  double mass_shift = 1.0;
  std::size_t fast_dim = 16;
  OperatorKind fast_kind = OperatorKind::dirichlet_laplacian_1d;
  double fast_v_exponent = 1.0;

  GalerkinSpace slow() const;
  GalerkinSpace fast() const;
  friend bool operator==(const SpacesConfig&, const SpacesConfig&) = default;
};

/// x0_k = x_amplitude / k and y0_k = y_amplitude / k (k = 1, 2, ...).
struct InitialCondition {
  double x_amplitude = 1.0;
  double y_amplitude = 0.0;
  friend bool operator==(const InitialCondition&, const InitialCondition&) = default;
};

struct ExperimentPlan {
  ExampleSystem system;
  SpacesConfig spaces;
  std::vector<double> eps_list{0.1, 0.02, 0.004};
  std::size_t mc_paths = 200;
  double horizon = 1.0;
  double moment_p = 1.0;
  IntegratorConfig integrator;
  ProviderOptions provider;
  InitialCondition initial;
  std::uint64_t seed_base = 1;
  // Bohr-mean settings for the limit drift of the eps-free equation.
  double bohr_T = 200.0;
  double bohr_quad_step = 0.02;
  std::vector<double> bohr_anchors{0.0, 50.0};
  // Khasminskii study.
  std::vector<double> delta_list{0.2, 0.05, 0.0125};
  double khasminskii_eps = 0.01;

  /// Throws InvalidArgument naming the violated constraint.
  void validate() const;
  State x0() const;
  State y0() const;
};

struct EpsRow {
  double eps = 0.0;
  double strong_error = 0.0;
  double stderr_ = 0.0;
  std::size_t failed_paths = 0;
  std::size_t used_paths = 0;
  bool valid = true;  // failures <= 5% of paths
  bool conditional = false;  // failures > 0: estimate conditional on survival
  double wall_time = 0.0;  // seconds; kept out of results.json
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_stderr = 0.0;
  bool low_r2 = false;  // r2 < 0.8
};

/// OLS of log error against log eps. Non-positive errors are skipped.
RateFit fit_rate(const std::vector<double>& eps, const std::vector<double>& error);

struct ConvergenceReport {
  std::string theorem;  // "T1" or "T2"
  std::vector<EpsRow> rows;
  RateFit rate_fit;
  bool bound_check = false;  // slope >= 1/6 - slope_stderr
  bool monotone_decreasing = false;  // e_i - e_{i+1} > 2 sqrt(se_i^2 + se_{i+1}^2) for all i
  bool inconclusive = true;
  std::vector<std::string> flags;
  /// T2 only: the intermediate comparison X-bar^eps against X-bar.
  std::vector<EpsRow> intermediate;
  /// T2 only: E sup |X-bar^{(h)} - X-bar^{(h/2)}|^{2p} on the coarse grid.
  std::optional<double> h_refinement_delta;
  std::vector<double> limit_drift_diagonal;
  double total_wall_time = 0.0;
};

/// sup over grid points of |a - b|_H^{2p}; throws on grid mismatch or missing slow parts.
double strong_error(const PathSample& a, const PathSample& b, double p);

/// Builds the bundle for the plan's system and spaces.
CoefficientBundle build_plan_system(const ExperimentPlan& plan);

/// X^eps against X-bar^eps under coupled W1, path i seeded seed_base + i.
ConvergenceReport run_convergence_T1(const ExperimentPlan& plan);
/// Same with an explicit averaged drift in place of the provider (self-tests).
ConvergenceReport run_convergence_T1(const ExperimentPlan& plan, const SlowDrift& avg_drift);
/// X^eps against X-bar with limit coefficients from the Bohr means.
ConvergenceReport run_convergence_T2(const ExperimentPlan& plan);

struct DeltaRow {
  double delta = 0.0;
  double error = 0.0;  // E int_0^T |Y - Y-hat|^2 dt
  double stderr_ = 0.0;
  std::size_t failed_paths = 0;
};

struct KhasminskiiReport {
  double eps = 0.0;
  std::vector<DeltaRow> rows;
  RateFit fit;  // log error against log delta
  bool passed = false;  // slope in [0.3, 0.8]
  double total_wall_time = 0.0;
};

KhasminskiiReport run_khasminskii_study(const ExperimentPlan& plan, const std::vector<double>& delta_list);

struct StoppingDiagnostic {
  std::vector<double> times;
  std::vector<double> functional_trace;
  double threshold_R = 0.0;
  std::optional<double> hit_time;
};

/// Trapezoid integral of (1 + |X|_V^alpha) h_beta(|X|_H) along the slow path.
StoppingDiagnostic stopping_diagnostic(const PathSample& path, const GalerkinSpace& space, double alpha, double beta,
                                       double R);

/// Results documents. JSON keys are emitted in a fixed order and contain no
/// wall-clock data; timing goes to a separate document.
std::string report_json(const ConvergenceReport& report, const ExperimentPlan& plan);
std::string report_json(const KhasminskiiReport& report, const ExperimentPlan& plan);
std::string report_csv(const ConvergenceReport& report);
std::string report_csv(const KhasminskiiReport& report);
std::string timing_json(const ConvergenceReport& report);
std::string timing_json(const KhasminskiiReport& report);

/// Shortest round-trip decimal, locale-independent.
std::string format_double(double v);

}  // namespace avgsim
