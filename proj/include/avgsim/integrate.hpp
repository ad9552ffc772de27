#pragma once

// Time stepping for the coupled slow-fast system, the frozen fast equation and
// the two averaged slow equations.
//
// The default scheme is drift-implicit on the monotone parts (the diagonal
// spectral rates and the cubic absorption, solved by Newton) and explicit in
// everything else, with nonautonomous scalars taken at the left endpoint.
// The fast equation sub-cycles with h_fast = h / ceil(h / min(h, eps * fast_factor)).

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "avgsim/coeffs.hpp"
#include "avgsim/spaces.hpp"

namespace avgsim {

enum class Scheme { semi_implicit_euler, tamed_euler };
std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& name);

struct IntegratorConfig {
  Scheme scheme = Scheme::semi_implicit_euler;
  double step = 2e-4;
  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  double taming_power = 1.0;
  double fast_factor = 0.1;
  int finest_level = 20;  // noise resolution 2^-finest_level s
  bool log_w1 = false;  // keep every slow-noise increment in the PathSample

  void validate() const;
  friend bool operator==(const IntegratorConfig&, const IntegratorConfig&) = default;
};

struct SeedRecord {
  std::uint64_t seed = 0;
  std::uint32_t slow_stream = stream::W1;
  std::uint32_t fast_stream = stream::W2;
  friend bool operator==(const SeedRecord&, const SeedRecord&) = default;
};

struct NoisePair {
  NoiseSource w1;
  NoiseSource w2;
};
NoisePair make_noise(const CoefficientBundle& bundle, const SeedRecord& seeds, const IntegratorConfig& cfg);

struct PathSample {
  TimeGrid grid{0.0, 1.0, 1.0};
  std::vector<State> slow;  // empty when absent
  std::vector<State> fast;  // empty when absent
  SeedRecord seeds;
  /// Order-sensitive hash of every slow-noise increment consumed (0 if none).
  std::uint64_t w1_checksum = 0;
  std::vector<double> w1_log;

  bool has_slow() const noexcept { return !slow.empty(); }
  bool has_fast() const noexcept { return !fast.empty(); }
};

/// F-bar style slow drift: out = D(tau, x), tau the fast-scale time t/eps.
using SlowDrift = std::function<void(double tau, std::span<const double> x, std::span<double> out)>;

/// Fast-equation stepper shared by the coupled, frozen and Khasminskii runs so
/// all three produce identical arithmetic for identical inputs.
class FastStepper {
 public:
  /// eps = 1 gives the frozen equation on its own clock.
  FastStepper(const CoefficientBundle& bundle, const IntegratorConfig& cfg, double eps);

  /// Advances y over [t0, t1] (real time) with slow input x, sub-cycling as configured.
  void advance(double t0, double t1, std::span<const double> x, std::span<double> y, NoiseCursor& w2);
  std::size_t substeps(double h) const;

 private:
  void substep(double t0, double t1, std::span<const double> x, std::span<double> y, NoiseCursor& w2);

  const CoefficientBundle& bundle_;
  IntegratorConfig cfg_;
  double eps_;
  double inv_sqrt_eps_;
  std::vector<double> drift_, diff_, dw_, denom_, g_, ones_;
};

/// Slow-equation stepper: x <- solve z (1 + h ell a) + h nu P(z^3) = x + h D + G1 dW.
class SlowStepper {
 public:
  SlowStepper(const CoefficientBundle& bundle, const IntegratorConfig& cfg);

  /// ell: the A-scale at the left endpoint; drift: explicit part D; loadings: G1 diagonal.
  void advance(double t, double h, double ell, std::span<const double> drift, std::span<const double> loadings,
               std::span<const double> dw, std::span<double> x);

 private:
  const CoefficientBundle& bundle_;
  IntegratorConfig cfg_;
  std::vector<double> full_dw_, diff_, denom_, ones_, a_;
};

/// One coupled step over [t, t + h]. Both equations see the left-endpoint state.
std::pair<State, State> step_coupled(const CoefficientBundle& bundle, double eps, const State& x, const State& y,
                                     double t, double h, const NoisePair& noise, const IntegratorConfig& cfg = {});

/// eps in (0, 1]; grid.t0 must be 0.
PathSample simulate_coupled(const CoefficientBundle& bundle, double eps, const State& x0, const State& y0,
                            const TimeGrid& grid, const SeedRecord& seeds, const IntegratorConfig& cfg = {});

/// Frozen fast equation dY = B(t,x,Y) dt + G2(t,x,Y) dW2 on [s, t_end]; s may be negative.
PathSample simulate_frozen(const CoefficientBundle& bundle, const State& x, double s, double t_end, const State& y,
                           double step, const SeedRecord& seeds, const IntegratorConfig& cfg = {});

/// Final state of the frozen equation only, for ensemble work.
State advance_frozen(const CoefficientBundle& bundle, const State& x, double s, double t_end, const State& y,
                     double step, const NoiseSource& w2, const IntegratorConfig& cfg = {});

/// dX = [A(t/eps, X) + D(t/eps, X)] dt + G1(t/eps, X) dW1 with the same W1 as simulate_coupled.
PathSample simulate_averaged_eps(const CoefficientBundle& bundle, double eps, const State& x0, const TimeGrid& grid,
                                 const SlowDrift& avg_drift, const SeedRecord& seeds,
                                 const IntegratorConfig& cfg = {});

/// Limit coefficients of the epsilon-free averaged equation.
struct LimitCoefficients {
  double ell1_bar = 1.0;  // A-bar = ell1_bar * A-shape
  double ell2_bar = 1.0;  // G1-bar = ell2_bar * (g1_mult x + g1_add)
  SlowDrift drift;  // F-bar(x); tau argument is ignored
};

PathSample simulate_averaged_limit(const CoefficientBundle& bundle, const LimitCoefficients& limits, const State& x0,
                                   const TimeGrid& grid, const SeedRecord& seeds, const IntegratorConfig& cfg = {});

/// Throws DivergenceDetected on a non-finite entry or a magnitude above 1e12.
void check_divergence(std::span<const double> v, double t, const char* what);

/// Binary column file: little-endian header (magic, dims, grid, seeds, checksum)
/// followed by the slow then fast coefficients of each grid point as f64.
void write_path_binary(std::ostream& out, const PathSample& path);
PathSample read_path_binary(std::istream& in);

}  // namespace avgsim
