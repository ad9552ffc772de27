#pragma once

// Finite-dimensional Gelfand triples V ⊂ H ⊂ V* on a spectral basis, time
// grids, and the two-sided cylindrical Wiener noise every simulation draws from.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace avgsim {

enum class OperatorKind { dirichlet_laplacian_1d, neumann_laplacian_1d, custom };
enum class NormKind { H, V, V_star };

std::string to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(const std::string& name);

/// Basis coefficients of an element of H. Length is the owning space's dim.
class State {
 public:
  State() = default;
  explicit State(std::size_t dim) : coeffs_(dim, 0.0) {}
  explicit State(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {}

  std::size_t dim() const noexcept { return coeffs_.size(); }
  double& operator[](std::size_t k) { return coeffs_[k]; }
  double operator[](std::size_t k) const { return coeffs_[k]; }
  std::span<double> span() noexcept { return coeffs_; }
  std::span<const double> span() const noexcept { return coeffs_; }
  const std::vector<double>& coeffs() const noexcept { return coeffs_; }
  bool all_finite() const noexcept;

  friend bool operator==(const State&, const State&) = default;

 private:
  std::vector<double> coeffs_;
};

/// Truncated Hilbert space: eigenpairs of the reference elliptic operator and
/// the spectral weight lambda^s that realizes the V-norm.
class GalerkinSpace {
 public:
  /// eigenvalues must be strictly positive and non-decreasing.
  static GalerkinSpace from_eigenvalues(std::vector<double> eigenvalues, double v_exponent,
                                        std::string label, OperatorKind kind = OperatorKind::custom);

  std::size_t dim() const noexcept { return eigenvalues_.size(); }
  std::span<const double> eigenvalues() const noexcept { return eigenvalues_; }
  double eigenvalue(std::size_t k) const { return eigenvalues_[k]; }
  double first_eigenvalue() const noexcept { return eigenvalues_.front(); }
  double v_exponent() const noexcept { return v_exponent_; }
  const std::string& label() const noexcept { return label_; }
  OperatorKind kind() const noexcept { return kind_; }
  /// lambda_k^s and lambda_k^{-s}
  std::span<const double> v_weights() const noexcept { return v_weights_; }
  std::span<const double> vstar_weights() const noexcept { return vstar_weights_; }
  /// C in ||u||_H <= C ||u||_V, i.e. lambda_1^{-s/2} (s >= 0).
  double embedding_constant() const;

  friend bool operator==(const GalerkinSpace& a, const GalerkinSpace& b) {
    return a.eigenvalues_ == b.eigenvalues_ && a.v_exponent_ == b.v_exponent_ && a.label_ == b.label_ &&
           a.kind_ == b.kind_;
  }

 private:
  GalerkinSpace() = default;
  std::vector<double> eigenvalues_;
  std::vector<double> v_weights_;
  std::vector<double> vstar_weights_;
  double v_exponent_ = 1.0;
  std::string label_;
  OperatorKind kind_ = OperatorKind::custom;
};

/// Analytic spectra on [0,1]: Dirichlet (k pi)^2; Neumann ((k-1) pi)^2 with the
/// zero mode lifted to mass_shift.
GalerkinSpace make_space(std::size_t dim, OperatorKind kind, double v_exponent, double mass_shift = 1.0);

double norm(const GalerkinSpace& space, std::span<const double> u, NormKind which);
double norm(const GalerkinSpace& space, const State& u, NormKind which);

/// Uniform grid t0, t0+h, ..., t_end. (t_end - t0)/h must be integral to 1e-9.
class TimeGrid {
 public:
  TimeGrid(double t0, double t_end, double step);

  double t0() const noexcept { return t0_; }
  double t_end() const noexcept { return t_end_; }
  double step() const noexcept { return step_; }
  std::size_t points() const noexcept { return points_; }
  std::size_t intervals() const noexcept { return points_ - 1; }
  double time(std::size_t i) const noexcept;

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double t0_;
  double t_end_;
  double step_;
  std::size_t points_;
};

namespace stream {
inline constexpr std::uint32_t W1 = 1;  // slow noise
inline constexpr std::uint32_t W2 = 2;  // fast noise; negative times use its copy W^{2,1}
}  // namespace stream

/// Seeded truncated cylindrical Wiener process on the whole real line.
///
/// Each mode is a Brownian path generated as a dyadic Brownian tree: node values
/// come from conditional (bridge) draws keyed on (seed, stream, side, mode,
/// depth, index), stored as integers in units of 2^-40 so that increments over
/// adjacent intervals add up exactly. Times below the finest cell 2^-finest_level
/// are filled by one keyed bridge draw per cell. Negative times read the
/// reflected independent copy, W(t) = W^{copy}(-t).
struct NoiseSource {
  std::uint64_t seed = 0;
  std::size_t modes = 1;
  std::uint32_t stream_id = stream::W1;
  int finest_level = 20;

  friend bool operator==(const NoiseSource&, const NoiseSource&) = default;
};

/// Increment W(t) - W(s), one entry per mode. s < t, either may be negative.
std::vector<double> wiener_increment(const NoiseSource& src, double s, double t);

/// Stateful reader over a NoiseSource that caches the most recent tree descent
/// per mode, making sequential increments O(1) amortized. Results never depend
/// on the cache. Not thread-safe; use one cursor per task.
class NoiseCursor {
 public:
  explicit NoiseCursor(const NoiseSource& src);

  const NoiseSource& source() const noexcept { return src_; }
  void increment(double s, double t, std::span<double> out);
  std::vector<double> increment(double s, double t);
  /// Path value W(t) for one mode.
  double value(std::size_t mode, double t);

  static constexpr int kTopLevel = 24;  // the tree spans |t| <= 2^24 s
  static constexpr double kQuantum = 0x1.0p-40;

 private:
  struct Descent {
    static constexpr int kMaxDepth = kTopLevel + 29;
    std::array<std::int64_t, kMaxDepth + 1> lo{};
    std::array<std::int64_t, kMaxDepth + 1> w_lo{};
    std::array<std::int64_t, kMaxDepth + 1> w_hi{};
    int valid = -1;
    std::uint64_t prefix = 0;  // hash state after (seed, stream, side, mode)
    double last_position = -1.0;
    std::int64_t last_value = 0;
  };

  std::int64_t quantized(std::size_t mode, double t);
  std::int64_t quantized_side(std::size_t mode, int side, double position);

  NoiseSource src_;
  int depth_max_;
  double cells_per_second_;
  double seconds_per_cell_;
  std::vector<Descent> cache_;  // [mode * 2 + side]
};

}  // namespace avgsim
