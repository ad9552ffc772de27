#include <algorithm>
#include <cmath>
#include <numbers>

#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"
#include "avgsim/spaces.hpp"

namespace avgsim {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::dirichlet_laplacian_1d:
      return "dirichlet_laplacian_1d";
    case OperatorKind::neumann_laplacian_1d:
      return "neumann_laplacian_1d";
    case OperatorKind::custom:
      return "custom";
  }
  return "custom";
}

OperatorKind operator_kind_from_string(const std::string& name) {
  if (name == "dirichlet_laplacian_1d") return OperatorKind::dirichlet_laplacian_1d;
  if (name == "neumann_laplacian_1d") return OperatorKind::neumann_laplacian_1d;
  if (name == "custom") return OperatorKind::custom;
  throw InvalidArgument("unknown operator kind '" + name + "'");
}

bool State::all_finite() const noexcept {
  return std::all_of(coeffs_.begin(), coeffs_.end(), [](double v) { return std::isfinite(v); });
}

GalerkinSpace GalerkinSpace::from_eigenvalues(std::vector<double> eigenvalues, double v_exponent,
                                              std::string label, OperatorKind kind) {
  if (eigenvalues.empty()) throw InvalidArgument("GalerkinSpace: dim must be >= 1");
  for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
    if (!(eigenvalues[k] > 0.0) || !std::isfinite(eigenvalues[k])) {
      throw InvalidArgument("GalerkinSpace: eigenvalues must be finite and > 0");
    }
    if (k > 0 && eigenvalues[k] < eigenvalues[k - 1]) {
      throw InvalidArgument("GalerkinSpace: eigenvalues must be non-decreasing");
    }
  }
  if (!std::isfinite(v_exponent)) throw InvalidArgument("GalerkinSpace: v_exponent must be finite");
  GalerkinSpace s;
  s.eigenvalues_ = std::move(eigenvalues);
  s.v_exponent_ = v_exponent;
  s.label_ = std::move(label);
  s.kind_ = kind;
  s.v_weights_.resize(s.eigenvalues_.size());
  s.vstar_weights_.resize(s.eigenvalues_.size());
  for (std::size_t k = 0; k < s.eigenvalues_.size(); ++k) {
    s.v_weights_[k] = std::pow(s.eigenvalues_[k], v_exponent);
    s.vstar_weights_[k] = std::pow(s.eigenvalues_[k], -v_exponent);
  }
  return s;
}

double GalerkinSpace::embedding_constant() const { return std::pow(first_eigenvalue(), -0.5 * v_exponent_); }

GalerkinSpace make_space(std::size_t dim, OperatorKind kind, double v_exponent, double mass_shift) {
  if (dim == 0) throw InvalidArgument("make_space: dim must be >= 1");
  std::vector<double> ev(dim);
  const double pi = std::numbers::pi;
  switch (kind) {
    case OperatorKind::dirichlet_laplacian_1d:
      for (std::size_t k = 0; k < dim; ++k) ev[k] = std::pow(static_cast<double>(k + 1) * pi, 2);
      break;
    case OperatorKind::neumann_laplacian_1d:
      if (!(mass_shift > 0.0) || mass_shift > pi * pi) {
        throw InvalidArgument("make_space: Neumann mass shift must lie in (0, pi^2]");
      }
      ev[0] = mass_shift;
      for (std::size_t k = 1; k < dim; ++k) ev[k] = std::pow(static_cast<double>(k) * pi, 2);
      break;
    case OperatorKind::custom:
      throw InvalidArgument("make_space: use GalerkinSpace::from_eigenvalues for custom spectra");
  }
  return GalerkinSpace::from_eigenvalues(std::move(ev), v_exponent, to_string(kind), kind);
}

double norm(const GalerkinSpace& space, std::span<const double> u, NormKind which) {
  if (u.size() != space.dim()) {
    throw InvalidArgument("norm: state has dim " + std::to_string(u.size()) + ", space has " +
                          std::to_string(space.dim()));
  }
  switch (which) {
    case NormKind::H:
      return std::sqrt(kernels::sum_squares(u));
    case NormKind::V:
      return std::sqrt(kernels::weighted_sum_squares(space.v_weights(), u));
    case NormKind::V_star:
      return std::sqrt(kernels::weighted_sum_squares(space.vstar_weights(), u));
  }
  return 0.0;
}

double norm(const GalerkinSpace& space, const State& u, NormKind which) { return norm(space, u.span(), which); }

TimeGrid::TimeGrid(double t0, double t_end, double step) : t0_(t0), t_end_(t_end), step_(step) {
  if (!std::isfinite(t0) || !std::isfinite(t_end) || !(t_end > t0)) {
    throw InvalidArgument("TimeGrid: need finite t0 < t_end");
  }
  if (!(step > 0.0)) throw InvalidArgument("TimeGrid: step must be > 0");
  const double n = (t_end - t0) / step;
  const double rounded = std::round(n);
  if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, rounded)) {
    throw InvalidArgument("TimeGrid: (t_end - t0)/step = " + std::to_string(n) + " is not an integer");
  }
  points_ = static_cast<std::size_t>(rounded) + 1;
}

double TimeGrid::time(std::size_t i) const noexcept {
  if (i + 1 >= points_) return t_end_;
  return t0_ + static_cast<double>(i) * step_;
}

}  // namespace avgsim
