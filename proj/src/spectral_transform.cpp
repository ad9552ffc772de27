#include <cmath>
#include <numbers>

#include "avgsim/coeffs.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"

namespace avgsim {

// Midpoint rule with Q nodes integrates cos(m pi xi) exactly on [0,1] unless
// m is a multiple of 2Q. Products of four basis functions reach m = 4N, so
// Q = 3N is exact for cubes, their Jacobian and the quartic integral.
SpectralTransform::SpectralTransform(OperatorKind kind, std::size_t dim) : dim_(dim), nodes_(3 * dim) {
  if (dim == 0) throw InvalidArgument("SpectralTransform: dim must be >= 1");
  if (kind == OperatorKind::custom) {
    throw UnsupportedBundle("SpectralTransform: cubic terms need a dirichlet or neumann basis");
  }
  const double pi = std::numbers::pi;
  const double w = 1.0 / static_cast<double>(nodes_);
  basis_.resize(nodes_ * dim_);
  basis_t_weighted_.resize(dim_ * nodes_);
  for (std::size_t q = 0; q < nodes_; ++q) {
    const double xi = (static_cast<double>(q) + 0.5) * w;
    for (std::size_t k = 0; k < dim_; ++k) {
      double e;
      if (kind == OperatorKind::dirichlet_laplacian_1d) {
        e = std::sqrt(2.0) * std::sin(static_cast<double>(k + 1) * pi * xi);
      } else {
        e = k == 0 ? 1.0 : std::sqrt(2.0) * std::cos(static_cast<double>(k) * pi * xi);
      }
      basis_[q * dim_ + k] = e;
      basis_t_weighted_[k * nodes_ + q] = w * e;
    }
  }
}

void SpectralTransform::project_cube(std::span<const double> u, std::span<double> out) const {
  std::vector<double> vals(nodes_);
  kernels::gemv(basis_, nodes_, dim_, u, vals);
  for (double& v : vals) v = v * v * v;
  kernels::gemv(basis_t_weighted_, dim_, nodes_, vals, out);
}

void SpectralTransform::cube_jacobian(std::span<const double> u, std::span<double> jac) const {
  std::vector<double> vals(nodes_);
  kernels::gemv(basis_, nodes_, dim_, u, vals);
  std::vector<double> col(nodes_);
  for (std::size_t k = 0; k < dim_; ++k) {
    const double* bk = &basis_t_weighted_[k * nodes_];
    for (std::size_t q = 0; q < nodes_; ++q) col[q] = 3.0 * bk[q] * vals[q] * vals[q];
    for (std::size_t l = k; l < dim_; ++l) {
      double s = 0.0;
      for (std::size_t q = 0; q < nodes_; ++q) s += col[q] * basis_[q * dim_ + l];
      jac[k * dim_ + l] = s;
      jac[l * dim_ + k] = s;
    }
  }
}

double SpectralTransform::quartic_integral(std::span<const double> u) const {
  std::vector<double> vals(nodes_);
  kernels::gemv(basis_, nodes_, dim_, u, vals);
  double s = 0.0;
  for (double v : vals) s += v * v * v * v;
  return s / static_cast<double>(nodes_);
}

}  // namespace avgsim
