#include "avgsim/kernels.hpp"

namespace avgsim::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double p[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    p[0] += a[i] * b[i];
    p[1] += a[i + 1] * b[i + 1];
    p[2] += a[i + 2] * b[i + 2];
    p[3] += a[i + 3] * b[i + 3];
  }
  double s = (p[0] + p[1]) + (p[2] + p[3]);
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_squares_scalar(const double* a, std::size_t n) { return dot_scalar(a, a, n); }

double weighted_sum_squares_scalar(const double* w, const double* a, std::size_t n) {
  double p[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    for (std::size_t j = 0; j < 4; ++j) p[j] += w[i + j] * (a[i + j] * a[i + j]);
  }
  double s = (p[0] + p[1]) + (p[2] + p[3]);
  for (std::size_t i = n4; i < n; ++i) s += w[i] * (a[i] * a[i]);
  return s;
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
  double p[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = a[i + j] - b[i + j];
      p[j] += d * d;
    }
  }
  double s = (p[0] + p[1]) + (p[2] + p[3]);
  for (std::size_t i = n4; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void semi_implicit_update_scalar(double* y, const double* drift, double h, const double* diffusion,
                                 const double* dw, const double* denom, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ((y[i] + h * drift[i]) + diffusion[i] * dw[i]) / denom[i];
  }
}

void accumulate_moments_scalar(const double* v, double* sum, double* sumsq, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    sum[i] += v[i];
    sumsq[i] += v[i] * v[i];
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{dot_scalar,         sum_squares_scalar,
                             weighted_sum_squares_scalar, squared_distance_scalar,
                             axpy_scalar,        semi_implicit_update_scalar,
                             accumulate_moments_scalar};
  return t;
}

}  // namespace avgsim::kernels
