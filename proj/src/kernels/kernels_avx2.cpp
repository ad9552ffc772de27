// Compiled with -mavx2 only (no -mfma): every lane performs the same rounded
// multiply and add as the scalar reference.
#include <immintrin.h>

#include "avgsim/kernels.hpp"

namespace avgsim::kernels {
namespace {

inline double combine(__m256d acc) {
  alignas(32) double p[4];
  _mm256_store_pd(p, acc);
  return (p[0] + p[1]) + (p[2] + p[3]);
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, prod);
  }
  double s = combine(acc);
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_squares_avx2(const double* a, std::size_t n) { return dot_avx2(a, a, n); }

double weighted_sum_squares_avx2(const double* w, const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d va = _mm256_loadu_pd(a + i);
    const __m256d sq = _mm256_mul_pd(va, va);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(w + i), sq));
  }
  double s = combine(acc);
  for (std::size_t i = n4; i < n; ++i) s += w[i] * (a[i] * a[i]);
  return s;
}

double squared_distance_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = combine(acc);
  for (std::size_t i = n4; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d r = _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, r);
  }
  for (std::size_t i = n4; i < n; ++i) y[i] += alpha * x[i];
}

void semi_implicit_update_avx2(double* y, const double* drift, double h, const double* diffusion,
                               const double* dw, const double* denom, std::size_t n) {
  const __m256d vh = _mm256_set1_pd(h);
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    __m256d r = _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(vh, _mm256_loadu_pd(drift + i)));
    r = _mm256_add_pd(r, _mm256_mul_pd(_mm256_loadu_pd(diffusion + i), _mm256_loadu_pd(dw + i)));
    _mm256_storeu_pd(y + i, _mm256_div_pd(r, _mm256_loadu_pd(denom + i)));
  }
  for (std::size_t i = n4; i < n; ++i) {
    y[i] = ((y[i] + h * drift[i]) + diffusion[i] * dw[i]) / denom[i];
  }
}

void accumulate_moments_avx2(const double* v, double* sum, double* sumsq, std::size_t n) {
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d x = _mm256_loadu_pd(v + i);
    _mm256_storeu_pd(sum + i, _mm256_add_pd(_mm256_loadu_pd(sum + i), x));
    _mm256_storeu_pd(sumsq + i, _mm256_add_pd(_mm256_loadu_pd(sumsq + i), _mm256_mul_pd(x, x)));
  }
  for (std::size_t i = n4; i < n; ++i) {
    sum[i] += v[i];
    sumsq[i] += v[i] * v[i];
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t{dot_avx2,         sum_squares_avx2,
                             weighted_sum_squares_avx2, squared_distance_avx2,
                             axpy_avx2,        semi_implicit_update_avx2,
                             accumulate_moments_avx2};
  return t;
}

}  // namespace avgsim::kernels
