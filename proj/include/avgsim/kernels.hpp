#pragma once

// Data-parallel inner loops shared by every module: spectral norms, the
// diagonal semi-implicit update, dense row products for the pseudo-spectral
// transforms and the test-function dictionary, and ensemble moments.
//
// Each kernel has a scalar reference and an AVX2 variant. Reductions use four
// interleaved partial sums combined as (p0 + p1) + (p2 + p3), followed by the
// tail in index order; the AVX2 code keeps exactly that order and never fuses
// multiply-adds, so both variants return identical bits.

#include <cstddef>
#include <span>
#include <string_view>

namespace avgsim::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum_squares)(const double* a, std::size_t n);
  double (*weighted_sum_squares)(const double* w, const double* a, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] = (y[i] + h * drift[i] + diffusion[i] * dw[i]) / denom[i]
  void (*semi_implicit_update)(double* y, const double* drift, double h, const double* diffusion,
                               const double* dw, const double* denom, std::size_t n);
  void (*accumulate_moments)(const double* v, double* sum, double* sumsq, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

bool isa_available(Isa isa);
/// ISA in use. Chosen once from CPU features; AVGSIM_ISA=scalar forces the reference.
Isa active_isa();
/// Override the dispatch (tests). Throws InvalidArgument if the ISA is unavailable.
void force_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& table();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return table().dot(a.data(), b.data(), a.size());
}
inline double sum_squares(std::span<const double> a) {
  return table().sum_squares(a.data(), a.size());
}
inline double weighted_sum_squares(std::span<const double> w, std::span<const double> a) {
  return table().weighted_sum_squares(w.data(), a.data(), a.size());
}
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return table().squared_distance(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  table().axpy(alpha, x.data(), y.data(), x.size());
}
inline void semi_implicit_update(std::span<double> y, std::span<const double> drift, double h,
                                 std::span<const double> diffusion, std::span<const double> dw,
                                 std::span<const double> denom) {
  table().semi_implicit_update(y.data(), drift.data(), h, diffusion.data(), dw.data(),
                               denom.data(), y.size());
}
inline void accumulate_moments(std::span<const double> v, std::span<double> sum,
                               std::span<double> sumsq) {
  table().accumulate_moments(v.data(), sum.data(), sumsq.data(), v.size());
}

/// out[r] = dot(row r of a row-major rows x cols matrix, x)
void gemv(std::span<const double> matrix, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> out);

}  // namespace avgsim::kernels
