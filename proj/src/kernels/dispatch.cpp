#include <atomic>
#include <cstdlib>
#include <string>

#include "avgsim/errors.hpp"
#include "avgsim/kernels.hpp"

namespace avgsim::kernels {
namespace {

Isa detect() {
  if (const char* env = std::getenv("AVGSIM_ISA"); env != nullptr && std::string(env) == "scalar") {
    return Isa::scalar;
  }
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<int>& current() {
  static std::atomic<int> isa{static_cast<int>(detect())};
  return isa;
}

}  // namespace

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return static_cast<Isa>(current().load(std::memory_order_relaxed)); }

void force_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw InvalidArgument("kernels: ISA " + std::string(isa_name(isa)) + " not available on this CPU");
  }
  current().store(static_cast<int>(isa), std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const KernelTable& table() {
#if defined(__x86_64__) || defined(_M_X64)
  if (active_isa() == Isa::avx2) return avx2_table();
#endif
  return scalar_table();
}

void gemv(std::span<const double> matrix, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> out) {
  const KernelTable& t = table();
  for (std::size_t r = 0; r < rows; ++r) out[r] = t.dot(matrix.data() + r * cols, x.data(), cols);
}

}  // namespace avgsim::kernels
