#include <atomic>
#include <string>

#include "dpl/error.hpp"
#include "dpl/numerics/kernels.hpp"

namespace dpl::simd {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(DPL_WITH_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* table_or_null(Backend backend) noexcept {
  switch (backend) {
    case Backend::Scalar:
      return &detail::scalar_table();
    case Backend::Avx2:
#if defined(DPL_WITH_AVX2)
      if (cpu_has_avx2()) return &detail::avx2_table();
#endif
      return nullptr;
    case Backend::Neon:
#if defined(DPL_WITH_NEON)
      return &detail::neon_table();
#else
      return nullptr;
#endif
  }
  return nullptr;
}

std::atomic<const KernelTable*>& active_slot() noexcept {
  static std::atomic<const KernelTable*> slot{table_or_null(best_backend())};
  return slot;
}

}  // namespace

std::string_view to_string(Backend backend) noexcept {
  switch (backend) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
    case Backend::Neon: return "neon";
  }
  return "unknown";
}

bool backend_available(Backend backend) noexcept { return table_or_null(backend) != nullptr; }

Backend best_backend() noexcept {
  if (backend_available(Backend::Avx2)) return Backend::Avx2;
  if (backend_available(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

Backend active_backend() noexcept { return kernels().backend; }

void set_backend(Backend backend) { active_slot().store(&kernels_for(backend)); }

const KernelTable& kernels() noexcept { return *active_slot().load(std::memory_order_relaxed); }

const KernelTable& kernels_for(Backend backend) {
  const KernelTable* table = table_or_null(backend);
  if (table == nullptr) {
    fail(ErrorKind::Configuration,
         "kernel backend '" + std::string(to_string(backend)) + "' is not available");
  }
  return *table;
}

void gemm(const KernelTable& table, const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) table.axpy(a[i * k + p], b + p * n, crow, n);
  }
}

}  // namespace dpl::simd
