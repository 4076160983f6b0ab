#pragma once

// Elementwise and row-update kernels behind a runtime-selected backend.
//
// Every backend evaluates each output element with the same sequence of
// IEEE-754 operations as the scalar reference (vectorisation runs across
// independent elements, never across a reduction), so results are
// bit-identical whichever backend is active.

#include <cstddef>
#include <string_view>

namespace dpl::simd {

enum class Backend { Scalar, Avx2, Neon };

struct KernelTable {
  Backend backend;
  // out[i] = a[i] + b[i]
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = a[i] - b[i]
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = a[i] * s
  void (*scale)(const double* a, double s, double* out, std::size_t n);
  // y[i] = y[i] + alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // max over a[0..n), n >= 1
  double (*max)(const double* a, std::size_t n);
};

std::string_view to_string(Backend backend) noexcept;

bool backend_available(Backend backend) noexcept;

// Best backend supported by both the build and the running CPU.
Backend best_backend() noexcept;

Backend active_backend() noexcept;

// Throws dpl::Error(Configuration) when the backend is unavailable.
void set_backend(Backend backend);

const KernelTable& kernels() noexcept;

// Throws dpl::Error(Configuration) when the backend is unavailable.
const KernelTable& kernels_for(Backend backend);

// c (m x n) = a (m x k) * b (k x n), row-major. Each c[i][j] accumulates
// a[i][p] * b[p][j] for p = 0..k-1 in order, starting from +0.0.
void gemm(const KernelTable& table, const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n);

namespace detail {
const KernelTable& scalar_table() noexcept;
#if defined(DPL_WITH_AVX2)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(DPL_WITH_NEON)
const KernelTable& neon_table() noexcept;
#endif
}  // namespace detail

}  // namespace dpl::simd
