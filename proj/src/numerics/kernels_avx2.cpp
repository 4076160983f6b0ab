#include <immintrin.h>

#include "dpl/numerics/kernels.hpp"

namespace dpl::simd::detail {
namespace {

constexpr std::size_t kLanes = 4;

void add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  }
  for (; i < n; ++i) out[i] = a[i] * s;
}

// Separate mul and add (no FMA) to match the scalar rounding exactly.
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

double max(const double* a, std::size_t n) {
  if (n < 2 * kLanes) {
    double m = a[0];
    for (std::size_t i = 1; i < n; ++i) {
      if (a[i] > m) m = a[i];
    }
    return m;
  }
  __m256d vm = _mm256_loadu_pd(a);
  std::size_t i = kLanes;
  for (; i + kLanes <= n; i += kLanes) vm = _mm256_max_pd(vm, _mm256_loadu_pd(a + i));
  alignas(32) double lanes[kLanes];
  _mm256_store_pd(lanes, vm);
  double m = lanes[0];
  for (std::size_t l = 1; l < kLanes; ++l) {
    if (lanes[l] > m) m = lanes[l];
  }
  for (; i < n; ++i) {
    if (a[i] > m) m = a[i];
  }
  return m;
}

constexpr KernelTable kTable{Backend::Avx2, add, sub, mul, scale, axpy, max};

}  // namespace

const KernelTable& avx2_table() noexcept { return kTable; }

}  // namespace dpl::simd::detail
