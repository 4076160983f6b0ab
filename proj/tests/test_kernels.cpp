#include <doctest.h>

#include <array>
#include <cstring>
#include <vector>

#include "dpl/error.hpp"
#include "dpl/numerics/kernels.hpp"
#include "dpl/numerics/rng.hpp"

using namespace dpl;
using dpl::simd::Backend;

namespace {

std::vector<double> draw(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 3.0);
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<Backend> available() {
  std::vector<Backend> out;
  for (Backend b : {Backend::Scalar, Backend::Avx2, Backend::Neon}) {
    if (simd::backend_available(b)) out.push_back(b);
  }
  return out;
}

}  // namespace

TEST_CASE("every available backend is bit-identical to the scalar reference") {
  const auto& ref = simd::kernels_for(Backend::Scalar);
  RngStream rng(7);
  for (Backend b : available()) {
    CAPTURE(simd::to_string(b));
    const auto& k = simd::kernels_for(b);
    // Lengths straddle every vector width and tail size.
    for (std::size_t n : std::array<std::size_t, 17>{0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 67, 129}) {
      CAPTURE(n);
      const auto a = draw(n, rng);
      const auto c = draw(n, rng);
      std::vector<double> r1(n), r2(n);
      ref.add(a.data(), c.data(), r1.data(), n);
      k.add(a.data(), c.data(), r2.data(), n);
      CHECK(same_bits(r1, r2));
      ref.sub(a.data(), c.data(), r1.data(), n);
      k.sub(a.data(), c.data(), r2.data(), n);
      CHECK(same_bits(r1, r2));
      ref.mul(a.data(), c.data(), r1.data(), n);
      k.mul(a.data(), c.data(), r2.data(), n);
      CHECK(same_bits(r1, r2));
      ref.scale(a.data(), -1.37, r1.data(), n);
      k.scale(a.data(), -1.37, r2.data(), n);
      CHECK(same_bits(r1, r2));
      r1 = c;
      r2 = c;
      ref.axpy(0.618, a.data(), r1.data(), n);
      k.axpy(0.618, a.data(), r2.data(), n);
      CHECK(same_bits(r1, r2));
      if (n > 0) CHECK(ref.max(a.data(), n) == k.max(a.data(), n));
    }
  }
}

TEST_CASE("gemm matches a triple-loop oracle bit for bit on every backend") {
  RngStream rng(11);
  for (Backend b : available()) {
    CAPTURE(simd::to_string(b));
    const std::array<std::array<std::size_t, 3>, 4> shapes{{{5, 4, 3}, {1, 1, 1}, {7, 13, 9}, {16, 8, 33}}};
    for (auto [m, k, n] : shapes) {
      const auto a = draw(m * k, rng);
      const auto bm = draw(k * n, rng);
      std::vector<double> c(m * n, 99.0);
      simd::gemm(simd::kernels_for(b), a.data(), bm.data(), c.data(), m, k, n);
      std::vector<double> oracle(m * n);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < k; ++p) s = s + a[i * k + p] * bm[p * n + j];
          oracle[i * n + j] = s;
        }
      }
      CHECK(same_bits(c, oracle));
    }
  }
}

TEST_CASE("backend selection") {
  CHECK(simd::backend_available(Backend::Scalar));
  CHECK(simd::backend_available(simd::best_backend()));
  const Backend before = simd::active_backend();
  simd::set_backend(Backend::Scalar);
  CHECK(simd::active_backend() == Backend::Scalar);
  CHECK(simd::kernels().backend == Backend::Scalar);
  simd::set_backend(before);
  for (Backend b : {Backend::Avx2, Backend::Neon}) {
    if (!simd::backend_available(b)) CHECK_THROWS_AS(simd::set_backend(b), Error);
  }
}
