#include <doctest.h>

#include <cmath>
#include <limits>

#include "dpl/error.hpp"
#include "dpl/numerics/kernels.hpp"
#include "dpl/numerics/rng.hpp"
#include "dpl/numerics/tensor.hpp"

using namespace dpl;

namespace {

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::State;
}

}  // namespace

TEST_CASE("softmax examples") {
  const Tensor2D half = softmax_rows(Tensor2D::from_rows({{0.0, 0.0}}));
  CHECK(half(0, 0) == 0.5);
  CHECK(half(0, 1) == 0.5);

  const Tensor2D big = softmax_rows(Tensor2D::from_rows({{1000.0, 1000.0, 1000.0}}));
  for (double v : big.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor2D q = softmax_rows(Tensor2D::from_rows({{0.0, std::log(3.0)}}));
  CHECK(std::abs(q(0, 0) - 0.25) < 1e-15);
  CHECK(std::abs(q(0, 1) - 0.75) < 1e-15);
}

TEST_CASE("softmax rows sum to one over a wide input range") {
  RngStream rng(3);
  const Tensor2D m = rng.uniform_tensor(50, 17, -1e4, 1e4);
  const Tensor2D s = softmax_rows(m);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double total = 0.0;
    for (double v : s.row(r)) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax errors") {
  CHECK(kind_of([] { softmax_rows(Tensor2D(0, 3)); }) == ErrorKind::InvalidShape);
  CHECK(kind_of([] { softmax_rows(Tensor2D(2, 0)); }) == ErrorKind::InvalidShape);
  Tensor2D bad(1, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK(kind_of([&] { softmax_rows(bad); }) == ErrorKind::Evaluation);
}

TEST_CASE("matmul examples") {
  RngStream rng(5);
  const Tensor2D m = rng.normal_tensor(2, 3, 1.0);
  CHECK(bitwise_equal(matmul(Tensor2D::identity(2), m), m));

  const Tensor2D r = matmul(Tensor2D::from_rows({{1, 2}}), Tensor2D::from_rows({{3}, {4}}));
  CHECK(r.rows() == 1);
  CHECK(r.cols() == 1);
  CHECK(r(0, 0) == 11.0);

  const Tensor2D a = rng.normal_tensor(5, 4, 1.0);
  const Tensor2D b = rng.normal_tensor(4, 3, 1.0);
  Tensor2D oracle(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s = s + a(i, k) * b(k, j);
      oracle(i, j) = s;
    }
  }
  CHECK(bitwise_equal(matmul(a, b), oracle));
  CHECK(bitwise_equal(matmul_nt(a, transpose(b)), oracle));

  CHECK(kind_of([&] { matmul(a, a); }) == ErrorKind::InvalidShape);
}

TEST_CASE("tensor results do not depend on the kernel backend") {
  RngStream rng(9);
  const Tensor2D a = rng.normal_tensor(9, 13, 1.0);
  const Tensor2D b = rng.normal_tensor(13, 6, 1.0);
  const auto before = simd::active_backend();
  simd::set_backend(simd::Backend::Scalar);
  const Tensor2D ref_mm = matmul(a, b);
  const Tensor2D ref_sm = softmax_rows(a);
  const Tensor2D ref_add = add(a, scale(a, 0.3));
  simd::set_backend(simd::best_backend());
  CHECK(bitwise_equal(matmul(a, b), ref_mm));
  CHECK(bitwise_equal(softmax_rows(a), ref_sm));
  CHECK(bitwise_equal(add(a, scale(a, 0.3)), ref_add));
  simd::set_backend(before);
}

TEST_CASE("shape handling") {
  CHECK(kind_of([] { Tensor2D(2, 2, std::vector<double>{1, 2, 3}); }) == ErrorKind::InvalidShape);
  const Tensor2D a = Tensor2D::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Tensor2D parts[] = {a, Tensor2D(0, 3), a};
  const Tensor2D stacked = concat_rows(parts);
  CHECK(stacked.rows() == 4);
  CHECK(bitwise_equal(slice_rows(stacked, 2, 2), a));
  CHECK(bitwise_equal(slice_cols(a, 1, 2), Tensor2D::from_rows({{2, 3}, {5, 6}})));
  const Tensor2D cols[] = {slice_cols(a, 0, 1), slice_cols(a, 1, 2)};
  CHECK(bitwise_equal(concat_cols(cols), a));
  CHECK(bitwise_equal(transpose(transpose(a)), a));
  CHECK(kind_of([&] { slice_rows(a, 1, 2); }) == ErrorKind::InvalidShape);
  CHECK(kind_of([&] { add(a, transpose(a)); }) == ErrorKind::InvalidShape);
  CHECK(sum(a) == 21.0);
  CHECK(frobenius_norm(Tensor2D::from_rows({{3, 4}})) == 5.0);
}
