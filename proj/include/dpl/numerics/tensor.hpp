#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace dpl {

// Dense row-major matrix of doubles. A tensor may have zero rows (an empty
// token set, e.g. no prompts) but a row always has a fixed column count.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2D identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Tensor2D& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  // Value equality (+0.0 == -0.0). Use bitwise_equal for bit identity.
  bool operator==(const Tensor2D& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool bitwise_equal(const Tensor2D& a, const Tensor2D& b) noexcept;
double max_abs_diff(const Tensor2D& a, const Tensor2D& b);

Tensor2D add(const Tensor2D& a, const Tensor2D& b);
Tensor2D sub(const Tensor2D& a, const Tensor2D& b);
Tensor2D hadamard(const Tensor2D& a, const Tensor2D& b);
Tensor2D scale(const Tensor2D& a, double s);
void axpy_inplace(double alpha, const Tensor2D& x, Tensor2D& y);

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
// a * b^T
Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b);
Tensor2D transpose(const Tensor2D& a);

Tensor2D concat_rows(std::span<const Tensor2D> parts);
Tensor2D concat_cols(std::span<const Tensor2D> parts);
Tensor2D slice_rows(const Tensor2D& a, std::size_t begin, std::size_t count);
Tensor2D slice_cols(const Tensor2D& a, std::size_t begin, std::size_t count);

// Row-wise softmax, stabilised by subtracting the row maximum.
Tensor2D softmax_rows(const Tensor2D& m);

double sum(const Tensor2D& a) noexcept;
double frobenius_norm(const Tensor2D& a) noexcept;

}  // namespace dpl
