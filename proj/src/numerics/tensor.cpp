#include "dpl/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dpl/error.hpp"
#include "dpl/numerics/kernels.hpp"

namespace dpl {
namespace {

std::string shape_str(const Tensor2D& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor2D& a, const Tensor2D& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::InvalidShape,
         std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::DegenerateDecomposition: return "degenerate-decomposition";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::State: return "state";
    case ErrorKind::Template: return "template";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorKind::InvalidShape, "data length " + std::to_string(data_.size()) +
                                      " does not match " + std::to_string(rows_) + "x" +
                                      std::to_string(cols_));
  }
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::InvalidShape, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2D(r, c, std::move(data));
}

Tensor2D Tensor2D::identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor2D::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bitwise_equal(const Tensor2D& a, const Tensor2D& b) noexcept {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "add");
  Tensor2D out(a.rows(), a.cols());
  simd::kernels().add(a.data(), b.data(), out.data(), a.size());
  return out;
}

Tensor2D sub(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "sub");
  Tensor2D out(a.rows(), a.cols());
  simd::kernels().sub(a.data(), b.data(), out.data(), a.size());
  return out;
}

Tensor2D hadamard(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "hadamard");
  Tensor2D out(a.rows(), a.cols());
  simd::kernels().mul(a.data(), b.data(), out.data(), a.size());
  return out;
}

Tensor2D scale(const Tensor2D& a, double s) {
  Tensor2D out(a.rows(), a.cols());
  simd::kernels().scale(a.data(), s, out.data(), a.size());
  return out;
}

void axpy_inplace(double alpha, const Tensor2D& x, Tensor2D& y) {
  require_same_shape(x, y, "axpy");
  simd::kernels().axpy(alpha, x.data(), y.data(), x.size());
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::InvalidShape, "matmul: " + shape_str(a) + " x " + shape_str(b));
  }
  Tensor2D out(a.rows(), b.cols());
  simd::gemm(simd::kernels(), a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorKind::InvalidShape, "matmul_nt: " + shape_str(a) + " x " + shape_str(b) + "^T");
  }
  return matmul(a, transpose(b));
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

Tensor2D concat_rows(std::span<const Tensor2D> parts) {
  if (parts.empty()) fail(ErrorKind::InvalidShape, "concat_rows: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) fail(ErrorKind::InvalidShape, "concat_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor2D(rows, cols, std::move(data));
}

Tensor2D concat_cols(std::span<const Tensor2D> parts) {
  if (parts.empty()) fail(ErrorKind::InvalidShape, "concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) fail(ErrorKind::InvalidShape, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor2D out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = out.row(r).data();
    for (const auto& p : parts) {
      std::copy(p.row(r).begin(), p.row(r).end(), dst);
      dst += p.cols();
    }
  }
  return out;
}

Tensor2D slice_rows(const Tensor2D& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) fail(ErrorKind::InvalidShape, "slice_rows out of range");
  std::vector<double> data(a.data() + begin * a.cols(), a.data() + (begin + count) * a.cols());
  return Tensor2D(count, a.cols(), std::move(data));
}

Tensor2D slice_cols(const Tensor2D& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) fail(ErrorKind::InvalidShape, "slice_cols out of range");
  Tensor2D out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.row(r).data() + begin, count, out.row(r).data());
  }
  return out;
}

Tensor2D softmax_rows(const Tensor2D& m) {
  if (m.rows() == 0 || m.cols() == 0) {
    fail(ErrorKind::InvalidShape, "softmax_rows: empty shape " + shape_str(m));
  }
  if (!m.all_finite()) fail(ErrorKind::Evaluation, "softmax_rows: non-finite input");
  const auto& k = simd::kernels();
  Tensor2D out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto dst = out.row(r);
    const double mx = k.max(in.data(), in.size());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - mx);
      total += dst[c];
    }
    k.scale(dst.data(), 1.0 / total, dst.data(), dst.size());
  }
  return out;
}

double sum(const Tensor2D& a) noexcept {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double frobenius_norm(const Tensor2D& a) noexcept {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace dpl
