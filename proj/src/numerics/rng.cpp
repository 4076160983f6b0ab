#include "dpl/numerics/rng.hpp"

#include <cmath>
#include <numbers>

namespace dpl {

std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t RngStream::next_u64() noexcept {
  state_ += 0x9E3779B97F4A7C15ULL;
  return mix64(state_);
}

double RngStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double RngStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

RngStream RngStream::fork(std::uint64_t label) const noexcept {
  return RngStream(mix64(seed_ ^ mix64(label + 0x632BE59BD9B4E019ULL)));
}

Tensor2D RngStream::normal_tensor(std::size_t rows, std::size_t cols, double stddev) {
  Tensor2D t(rows, cols);
  for (double& v : t.values()) v = normal(0.0, stddev);
  return t;
}

Tensor2D RngStream::uniform_tensor(std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor2D t(rows, cols);
  for (double& v : t.values()) v = uniform(lo, hi);
  return t;
}

}  // namespace dpl
