#pragma once

#include <cstdint>

#include "dpl/numerics/tensor.hpp"

namespace dpl {

// SplitMix64 (Steele, Lea, Flood 2014). The state advances by the golden
// gamma 0x9E3779B97F4A7C15 per draw and each output is the state passed
// through the fixed mix13 finaliser, so a stream is a pure function of its
// seed on every platform. Real-valued draws are built from the 53 high bits.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) noexcept : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n) noexcept;
  // Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  // Independent child stream; derived from this stream's seed and a label,
  // not from its position, so forking order does not matter.
  RngStream fork(std::uint64_t label) const noexcept;

  Tensor2D normal_tensor(std::size_t rows, std::size_t cols, double stddev);
  Tensor2D uniform_tensor(std::size_t rows, std::size_t cols, double lo, double hi);

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

}  // namespace dpl
