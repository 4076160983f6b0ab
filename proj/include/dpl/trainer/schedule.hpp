#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dpl/numerics/tensor.hpp"

namespace dpl {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  double lr_visual = 0.01;
  double lr_textual = 0.01;
  double warmup_lr = 1e-5;
  std::size_t warmup_epochs = 1;
  double momentum = 0.9;

  // Throws Error(Configuration).
  void validate() const;
};

// Constant warmup_lr for the first warmup_steps, then cosine annealing from
// base_lr to 0 over the remaining total_steps - warmup_steps.
struct LrSchedule {
  double base_lr = 0.1;
  double warmup_lr = 1e-5;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
};

std::size_t steps_per_epoch(std::size_t num_samples, std::size_t batch_size);
LrSchedule make_schedule(const TrainConfig& config, double base_lr, std::size_t num_samples);
// Steps past the end stay at the final value.
double lr_at(std::size_t step, const LrSchedule& schedule);

// Momentum buffers, one per parameter, created lazily. PyTorch convention:
// v <- momentum * v + g, p <- p - lr * v.
struct SgdState {
  double momentum = 0.0;
  std::vector<std::optional<Tensor2D>> velocity;
};

// Plain SGD when state is null or momentum is 0. Throws
// Error(InvalidShape) on mismatched shapes and Error(Divergence) on a
// non-finite gradient, leaving params untouched in both cases.
void sgd_step(std::span<Tensor2D* const> params, std::span<const Tensor2D> grads, double lr,
              SgdState* state = nullptr);
void sgd_step(Tensor2D& param, const Tensor2D& grad, double lr);

// 2bn/(b+n), 0 when both are 0. Throws Error(Domain) on negative input.
double harmonic_mean(double base, double novel);

}  // namespace dpl
