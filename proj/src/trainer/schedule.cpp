#include "dpl/trainer/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dpl/error.hpp"

namespace dpl {

void TrainConfig::validate() const {
  if (batch_size == 0) fail(ErrorKind::Configuration, "train.batch_size must be positive");
  if (!(lr_visual > 0.0) || !(lr_textual > 0.0) || !std::isfinite(lr_visual) || !std::isfinite(lr_textual)) {
    fail(ErrorKind::Configuration, "train learning rates must be positive and finite");
  }
  if (!(warmup_lr > 0.0) || !std::isfinite(warmup_lr)) {
    fail(ErrorKind::Configuration, "train.warmup_lr must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::Configuration, "train.momentum must lie in [0, 1)");
}

std::size_t steps_per_epoch(std::size_t num_samples, std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorKind::Configuration, "batch size must be positive");
  return (num_samples + batch_size - 1) / batch_size;
}

LrSchedule make_schedule(const TrainConfig& config, double base_lr, std::size_t num_samples) {
  const std::size_t per_epoch = steps_per_epoch(num_samples, config.batch_size);
  LrSchedule s;
  s.base_lr = base_lr;
  s.warmup_lr = config.warmup_lr;
  s.total_steps = per_epoch * config.epochs;
  s.warmup_steps = std::min(per_epoch * config.warmup_epochs, s.total_steps);
  return s;
}

double lr_at(std::size_t step, const LrSchedule& s) {
  if (step < s.warmup_steps) return s.warmup_lr;
  const std::size_t span = s.total_steps - s.warmup_steps;
  if (span == 0) return s.base_lr;
  const std::size_t t = std::min(step - s.warmup_steps, span);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(span)));
}

void sgd_step(std::span<Tensor2D* const> params, std::span<const Tensor2D> grads, double lr, SgdState* state) {
  if (params.size() != grads.size()) fail(ErrorKind::InvalidShape, "sgd_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) fail(ErrorKind::InvalidShape, "sgd_step: gradient shape mismatch");
    if (!grads[i].all_finite()) {
      fail(ErrorKind::Divergence, "non-finite gradient for parameter " + std::to_string(i));
    }
  }
  const bool use_momentum = state != nullptr && state->momentum != 0.0;
  if (use_momentum && state->velocity.size() < params.size()) state->velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!use_momentum) {
      axpy_inplace(-lr, grads[i], *params[i]);
      continue;
    }
    auto& v = state->velocity[i];
    if (!v) {
      v = grads[i];
    } else {
      *v = add(scale(*v, state->momentum), grads[i]);
    }
    axpy_inplace(-lr, *v, *params[i]);
  }
}

void sgd_step(Tensor2D& param, const Tensor2D& grad, double lr) {
  Tensor2D* p = &param;
  sgd_step(std::span<Tensor2D* const>(&p, 1), std::span<const Tensor2D>(&grad, 1), lr);
}

double harmonic_mean(double base, double novel) {
  if (base < 0.0 || novel < 0.0 || std::isnan(base) || std::isnan(novel)) {
    fail(ErrorKind::Domain, "harmonic_mean needs non-negative inputs");
  }
  if (base + novel == 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

}  // namespace dpl
