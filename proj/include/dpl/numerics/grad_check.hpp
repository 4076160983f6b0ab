#pragma once

#include <cstddef>
#include <functional>

#include "dpl/numerics/autodiff.hpp"

namespace dpl {

// Scalar-valued function of one tensor, expressed on a tape so that both the
// reverse-mode gradient and plain evaluations come from the same code.
using ScalarFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Compares the reverse-mode gradient of f at x against central differences
// (f(x + eps e) - f(x - eps e)) / (2 eps), entry by entry. The relative error
// of an entry is |a - n| / max(|a|, |n|, 1e-8). eps must lie in [1e-7, 1e-3].
GradCheckResult grad_check(const ScalarFn& f, const Tensor2D& x, double eps);

// Evaluates f(x) without recording gradients.
double evaluate(const ScalarFn& f, const Tensor2D& x);

}  // namespace dpl
