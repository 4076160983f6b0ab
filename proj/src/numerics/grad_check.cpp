#include "dpl/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dpl/error.hpp"

namespace dpl {
namespace {

double run(const ScalarFn& f, const Tensor2D& x) {
  ad::Tape tape;
  const ad::Var out = f(tape, tape.constant(x));
  const Tensor2D& v = out.value();
  if (v.rows() != 1 || v.cols() != 1) fail(ErrorKind::InvalidShape, "grad_check: f must return 1x1");
  if (!std::isfinite(v(0, 0))) fail(ErrorKind::Evaluation, "grad_check: f(x) is not finite");
  return v(0, 0);
}

}  // namespace

double evaluate(const ScalarFn& f, const Tensor2D& x) { return run(f, x); }

GradCheckResult grad_check(const ScalarFn& f, const Tensor2D& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    fail(ErrorKind::Domain, "grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
  ad::Tape tape;
  const ad::Var input = tape.variable(x);
  const ad::Var out = f(tape, input);
  if (out.rows() != 1 || out.cols() != 1) fail(ErrorKind::InvalidShape, "grad_check: f must return 1x1");
  if (!std::isfinite(out.value()(0, 0))) fail(ErrorKind::Evaluation, "grad_check: f(x) is not finite");
  tape.backward(out);
  const Tensor2D analytic = tape.grad(input);

  GradCheckResult result;
  Tensor2D probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + eps;
    const double plus = run(f, probe);
    probe.data()[i] = saved - eps;
    const double minus = run(f, probe);
    probe.data()[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
      result.analytic_at_worst = a;
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

}  // namespace dpl
