#include <doctest.h>

#include <algorithm>
#include <functional>
#include <cmath>
#include <string>
#include <vector>

#include "dpl/attention/attention.hpp"
#include "dpl/error.hpp"
#include "dpl/numerics/autodiff.hpp"
#include "dpl/numerics/grad_check.hpp"
#include "dpl/numerics/rng.hpp"

using namespace dpl;

TEST_CASE("grad_check of a plain sum is exact") {
  const Tensor2D x = Tensor2D::from_rows({{1.0, -2.0, 3.5}});
  const GradCheckResult r = grad_check([](ad::Tape&, ad::Var v) { return ad::sum(v); }, x, 1e-5);
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("grad_check of sum(softmax) sees a zero gradient") {
  RngStream rng(2);
  const Tensor2D x = rng.normal_tensor(3, 5, 1.0);
  const ScalarFn f = [](ad::Tape&, ad::Var v) { return ad::sum(ad::softmax_rows(v)); };
  // Both sides are roundoff around zero, so the relative error is meaningless
  // here; compare absolute values instead.
  ad::Tape tape;
  const ad::Var v = tape.variable(x);
  tape.backward(f(tape, v));
  const Tensor2D g = tape.grad(v);
  const double eps = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor2D hi = x;
    Tensor2D lo = x;
    hi.values()[i] += eps;
    lo.values()[i] -= eps;
    const double numeric = (evaluate(f, hi) - evaluate(f, lo)) / (2.0 * eps);
    CHECK(std::abs(g.values()[i]) < 1e-6);
    CHECK(std::abs(g.values()[i] - numeric) < 1e-6);
  }
}

TEST_CASE("grad_check through a prompt attention layer") {
  RngStream rng(4);
  const std::size_t d = 8;
  const AttentionWeights w = AttentionWeights::random(d, 2, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(6, d, 1.0);
  const Tensor2D p = rng.normal_tensor(2, d, 1.0);
  const Tensor2D readout = rng.normal_tensor(8, d, 1.0);
  for (AttentionMode mode : all_attention_modes()) {
    CAPTURE(to_string(mode));
    const ScalarFn f = [&](ad::Tape& tape, ad::Var pv) {
      ad::Binder binder(tape);
      const AttentionParams params = bind_attention(binder, w, false);
      const auto r = ad::prompt_attention(tape.constant(x), pv, params, mode);
      const ad::Var both[] = {r.x_out, r.p_out};
      return ad::weighted_sum(ad::concat_rows(both), readout);
    };
    CHECK(grad_check(f, p, 1e-5).max_rel_error < 1e-5);
  }
}

TEST_CASE("grad_check rejects eps outside its domain") {
  const Tensor2D x(1, 1, 1.0);
  const ScalarFn f = [](ad::Tape&, ad::Var v) { return ad::sum(v); };
  for (double eps : {0.0, 1e-8, 1e-2, -1e-5}) {
    try {
      grad_check(f, x, eps);
      FAIL("expected a domain error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Domain);
    }
  }
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(6);
  const Tensor2D x = rng.normal_tensor(4, 3, 1.0);
  const Tensor2D w1 = rng.normal_tensor(4, 3, 1.0);
  const Tensor2D w2 = rng.normal_tensor(4, 3, 1.0);
  auto grad_of = [&](double a, double b) {
    ad::Tape tape;
    const ad::Var v = tape.variable(x);
    const ad::Var h = ad::gelu(v);
    const ad::Var loss = ad::add(ad::scale(ad::weighted_sum(h, w1), a), ad::scale(ad::weighted_sum(h, w2), b));
    tape.backward(loss);
    return tape.grad(v);
  };
  const Tensor2D g1 = grad_of(1.0, 0.0);
  const Tensor2D g2 = grad_of(0.0, 1.0);
  const Tensor2D g = grad_of(2.0, -3.0);
  CHECK(max_abs_diff(g, add(scale(g1, 2.0), scale(g2, -3.0))) < 1e-12);
}

TEST_CASE("constants receive no gradient and the tape requires a scalar root") {
  ad::Tape tape;
  const ad::Var c = tape.constant(Tensor2D(2, 2, 1.0));
  const ad::Var v = tape.variable(Tensor2D(2, 2, 3.0));
  tape.backward(ad::sum(ad::hadamard(c, v)));
  CHECK(bitwise_equal(tape.grad(c), Tensor2D(2, 2)));
  CHECK(bitwise_equal(tape.grad(v), Tensor2D(2, 2, 1.0)));
  CHECK_THROWS_AS(tape.backward(v), Error);
}

TEST_CASE("binder binds each parameter once and honours overrides") {
  ad::Tape tape;
  ad::Binder binder(tape);
  const Tensor2D a(1, 2, 1.0);
  const Tensor2D b(1, 2, 2.0);
  const ad::Var a1 = binder.bind(a, true);
  CHECK(binder.bind(a, true).id() == a1.id());
  const ad::Var o = tape.variable(Tensor2D(1, 2, 5.0));
  binder.override_with(&b, o);
  CHECK(binder.bind(b, false).id() == o.id());
  CHECK(binder.trainable().size() == 1);
  CHECK(binder.trainable_in_order().front().first == &a);
}

// Every differentiable op against central differences on 20 random inputs.
TEST_CASE("per-op gradients match finite differences") {
  struct OpCase {
    std::string name;
    std::size_t rows, cols;
    std::function<ad::Var(ad::Tape&, ad::Var, RngStream&)> build;
  };
  // Fixed operands are drawn from a per-trial stream that is replayed for
  // every evaluation, so f is the same function on each call.
  const std::vector<OpCase> ops = {
      {"add", 3, 4, [](ad::Tape& t, ad::Var x, RngStream& r) { return ad::add(x, t.constant(r.normal_tensor(3, 4, 1.0))); }},
      {"sub", 3, 4, [](ad::Tape& t, ad::Var x, RngStream& r) { return ad::sub(t.constant(r.normal_tensor(3, 4, 1.0)), x); }},
      {"hadamard", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::hadamard(x, x); }},
      {"scale", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::scale(x, -1.7); }},
      {"matmul", 3, 4, [](ad::Tape& t, ad::Var x, RngStream& r) { return ad::matmul(x, t.constant(r.normal_tensor(4, 5, 1.0))); }},
      {"matmul_left", 4, 5, [](ad::Tape& t, ad::Var x, RngStream& r) { return ad::matmul(t.constant(r.normal_tensor(3, 4, 1.0)), x); }},
      {"matmul_nt", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::matmul_nt(x, x); }},
      {"transpose", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::transpose(x); }},
      {"add_row", 1, 4, [](ad::Tape& t, ad::Var x, RngStream& r) { return ad::add_row(t.constant(r.normal_tensor(3, 4, 1.0)), x); }},
      {"scale_rows", 3, 1, [](ad::Tape& t, ad::Var x, RngStream& r) { return ad::scale_rows(t.constant(r.normal_tensor(3, 4, 1.0)), x); }},
      {"concat_rows", 2, 3, [](ad::Tape& t, ad::Var x, RngStream& r) {
         const ad::Var parts[] = {x, t.constant(r.normal_tensor(1, 3, 1.0)), x};
         return ad::concat_rows(parts);
       }},
      {"concat_cols", 2, 3, [](ad::Tape& t, ad::Var x, RngStream& r) {
         const ad::Var parts[] = {t.constant(r.normal_tensor(2, 2, 1.0)), x};
         return ad::concat_cols(parts);
       }},
      {"slice_rows", 4, 3, [](ad::Tape&, ad::Var x, RngStream&) { return ad::slice_rows(x, 1, 2); }},
      {"slice_cols", 3, 5, [](ad::Tape&, ad::Var x, RngStream&) { return ad::slice_cols(x, 2, 3); }},
      {"gather_rows", 4, 3, [](ad::Tape&, ad::Var x, RngStream&) {
         const std::size_t idx[] = {2, 0, 2, 3};
         return ad::gather_rows(x, idx);
       }},
      {"softmax", 3, 5, [](ad::Tape&, ad::Var x, RngStream&) { return ad::softmax_rows(x); }},
      {"softmax_masked", 3, 3, [](ad::Tape&, ad::Var x, RngStream&) {
         static const KeyMask m = [] {
           KeyMask k(3, 3, true);
           k.set(0, 1, false);
           k.set(0, 2, false);
           k.set(1, 2, false);
           return k;
         }();
         return ad::softmax_rows(x, &m);
       }},
      {"logsumexp", 3, 5, [](ad::Tape&, ad::Var x, RngStream&) { return ad::row_logsumexp(x); }},
      {"exp", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::exp(x); }},
      {"layer_norm", 3, 6, [](ad::Tape& t, ad::Var x, RngStream& r) {
         return ad::layer_norm(x, t.constant(r.normal_tensor(1, 6, 1.0)), t.constant(r.normal_tensor(1, 6, 1.0)));
       }},
      {"layer_norm_gamma", 1, 6, [](ad::Tape& t, ad::Var x, RngStream& r) {
         return ad::layer_norm(t.constant(r.normal_tensor(3, 6, 1.0)), x, t.constant(Tensor2D(1, 6)));
       }},
      {"gelu", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::gelu(x); }},
      {"l2_normalize", 3, 4, [](ad::Tape&, ad::Var x, RngStream&) { return ad::row_l2_normalize(x); }},
      {"cross_entropy", 4, 5, [](ad::Tape&, ad::Var x, RngStream&) {
         const std::size_t labels[] = {0, 4, 2, 2};
         return ad::cross_entropy(x, labels);
       }},
  };
  for (const OpCase& op : ops) {
    CAPTURE(op.name);
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      RngStream rng(1000 + trial);
      const Tensor2D x = rng.normal_tensor(op.rows, op.cols, 1.0);
      const std::uint64_t operand_seed = rng.next_u64();
      const ScalarFn f = [&](ad::Tape& tape, ad::Var v) {
        RngStream operands(operand_seed);
        const ad::Var y = op.build(tape, v, operands);
        // Random readout keeps the loss from collapsing to a constant.
        RngStream readout(operand_seed ^ 0x5bd1e995u);
        return ad::weighted_sum(y, readout.normal_tensor(y.rows(), y.cols(), 1.0));
      };
      worst = std::max(worst, grad_check(f, x, 1e-5).max_rel_error);
    }
    CHECK(worst < 1e-5);
  }
}
