#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpl/attention/attention.hpp"
#include "dpl/error.hpp"
#include "dpl/numerics/grad_check.hpp"

using namespace dpl;

namespace {

// Independent per-query loop: softmax(q k^T / sqrt(dh)) v per head, heads
// concatenated. No Wo.
Tensor2D naive_attend(const Tensor2D& y, const Tensor2D& z, const AttentionWeights& w,
                      const KeyMask* mask = nullptr) {
  const std::size_t d = w.model_dim();
  const std::size_t dh = d / w.num_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto project = [&](const Tensor2D& t, const Tensor2D& m, std::size_t row, std::size_t col) {
    long double s = 0.0L;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<long double>(t(row, k)) * m(k, col);
    return static_cast<double>(s);
  };
  Tensor2D out(y.rows(), d);
  for (std::size_t h = 0; h < w.num_heads; ++h) {
    for (std::size_t i = 0; i < y.rows(); ++i) {
      std::vector<double> logits(z.rows());
      double mx = -INFINITY;
      for (std::size_t j = 0; j < z.rows(); ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += project(y, w.wq, i, c) * project(z, w.wk, j, c);
        logits[j] = dot * sc;
        if (mask == nullptr || mask->visible(i, j)) mx = std::max(mx, logits[j]);
      }
      double denom = 0.0;
      std::vector<double> e(z.rows(), 0.0);
      for (std::size_t j = 0; j < z.rows(); ++j) {
        if (mask != nullptr && !mask->visible(i, j)) continue;
        e[j] = std::exp(logits[j] - mx);
        denom += e[j];
      }
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < z.rows(); ++j) acc += e[j] / denom * project(z, w.wv, j, c);
        out(i, c) = acc;
      }
    }
  }
  return out;
}

Tensor2D stack(const Tensor2D& a, const Tensor2D& b) {
  const Tensor2D parts[] = {a, b};
  return concat_rows(parts);
}

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

TEST_CASE("scale is exactly 1/sqrt(head_dim)") {
  RngStream rng(1);
  for (std::size_t heads : {1u, 2u, 4u}) {
    const AttentionWeights w = AttentionWeights::random(16, heads, rng, 0.3);
    CHECK(w.scale() == 1.0 / std::sqrt(static_cast<double>(16 / heads)));
  }
  AttentionWeights bad = AttentionWeights::random(6, 1, rng, 0.3);
  bad.num_heads = 4;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidShape);
}

TEST_CASE("attend examples") {
  RngStream rng(2);
  const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.5);
  const Tensor2D y = rng.normal_tensor(4, 8, 1.0);

  SUBCASE("a single key returns its value everywhere") {
    const Tensor2D z = rng.normal_tensor(1, 8, 1.0);
    const Tensor2D vz = matmul(z, w.wv);
    const Tensor2D out = attend(y, z, w);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(out(i, c) == vz(0, c));
    }
  }
  SUBCASE("zero query and key weights give uniform attention") {
    AttentionWeights u = w;
    u.wq = Tensor2D(8, 8);
    u.wk = Tensor2D(8, 8);
    const Tensor2D v = matmul(y, u.wv);
    const Tensor2D out = attend(y, y, u);
    for (std::size_t c = 0; c < 8; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 4; ++j) mean += v(j, c);
      mean /= 4.0;
      for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out(i, c) - mean) < 1e-14);
    }
  }
  SUBCASE("matches the naive loop") {
    const Tensor2D z = rng.normal_tensor(5, 8, 1.0);
    CHECK(max_abs_diff(attend(z, z, w), naive_attend(z, z, w)) < 1e-12);
  }
  SUBCASE("empty keys and width mismatch are rejected") {
    CHECK(kind_of([&] { attend(y, Tensor2D(0, 8), w); }) == ErrorKind::InvalidShape);
    CHECK(kind_of([&] { attend(y, Tensor2D(2, 4), w); }) == ErrorKind::InvalidShape);
  }
}

TEST_CASE("a single head equals the naive single-head computation") {
  RngStream rng(3);
  const AttentionWeights w = AttentionWeights::random(6, 1, rng, 0.4);
  const Tensor2D x = rng.normal_tensor(7, 6, 1.0);
  CHECK(max_abs_diff(attend(x, x, w), naive_attend(x, x, w)) < 1e-12);
}

TEST_CASE("exact decomposition equals vanilla concatenation") {
  RngStream rng(4);
  const AttentionWeights w = AttentionWeights::random(4, 1, rng, 0.7);
  const Tensor2D x = rng.normal_tensor(5, 4, 1.0);
  const Tensor2D p = rng.normal_tensor(2, 4, 1.0);
  const auto exact = prompt_attention_forward(x, p, w, AttentionMode::ExactDecomposed);
  const Tensor2D oracle = naive_attend(stack(x, p), stack(x, p), w);
  CHECK(max_abs_diff(stack(exact.x_out, exact.p_out), oracle) < 1e-12);
  const auto vanilla = prompt_attention_forward(x, p, w, AttentionMode::VanillaConcat);
  CHECK(max_abs_diff(stack(vanilla.x_out, vanilla.p_out), oracle) < 1e-12);
}

TEST_CASE("random configurations keep the decomposition exact") {
  RngStream rng(5);
  const std::size_t dims[] = {4, 8, 16};
  const std::size_t head_counts[] = {1, 2, 4};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(31);
    const std::size_t m = 1 + rng.below(8);
    const std::size_t d = dims[rng.below(3)];
    const std::size_t heads = head_counts[rng.below(3)];
    CAPTURE(n);
    CAPTURE(m);
    CAPTURE(d);
    CAPTURE(heads);
    const AttentionWeights w = AttentionWeights::random(d, heads, rng, rng.uniform(0.1, 1.0));
    const Tensor2D x = rng.normal_tensor(n, d, 1.0);
    const Tensor2D p = rng.normal_tensor(m, d, 1.0);
    const auto vanilla = prompt_attention_forward(x, p, w, AttentionMode::VanillaConcat);
    const auto exact = prompt_attention_forward(x, p, w, AttentionMode::ExactDecomposed);
    CHECK(max_abs_diff(vanilla.x_out, exact.x_out) < 1e-10);
    CHECK(max_abs_diff(vanilla.p_out, exact.p_out) < 1e-10);

    const DecompositionReport r = decompose(x, p, w);
    CHECK(r.sigma == static_cast<double>(m) / static_cast<double>(n));
    CHECK(r.beta == static_cast<double>(m) / static_cast<double>(m + n));
    for (const HeadDecomposition& hd : r.heads) {
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(hd.f[i] + hd.h[i] - 1.0) <= 1e-12);
        // h can fall below half an ulp of 1, so f may round to exactly 1.
        CHECK(hd.f[i] > 0.0);
        CHECK(hd.f[i] <= 1.0);
        CHECK(hd.h[i] > 0.0);
        CHECK(hd.lambda_xx[i] > 0.0);
        CHECK(hd.lambda_xp[i] > 0.0);
        CHECK(std::abs(hd.hf_ratio[i] - hd.lambda_xp[i] / hd.lambda_xx[i]) <= 1e-12 * hd.hf_ratio[i]);
      }
      for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(hd.f_prompt[i] + hd.h_prompt[i] - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("sigma and beta for a ViT-B/16 sized sequence") {
  RngStream rng(6);
  const AttentionWeights w = AttentionWeights::random(4, 1, rng, 0.3);
  const DecompositionReport r = decompose(rng.normal_tensor(197, 4, 1.0), rng.normal_tensor(8, 4, 1.0), w);
  CHECK(r.sigma == 8.0 / 197.0);
  CHECK(r.beta == 8.0 / 205.0);
  CHECK(std::abs(r.sigma - 0.040609) < 5e-7);
  CHECK(std::abs(r.beta - 0.039024) < 5e-7);
  CHECK(default_sigma(197, 8) == 8.0 / 197.0);
  CHECK(default_beta(197, 8) == 8.0 / 205.0);
}

TEST_CASE("decompose needs prompts") {
  RngStream rng(7);
  const AttentionWeights w = AttentionWeights::random(4, 1, rng, 0.3);
  CHECK(kind_of([&] { decompose(rng.normal_tensor(3, 4, 1.0), Tensor2D(0, 4), w); }) ==
        ErrorKind::DegenerateDecomposition);
}

TEST_CASE("hf ratio profile") {
  RngStream rng(8);
  SUBCASE("zero keys give M/N") {
    AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.3);
    w.wk = Tensor2D(8, 8);
    for (double r : hf_ratio_profile(rng.normal_tensor(197, 8, 1.0), rng.normal_tensor(8, 8, 1.0), w)) {
      CHECK(r == 8.0 / 197.0);
    }
  }
  SUBCASE("equals h/f") {
    const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.6);
    const Tensor2D x = rng.normal_tensor(9, 8, 1.0);
    const Tensor2D p = rng.normal_tensor(3, 8, 1.0);
    const auto profile = hf_ratio_profile(x, p, w);
    const DecompositionReport r = decompose(x, p, w);
    REQUIRE(profile.size() == 2 * 9);
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < 9; ++i) {
        const double hf = r.heads[h].h[i] / r.heads[h].f[i];
        CHECK(std::abs(profile[h * 9 + i] - hf) <= 1e-12 * hf);
      }
    }
  }
}

TEST_CASE("mode definitions") {
  RngStream rng(9);
  const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(6, 8, 1.0);
  const Tensor2D p = rng.normal_tensor(3, 8, 1.0);
  const double sigma = 3.0 / 6.0;
  const double beta = 3.0 / 9.0;
  const Tensor2D axx = naive_attend(x, x, w);
  const Tensor2D axp = naive_attend(x, p, w);
  const Tensor2D app = naive_attend(p, p, w);
  const Tensor2D apx = naive_attend(p, x, w);

  const auto da = prompt_attention_forward(x, p, w, AttentionMode::DA);
  CHECK(max_abs_diff(da.x_out, add(axx, scale(axp, sigma))) < 1e-12);
  CHECK(max_abs_diff(da.p_out, add(scale(app, beta), scale(apx, 1.0 - beta))) < 1e-12);

  const auto dasr = prompt_attention_forward(x, p, w, AttentionMode::DASR);
  CHECK(bitwise_equal(dasr.x_out, da.x_out));
  CHECK(max_abs_diff(dasr.p_out, apx) < 1e-12);

  const auto dare = prompt_attention_forward(x, p, w, AttentionMode::DARe);
  const auto exact = prompt_attention_forward(x, p, w, AttentionMode::ExactDecomposed);
  CHECK(bitwise_equal(dare.x_out, exact.x_out));
  CHECK(bitwise_equal(dare.p_out, da.p_out));
}

TEST_CASE("forcing sigma to zero leaves plain self-attention") {
  RngStream rng(10);
  const AttentionWeights w = AttentionWeights::random(8, 4, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(7, 8, 1.0);
  const Tensor2D p = rng.normal_tensor(4, 8, 1.0);
  MixingOverride mix;
  mix.sigma = 0.0;
  for (AttentionMode mode : {AttentionMode::DA, AttentionMode::DASR}) {
    const auto out = prompt_attention_forward(x, p, w, mode, {}, mix);
    CHECK(max_abs_diff(out.x_out, attend(x, x, w)) <= 1e-12);
  }
}

TEST_CASE("DA deviates from self-attention by at most sigma times the largest prompt value") {
  RngStream rng(11);
  const AttentionWeights w = AttentionWeights::random(8, 1, rng, 0.5);
  for (std::size_t n : {4u, 16u, 64u, 256u}) {
    const Tensor2D x = rng.normal_tensor(n, 8, 1.0);
    const Tensor2D p = rng.normal_tensor(2, 8, 1.0);
    const Tensor2D diff = sub(prompt_attention_forward(x, p, w, AttentionMode::DA).x_out, attend(x, x, w));
    const Tensor2D vp = matmul(p, w.wv);
    double max_v = 0.0;
    for (std::size_t j = 0; j < vp.rows(); ++j) max_v = std::max(max_v, frobenius_norm(slice_rows(vp, j, 1)));
    const double bound = default_sigma(n, 2) * max_v;
    for (std::size_t i = 0; i < n; ++i) CHECK(frobenius_norm(slice_rows(diff, i, 1)) <= bound * (1 + 1e-12));
  }
}

TEST_CASE("DASR prompt rows see only their own query") {
  RngStream rng(12);
  const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(6, 8, 1.0);
  const Tensor2D p = rng.normal_tensor(3, 8, 1.0);
  const Tensor2D base = prompt_attention_forward(x, p, w, AttentionMode::DASR).p_out;
  Tensor2D p2 = p;
  for (std::size_t c = 0; c < 8; ++c) p2(1, c) += 0.5;
  const Tensor2D moved = prompt_attention_forward(x, p2, w, AttentionMode::DASR).p_out;
  CHECK(bitwise_equal(slice_rows(moved, 0, 1), slice_rows(base, 0, 1)));
  CHECK(bitwise_equal(slice_rows(moved, 2, 1), slice_rows(base, 2, 1)));
  CHECK(max_abs_diff(slice_rows(moved, 1, 1), slice_rows(base, 1, 1)) > 0.0);
  Tensor2D x2 = x;
  x2(3, 3) += 0.5;
  CHECK(max_abs_diff(prompt_attention_forward(x2, p, w, AttentionMode::DASR).p_out, base) > 0.0);
}

TEST_CASE("instance-instance attention never sees the prompts in DA and DASR") {
  RngStream rng(13);
  const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.6);
  const Tensor2D x = rng.normal_tensor(10, 8, 1.0);
  const Tensor2D p1 = rng.normal_tensor(4, 8, 1.0);
  const Tensor2D p2 = rng.normal_tensor(4, 8, 3.0);
  for (AttentionMode mode : {AttentionMode::DA, AttentionMode::DASR}) {
    CAPTURE(to_string(mode));
    auto weights = [&](const Tensor2D& p) {
      ad::Tape tape;
      ad::Binder binder(tape);
      const auto r = ad::prompt_attention(tape.constant(x), tape.constant(p), bind_attention(binder, w, false), mode);
      std::vector<Tensor2D> out;
      for (const ad::Var& v : r.instance_weights) out.push_back(v.value());
      return out;
    };
    const auto a = weights(p1);
    const auto b = weights(p2);
    REQUIRE(a.size() == 2);
    for (std::size_t h = 0; h < a.size(); ++h) CHECK(bitwise_equal(a[h], b[h]));
    CHECK(bitwise_equal(decompose(x, p1, w).a_xx, decompose(x, p2, w).a_xx));
    CHECK(max_abs_diff(prompt_attention_forward(x, p1, w, mode).x_out,
                       prompt_attention_forward(x, p2, w, mode).x_out) > 0.0);
  }
  // Vanilla instance weights do depend on the prompts.
  ad::Tape t1;
  ad::Tape t2;
  ad::Binder b1(t1);
  ad::Binder b2(t2);
  const auto v1 = ad::prompt_attention(t1.constant(x), t1.constant(p1), bind_attention(b1, w, false),
                                       AttentionMode::VanillaConcat);
  const auto v2 = ad::prompt_attention(t2.constant(x), t2.constant(p2), bind_attention(b2, w, false),
                                       AttentionMode::VanillaConcat);
  CHECK_FALSE(bitwise_equal(v1.instance_weights[0].value(), v2.instance_weights[0].value()));
}

TEST_CASE("no prompts means plain self-attention in every mode") {
  RngStream rng(14);
  const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(5, 8, 1.0);
  const Tensor2D ref = attend(x, x, w);
  for (AttentionMode mode : all_attention_modes()) {
    const auto out = prompt_attention_forward(x, Tensor2D(0, 8), w, mode);
    CHECK(bitwise_equal(out.x_out, ref));
    CHECK_FALSE(out.report.has_value());
  }
}

TEST_CASE("masks") {
  RngStream rng(15);
  const AttentionWeights w = AttentionWeights::random(8, 2, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(5, 8, 1.0);
  const Tensor2D p = rng.normal_tensor(2, 8, 1.0);
  MaskSpec full;
  full.keys = KeyMask::all_visible(7, 7);
  for (AttentionMode mode : all_attention_modes()) {
    const auto a = prompt_attention_forward(x, p, w, mode);
    const auto b = prompt_attention_forward(x, p, w, mode, full);
    CHECK(bitwise_equal(a.x_out, b.x_out));
    CHECK(bitwise_equal(a.p_out, b.p_out));
  }
  // Hidden instance keys get no weight, prompts visible to everyone: the
  // decomposition stays exact.
  MaskSpec causal;
  causal.keys = KeyMask::all_visible(7, 7);
  for (std::size_t q = 0; q < 7; ++q) {
    for (std::size_t k = 0; k < 5; ++k) causal.keys->set(q, k, q >= 5 || k <= q);
  }
  const Tensor2D seq = stack(x, p);
  const Tensor2D oracle = naive_attend(seq, seq, w, &*causal.keys);
  const auto vanilla = prompt_attention_forward(x, p, w, AttentionMode::VanillaConcat, causal);
  const auto exact = prompt_attention_forward(x, p, w, AttentionMode::ExactDecomposed, causal);
  CHECK(max_abs_diff(stack(vanilla.x_out, vanilla.p_out), oracle) < 1e-12);
  CHECK(max_abs_diff(stack(exact.x_out, exact.p_out), oracle) < 1e-10);
  Tensor2D moved = x;
  for (std::size_t c = 0; c < 8; ++c) moved(4, c) += 1.0;
  const auto shifted = prompt_attention_forward(moved, p, w, AttentionMode::VanillaConcat, causal);
  CHECK(bitwise_equal(slice_rows(shifted.x_out, 0, 4), slice_rows(vanilla.x_out, 0, 4)));
}

TEST_CASE("mode names round trip") {
  for (AttentionMode mode : all_attention_modes()) CHECK(parse_attention_mode(to_string(mode)) == mode);
  CHECK(all_attention_modes().size() == 5);
  CHECK(kind_of([] { parse_attention_mode("Sparse"); }) == ErrorKind::Configuration);
}

TEST_CASE("gradients through every mode match finite differences") {
  RngStream rng(16);
  const std::size_t d = 8;
  const AttentionWeights w = AttentionWeights::random(d, 2, rng, 0.5);
  const Tensor2D x = rng.normal_tensor(5, d, 1.0);
  const Tensor2D p = rng.normal_tensor(3, d, 1.0);
  const Tensor2D readout = rng.normal_tensor(8, d, 1.0);
  enum class Target { X, P, Wq, Wk, Wv, Wo };
  for (AttentionMode mode : all_attention_modes()) {
    for (Target target : {Target::X, Target::P, Target::Wq, Target::Wk, Target::Wv, Target::Wo}) {
      CAPTURE(to_string(mode));
      CAPTURE(static_cast<int>(target));
      const Tensor2D* weight = target == Target::Wq   ? &w.wq
                               : target == Target::Wk ? &w.wk
                               : target == Target::Wv ? &w.wv
                               : target == Target::Wo ? &w.wo
                                                      : nullptr;
      const ScalarFn f = [&](ad::Tape& tape, ad::Var v) {
        ad::Binder binder(tape);
        if (weight != nullptr) binder.override_with(weight, v);
        const AttentionParams params = bind_attention(binder, w, false);
        const ad::Var xv = target == Target::X ? v : tape.constant(x);
        const ad::Var pv = target == Target::P ? v : tape.constant(p);
        const auto r = ad::prompt_attention(xv, pv, params, mode);
        const ad::Var both[] = {r.x_out, r.p_out};
        return ad::weighted_sum(ad::matmul(ad::concat_rows(both), params.wo), readout);
      };
      const Tensor2D& at = target == Target::X ? x : target == Target::P ? p : *weight;
      const GradCheckResult g = grad_check(f, at, 1e-5);
      CHECK(g.max_rel_error < 1e-5);
    }
  }
}
