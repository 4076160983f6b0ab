#include "dpl/attention/attention.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "dpl/error.hpp"

namespace dpl {
namespace {

constexpr std::array<AttentionMode, 5> kModes{AttentionMode::VanillaConcat,
                                              AttentionMode::ExactDecomposed, AttentionMode::DA,
                                              AttentionMode::DASR, AttentionMode::DARe};

}  // namespace

std::string_view to_string(AttentionMode mode) noexcept {
  switch (mode) {
    case AttentionMode::VanillaConcat: return "VanillaConcat";
    case AttentionMode::ExactDecomposed: return "ExactDecomposed";
    case AttentionMode::DA: return "DA";
    case AttentionMode::DASR: return "DASR";
    case AttentionMode::DARe: return "DARe";
  }
  return "unknown";
}

AttentionMode parse_attention_mode(std::string_view name) {
  for (AttentionMode m : kModes) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorKind::Configuration, "unknown attention mode '" + std::string(name) +
                                     "' (expected VanillaConcat, ExactDecomposed, DA, DASR or DARe)");
}

std::span<const AttentionMode> all_attention_modes() noexcept { return kModes; }

double AttentionWeights::scale() const noexcept {
  return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

void AttentionWeights::validate() const {
  const std::size_t d = model_dim();
  if (d == 0 || num_heads == 0) fail(ErrorKind::InvalidShape, "attention: empty weights");
  if (d % num_heads != 0) {
    fail(ErrorKind::InvalidShape, "attention: model_dim " + std::to_string(d) +
                                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  for (const Tensor2D* m : {&wq, &wk, &wv, &wo}) {
    if (m->rows() != d || m->cols() != d) fail(ErrorKind::InvalidShape, "attention: projections must be DxD");
  }
}

AttentionWeights AttentionWeights::random(std::size_t model_dim, std::size_t num_heads,
                                          RngStream& rng, double stddev) {
  AttentionWeights w;
  w.num_heads = num_heads;
  w.wq = rng.normal_tensor(model_dim, model_dim, stddev);
  w.wk = rng.normal_tensor(model_dim, model_dim, stddev);
  w.wv = rng.normal_tensor(model_dim, model_dim, stddev);
  w.wo = rng.normal_tensor(model_dim, model_dim, stddev);
  w.validate();
  return w;
}

AttentionParams bind_attention(ad::Binder& binder, const AttentionWeights& w, bool trainable) {
  w.validate();
  return {binder.bind(w.wq, trainable), binder.bind(w.wk, trainable), binder.bind(w.wv, trainable),
          binder.bind(w.wo, trainable), w.num_heads, w.scale()};
}

double default_sigma(std::size_t num_instances, std::size_t num_prompts) noexcept {
  return static_cast<double>(num_prompts) / static_cast<double>(num_instances);
}

double default_beta(std::size_t num_instances, std::size_t num_prompts) noexcept {
  return static_cast<double>(num_prompts) / static_cast<double>(num_prompts + num_instances);
}

namespace ad {
namespace {

struct Projection {
  Var q, k, v;
};

Projection project(Var tokens, const AttentionParams& p) {
  return {matmul(tokens, p.wq), matmul(tokens, p.wk), matmul(tokens, p.wv)};
}

Var head_of(Var m, std::size_t head, const AttentionParams& p) {
  if (p.num_heads == 1) return m;
  const std::size_t hd = m.cols() / p.num_heads;
  return slice_cols(m, head * hd, hd);
}

struct SubAttention {
  Var logits;
  Var probs;
  Var out;
};

SubAttention sub_attention(Var q, Var k, Var v, double scale_factor, const KeyMask* mask) {
  SubAttention s;
  s.logits = scale(matmul_nt(q, k), scale_factor);
  s.probs = softmax_rows(s.logits, mask);
  s.out = matmul(s.probs, v);
  return s;
}

Var concat_heads(const std::vector<Var>& heads) {
  if (heads.size() == 1) return heads.front();
  return concat_cols(heads);
}

void require_query_coverage(const KeyMask& mask) {
  for (std::size_t q = 0; q < mask.rows(); ++q) {
    bool any = false;
    for (std::size_t k = 0; k < mask.cols() && !any; ++k) any = mask.visible(q, k);
    if (!any) fail(ErrorKind::InvalidShape, "mask leaves query " + std::to_string(q) + " with no visible key");
  }
}

struct MaskBlocks {
  std::optional<KeyMask> xx, xp, px, pp, x_full, p_full;

  static const KeyMask* ptr(const std::optional<KeyMask>& m) { return m ? &*m : nullptr; }
};

MaskBlocks split_mask(const MaskSpec& spec, std::size_t n, std::size_t m) {
  MaskBlocks b;
  if (!spec.active()) return b;
  const KeyMask& k = *spec.keys;
  if (k.rows() != n + m || k.cols() != n + m) {
    fail(ErrorKind::InvalidShape, "mask must be (N+M)x(N+M) over [X; P]");
  }
  require_query_coverage(k);
  b.xx = k.block(0, n, 0, n);
  if (m > 0) {
    b.xp = k.block(0, n, n, m);
    b.px = k.block(n, m, 0, n);
    b.pp = k.block(n, m, n, m);
    b.x_full = k.block(0, n, 0, n + m);
    // Prompt rows over keys ordered [X, P].
    b.p_full = k.block(n, m, 0, n + m);
  }
  return b;
}

// exp(part - full) for r x 1 log-sum-exp columns: the share of softmax mass
// a query puts on one key block.
Var mass_share(Var lse_part, Var lse_full) { return exp(sub(lse_part, lse_full)); }

PromptAttentionResult self_attention_only(Var x, const AttentionParams& params, const MaskBlocks& masks) {
  const Projection px = project(x, params);
  std::vector<Var> outs;
  PromptAttentionResult r;
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    const SubAttention s = sub_attention(head_of(px.q, h, params), head_of(px.k, h, params),
                                         head_of(px.v, h, params), params.scale, MaskBlocks::ptr(masks.xx));
    outs.push_back(s.out);
    r.instance_weights.push_back(s.probs);
  }
  r.x_out = concat_heads(outs);
  return r;
}

PromptAttentionResult vanilla_concat(Var x, Var p, const AttentionParams& params, const MaskSpec& spec) {
  const std::size_t n = x.rows();
  const std::size_t m = p.rows();
  const std::array<Var, 2> parts{x, p};
  const Var y = concat_rows(parts);
  const Projection py = project(y, params);
  const KeyMask* mask = spec.active() ? &*spec.keys : nullptr;
  std::vector<Var> outs;
  PromptAttentionResult r;
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    const SubAttention s = sub_attention(head_of(py.q, h, params), head_of(py.k, h, params),
                                         head_of(py.v, h, params), params.scale, mask);
    outs.push_back(s.out);
    r.instance_weights.push_back(slice_cols(slice_rows(s.probs, 0, n), 0, n));
  }
  const Var all = concat_heads(outs);
  r.x_out = slice_rows(all, 0, n);
  r.p_out = slice_rows(all, n, m);
  return r;
}

PromptAttentionResult decomposed(Var x, Var p, const AttentionParams& params, AttentionMode mode,
                                 const MaskBlocks& masks, const MixingOverride& mixing) {
  const std::size_t n = x.rows();
  const std::size_t m = p.rows();
  const double sigma = mixing.sigma.value_or(default_sigma(n, m));
  const double beta = mixing.beta.value_or(default_beta(n, m));
  const bool exact_instances = mode == AttentionMode::ExactDecomposed || mode == AttentionMode::DARe;
  const bool exact_prompts = mode == AttentionMode::ExactDecomposed;

  const Projection px = project(x, params);
  const Projection pp = project(p, params);
  std::vector<Var> x_heads;
  std::vector<Var> p_heads;
  PromptAttentionResult r;
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    const Var qx = head_of(px.q, h, params);
    const Var kx = head_of(px.k, h, params);
    const Var vx = head_of(px.v, h, params);
    const Var qp = head_of(pp.q, h, params);
    const Var kp = head_of(pp.k, h, params);
    const Var vp = head_of(pp.v, h, params);

    const SubAttention s_xx = sub_attention(qx, kx, vx, params.scale, MaskBlocks::ptr(masks.xx));
    const SubAttention s_xp = sub_attention(qx, kp, vp, params.scale, MaskBlocks::ptr(masks.xp));
    const SubAttention s_px = sub_attention(qp, kx, vx, params.scale, MaskBlocks::ptr(masks.px));

    if (exact_instances) {
      const std::array<Var, 2> both{s_xx.logits, s_xp.logits};
      const Var lse_full = row_logsumexp(concat_cols(both), MaskBlocks::ptr(masks.x_full));
      const Var f = mass_share(row_logsumexp(s_xx.logits, MaskBlocks::ptr(masks.xx)), lse_full);
      const Var hc = mass_share(row_logsumexp(s_xp.logits, MaskBlocks::ptr(masks.xp)), lse_full);
      x_heads.push_back(add(scale_rows(s_xx.out, f), scale_rows(s_xp.out, hc)));
      r.instance_weights.push_back(scale_rows(s_xx.probs, f));
    } else {
      x_heads.push_back(add(s_xx.out, scale(s_xp.out, sigma)));
      r.instance_weights.push_back(s_xx.probs);
    }

    if (mode == AttentionMode::DASR) {
      p_heads.push_back(s_px.out);
      continue;
    }
    const SubAttention s_pp = sub_attention(qp, kp, vp, params.scale, MaskBlocks::ptr(masks.pp));
    if (exact_prompts) {
      const std::array<Var, 2> both{s_px.logits, s_pp.logits};
      const Var lse_full = row_logsumexp(concat_cols(both), MaskBlocks::ptr(masks.p_full));
      const Var f = mass_share(row_logsumexp(s_pp.logits, MaskBlocks::ptr(masks.pp)), lse_full);
      const Var hc = mass_share(row_logsumexp(s_px.logits, MaskBlocks::ptr(masks.px)), lse_full);
      p_heads.push_back(add(scale_rows(s_pp.out, f), scale_rows(s_px.out, hc)));
    } else {
      p_heads.push_back(add(scale(s_pp.out, beta), scale(s_px.out, 1.0 - beta)));
    }
  }
  r.x_out = concat_heads(x_heads);
  r.p_out = concat_heads(p_heads);
  return r;
}

}  // namespace

Var attend(Var y, Var z, const AttentionParams& params, const KeyMask* mask) {
  if (z.rows() == 0) fail(ErrorKind::InvalidShape, "attend: empty key set");
  if (y.cols() != z.cols()) fail(ErrorKind::InvalidShape, "attend: Y and Z widths differ");
  if (mask != nullptr) {
    if (mask->rows() != y.rows() || mask->cols() != z.rows()) {
      fail(ErrorKind::InvalidShape, "attend: mask must be |Y| x |Z|");
    }
    require_query_coverage(*mask);
  }
  const Var q = matmul(y, params.wq);
  const Var k = matmul(z, params.wk);
  const Var v = matmul(z, params.wv);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    outs.push_back(sub_attention(head_of(q, h, params), head_of(k, h, params), head_of(v, h, params),
                                 params.scale, mask)
                       .out);
  }
  return concat_heads(outs);
}

PromptAttentionResult prompt_attention(Var x, Var p, const AttentionParams& params, AttentionMode mode,
                                       const MaskSpec& mask, const MixingOverride& mixing) {
  const std::size_t n = x.rows();
  const std::size_t m = p.valid() ? p.rows() : 0;
  if (n == 0) fail(ErrorKind::InvalidShape, "prompt_attention: no instance tokens");
  if (m > 0 && p.cols() != x.cols()) fail(ErrorKind::InvalidShape, "prompt_attention: X and P widths differ");
  const MaskBlocks masks = split_mask(mask, n, m);
  if (m == 0) return self_attention_only(x, params, masks);
  switch (mode) {
    case AttentionMode::VanillaConcat:
      return vanilla_concat(x, p, params, mask);
    case AttentionMode::ExactDecomposed:
    case AttentionMode::DA:
    case AttentionMode::DASR:
    case AttentionMode::DARe:
      return decomposed(x, p, params, mode, masks, mixing);
  }
  fail(ErrorKind::Configuration, "prompt_attention: unknown attention mode");
}

}  // namespace ad

Tensor2D attend(const Tensor2D& y, const Tensor2D& z, const AttentionWeights& w, const KeyMask* mask) {
  ad::Tape tape;
  ad::Binder binder(tape);
  const AttentionParams params = bind_attention(binder, w, false);
  return ad::attend(tape.constant(y), tape.constant(z), params, mask).value();
}

namespace {

// Denominators for one block of logits against a shared per-row shift.
double shifted_mass(std::span<const double> logits, double shift) {
  double s = 0.0;
  for (double l : logits) s += std::exp(l - shift);
  return s;
}

double row_max(std::span<const double> a, std::span<const double> b) {
  double m = a.empty() ? b[0] : a[0];
  for (double v : a) m = std::max(m, v);
  for (double v : b) m = std::max(m, v);
  return m;
}

}  // namespace

DecompositionReport decompose(const Tensor2D& x, const Tensor2D& p, const AttentionWeights& w,
                              const MixingOverride& mixing) {
  w.validate();
  const std::size_t n = x.rows();
  const std::size_t m = p.rows();
  if (n == 0) fail(ErrorKind::InvalidShape, "decompose: no instance tokens");
  if (m == 0) fail(ErrorKind::DegenerateDecomposition, "decompose: no prompt tokens, f/h split undefined");
  if (x.cols() != w.model_dim() || p.cols() != w.model_dim()) {
    fail(ErrorKind::InvalidShape, "decompose: token width does not match model_dim");
  }

  DecompositionReport report;
  report.num_instances = n;
  report.num_prompts = m;
  report.sigma = mixing.sigma.value_or(default_sigma(n, m));
  report.beta = mixing.beta.value_or(default_beta(n, m));

  ad::Tape tape;
  ad::Binder binder(tape);
  const AttentionParams params = bind_attention(binder, w, false);
  const ad::Var xv = tape.constant(x);
  const ad::Var pv = tape.constant(p);
  report.a_xx = ad::attend(xv, xv, params).value();
  report.a_xp = ad::attend(xv, pv, params).value();
  report.a_pp = ad::attend(pv, pv, params).value();
  report.a_px = ad::attend(pv, xv, params).value();

  const Tensor2D qx = matmul(x, w.wq), kx = matmul(x, w.wk);
  const Tensor2D qp = matmul(p, w.wq), kp = matmul(p, w.wk);
  const std::size_t hd = w.head_dim();
  const double s = w.scale();
  for (std::size_t h = 0; h < w.num_heads; ++h) {
    const Tensor2D qxh = slice_cols(qx, h * hd, hd), kxh = slice_cols(kx, h * hd, hd);
    const Tensor2D qph = slice_cols(qp, h * hd, hd), kph = slice_cols(kp, h * hd, hd);
    const Tensor2D lxx = scale(matmul_nt(qxh, kxh), s);
    const Tensor2D lxp = scale(matmul_nt(qxh, kph), s);
    const Tensor2D lpx = scale(matmul_nt(qph, kxh), s);
    const Tensor2D lpp = scale(matmul_nt(qph, kph), s);

    HeadDecomposition hdcmp;
    for (std::size_t i = 0; i < n; ++i) {
      const double shift = row_max(lxx.row(i), lxp.row(i));
      const double sxx = shifted_mass(lxx.row(i), shift);
      const double sxp = shifted_mass(lxp.row(i), shift);
      const double sfull = sxx + sxp;
      const double scale_back = std::exp(shift);
      hdcmp.lambda_xx.push_back(scale_back * sxx);
      hdcmp.lambda_xp.push_back(scale_back * sxp);
      hdcmp.lambda_x_full.push_back(scale_back * sfull);
      hdcmp.f.push_back(sxx / sfull);
      hdcmp.h.push_back(sxp / sfull);
      hdcmp.hf_ratio.push_back(sxp / sxx);
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double shift = row_max(lpx.row(i), lpp.row(i));
      const double spx = shifted_mass(lpx.row(i), shift);
      const double spp = shifted_mass(lpp.row(i), shift);
      hdcmp.f_prompt.push_back(spp / (spx + spp));
      hdcmp.h_prompt.push_back(spx / (spx + spp));
    }
    report.heads.push_back(std::move(hdcmp));
  }
  return report;
}

std::vector<double> hf_ratio_profile(const Tensor2D& x, const Tensor2D& p, const AttentionWeights& w) {
  const DecompositionReport report = decompose(x, p, w);
  std::vector<double> out;
  out.reserve(report.heads.size() * x.rows());
  for (const auto& h : report.heads) out.insert(out.end(), h.hf_ratio.begin(), h.hf_ratio.end());
  return out;
}

PromptAttentionOutput prompt_attention_forward(const Tensor2D& x, const Tensor2D& p,
                                               const AttentionWeights& w, AttentionMode mode,
                                               const MaskSpec& mask, const MixingOverride& mixing) {
  w.validate();
  ad::Tape tape;
  ad::Binder binder(tape);
  const AttentionParams params = bind_attention(binder, w, false);
  const ad::Var pv = p.rows() > 0 ? tape.constant(p) : ad::Var();
  const ad::PromptAttentionResult r = ad::prompt_attention(tape.constant(x), pv, params, mode, mask, mixing);
  PromptAttentionOutput out;
  out.x_out = r.x_out.value();
  if (r.p_out.valid()) {
    out.p_out = r.p_out.value();
    out.report = decompose(x, p, w, mixing);
  } else {
    out.p_out = Tensor2D(0, x.cols());
  }
  return out;
}

}  // namespace dpl
