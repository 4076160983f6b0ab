#include "dpl/cli/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "dpl/error.hpp"
#include "dpl/numerics/grad_check.hpp"
#include "dpl/toyvlm/dual_encoder.hpp"

namespace dpl::cli {
namespace {

constexpr double kDecompTol = 1e-10;
constexpr double kMassTol = 1e-12;
constexpr double kMixTol = 1e-12;
constexpr double kEncoderTol = 1e-9;
constexpr double kGradTol = 1e-5;
constexpr double kGradEps = 1e-5;

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Fault {
  bool sigma = false;
  bool beta = false;
};

class Check {
 public:
  Check(std::string name, double tol) { r_.name = std::move(name), r_.tolerance = tol, r_.passed = true; }

  void observe(double err, const std::string& where = {}) {
    if (!(err <= r_.tolerance)) {
      if (r_.passed) r_.detail = where;
      r_.passed = false;
    }
    if (std::isnan(err) || err > r_.max_error) r_.max_error = err;
  }
  void require(bool ok, const std::string& where) {
    if (!ok && r_.passed) {
      r_.passed = false;
      r_.detail = where;
    }
  }
  CheckResult result() const { return r_; }

 private:
  CheckResult r_;
};

struct RandomCase {
  Tensor2D x, p;
  AttentionWeights w;
  std::string label;
};

RandomCase random_case(RngStream& rng, std::size_t index) {
  static constexpr std::size_t kHeads[] = {1, 2, 4};
  const std::size_t n = 2 + rng.below(31);
  const std::size_t m = 1 + rng.below(8);
  const std::size_t heads = kHeads[rng.below(3)];
  const std::size_t d = heads * (1 + rng.below(4));
  RandomCase c;
  c.x = rng.normal_tensor(n, d, 1.0);
  c.p = rng.normal_tensor(m, d, 1.0);
  c.w = AttentionWeights::random(d, heads, rng, rng.uniform(0.2, 1.2));
  c.label = "case " + std::to_string(index) + " (N=" + std::to_string(n) + ", M=" + std::to_string(m) +
            ", heads=" + std::to_string(heads) + ")";
  return c;
}

MixingOverride faulty_mixing(const Fault& fault, std::size_t n, std::size_t m) {
  MixingOverride mix;
  if (fault.sigma) mix.sigma = 2.0 * default_sigma(n, m) + 0.1;
  if (fault.beta) mix.beta = 0.5 * default_beta(n, m);
  return mix;
}

struct SmallModel {
  DualEncoder model;
  PromptBank visual;
  PromptBank textual;
};

SmallModel small_model(std::uint64_t seed, FlowPolicy flow) {
  DualEncoderConfig cfg;
  cfg.visual = {4, 8, 2, 16, AttentionMode::VanillaConcat, MaskPolicy::Bidirectional};
  cfg.text = {4, 8, 2, 16, AttentionMode::VanillaConcat, MaskPolicy::Bidirectional};
  cfg.num_patches = 4;
  cfg.patch_dim = 4;
  cfg.embed_dim = 6;
  cfg.text_context = 8;
  cfg.logit_scale = 10.0;
  RngStream rng(seed);
  DualEncoder model = DualEncoder::random(cfg, Vocabulary({"a", "photo", "of", "cat", "dog"}), rng);
  const PromptBank visual = build_bank({Modality::Visual, 2, 3, 8, 4, flow}, {}, rng);
  InitScheme init;
  init.text_std = 0.5;
  const PromptBank textual = build_bank({Modality::Textual, 2, 2, 8, 4, flow}, init, rng);
  return {std::move(model), visual, textual};
}

const TokenSeq& photo_template() {
  static const TokenSeq t{"a", "photo", "of", "a", "[CLS]"};
  return t;
}

// Cross-entropy of two images against two class texts, with optional
// replacement of one parameter tensor.
ad::Var encoder_loss(ad::Tape& tape, const SmallModel& s, AttentionMode mode, const Tensor2D& img_a,
                     const Tensor2D& img_b, const Tensor2D* target, ad::Var replacement) {
  ad::Binder binder(tape);
  if (target != nullptr) binder.override_with(target, replacement);
  const std::vector<TokenSeq> names{{"cat"}, {"dog"}};
  const ad::Var text =
      encode_class_texts(binder, s.model, names, photo_template(), s.textual, text_settings(s.model, mode));
  const std::array<ad::Var, 2> imgs{encode_image(binder, s.model, img_a, s.visual, image_settings(s.model, mode)),
                                    encode_image(binder, s.model, img_b, s.visual, image_settings(s.model, mode))};
  const std::array<std::size_t, 2> labels{0, 1};
  return ad::cross_entropy(classify(ad::concat_rows(imgs), text, s.model.config.logit_scale), labels);
}

void check_decomposition(const VerifyOptions& opt, std::vector<CheckResult>& out) {
  Check exact("exact_decomposition", kDecompTol);
  Check mass("mass_split_identity", kMassTol);
  const RngStream root(opt.seed);
  for (std::size_t i = 0; i < opt.configurations; ++i) {
    RngStream rng = root.fork(i);
    const RandomCase c = random_case(rng, i);
    const auto v = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::VanillaConcat);
    const auto e = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::ExactDecomposed);
    exact.observe(std::max(max_abs_diff(v.x_out, e.x_out), max_abs_diff(v.p_out, e.p_out)), c.label);
    for (const auto& h : e.report->heads) {
      for (std::size_t q = 0; q < h.f.size(); ++q) mass.observe(std::abs(h.f[q] + h.h[q] - 1.0), c.label);
      for (std::size_t q = 0; q < h.f_prompt.size(); ++q) {
        mass.observe(std::abs(h.f_prompt[q] + h.h_prompt[q] - 1.0), c.label);
      }
    }
  }
  out.push_back(exact.result());
  out.push_back(mass.result());
}

void check_mixing(const VerifyOptions& opt, const Fault& fault, std::vector<CheckResult>& out) {
  Check sigma("da_sigma_mixing", kMixTol);
  Check beta("da_beta_mixing", kMixTol);
  Check sr("dasr_prompt_forwarding", kMixTol);
  Check re("dare_exact_instance_forwarding", kDecompTol);
  const RngStream root = RngStream(opt.seed).fork(0x6d6978);
  for (std::size_t i = 0; i < std::min<std::size_t>(opt.configurations, 25); ++i) {
    RngStream rng = root.fork(i);
    const RandomCase c = random_case(rng, i);
    const std::size_t n = c.x.rows();
    const std::size_t m = c.p.rows();
    const MixingOverride mix = faulty_mixing(fault, n, m);
    // Oracle coefficients straight from the token counts.
    const double sg = static_cast<double>(m) / static_cast<double>(n);
    const double bt = static_cast<double>(m) / static_cast<double>(m + n);
    const Tensor2D axx = attend(c.x, c.x, c.w), axp = attend(c.x, c.p, c.w);
    const Tensor2D app = attend(c.p, c.p, c.w), apx = attend(c.p, c.x, c.w);
    const auto da = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::DA, {}, mix);
    sigma.observe(max_abs_diff(da.x_out, add(axx, scale(axp, sg))), c.label);
    beta.observe(max_abs_diff(da.p_out, add(scale(app, bt), scale(apx, 1.0 - bt))), c.label);
    const auto dasr = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::DASR, {}, mix);
    sigma.observe(max_abs_diff(dasr.x_out, add(axx, scale(axp, sg))), c.label);
    sr.observe(max_abs_diff(dasr.p_out, apx), c.label);
    const auto dare = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::DARe, {}, mix);
    const auto vanilla = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::VanillaConcat);
    re.observe(max_abs_diff(dare.x_out, vanilla.x_out), c.label);
    beta.observe(max_abs_diff(dare.p_out, add(scale(app, bt), scale(apx, 1.0 - bt))), c.label);
  }
  out.push_back(sigma.result());
  out.push_back(beta.result());
  out.push_back(sr.result());
  out.push_back(re.result());
}

void check_hf_uniform(const VerifyOptions& opt, std::vector<CheckResult>& out) {
  Check hf("hf_ratio_uniform_keys", kMassTol);
  RngStream rng = RngStream(opt.seed).fork(0x6866);
  for (std::size_t i = 0; i < 10; ++i) {
    RandomCase c = random_case(rng, i);
    c.w.wk = Tensor2D(c.w.wk.rows(), c.w.wk.cols());
    const double expected = static_cast<double>(c.p.rows()) / static_cast<double>(c.x.rows());
    for (double r : hf_ratio_profile(c.x, c.p, c.w)) hf.observe(std::abs(r - expected), c.label);
  }
  out.push_back(hf.result());
}

void check_encoder(const VerifyOptions& opt, std::vector<CheckResult>& out) {
  Check recovery("zero_shot_recovery", 0.0);
  Check sigma_zero("sigma_zero_recovery", kMixTol);
  Check equivalence("encoder_exact_equivalence", kEncoderTol);
  Check decoupling("decoupling_invariant", 0.0);
  Check norm("embedding_unit_norm", kMassTol);

  for (FlowPolicy flow : {FlowPolicy::Discard, FlowPolicy::Propagate}) {
    const std::string tag = std::string(" flow=") + std::string(to_string(flow));
    const SmallModel s = small_model(opt.seed, flow);
    RngStream rng = RngStream(opt.seed).fork(0x656e63 + static_cast<std::uint64_t>(flow));
    const Tensor2D img = rng.normal_tensor(4, 4, 1.0);
    const Tensor2D other = rng.normal_tensor(4, 4, 1.0);
    const PromptBank no_visual = PromptBank::empty(Modality::Visual, 8, flow);
    const PromptBank no_text = PromptBank::empty(Modality::Textual, 8, flow);

    const Tensor2D ref_img = encode_image(s.model, img, no_visual, AttentionMode::VanillaConcat);
    const Tensor2D ref_txt = encode_text(s.model, {"cat"}, photo_template(), no_text, AttentionMode::VanillaConcat);
    for (AttentionMode mode : all_attention_modes()) {
      const std::string where = std::string(to_string(mode)) + tag;
      recovery.require(bitwise_equal(encode_image(s.model, img, no_visual, mode), ref_img), where);
      recovery.require(bitwise_equal(encode_text(s.model, {"cat"}, photo_template(), no_text, mode), ref_txt), where);
      const Tensor2D e = encode_image(s.model, img, s.visual, mode);
      norm.observe(std::abs(frobenius_norm(e) - 1.0), where);
    }
    equivalence.observe(max_abs_diff(encode_image(s.model, img, s.visual, AttentionMode::VanillaConcat),
                                     encode_image(s.model, img, s.visual, AttentionMode::ExactDecomposed)),
                        "image" + tag);
    equivalence.observe(
        max_abs_diff(encode_text(s.model, {"dog"}, photo_template(), s.textual, AttentionMode::VanillaConcat),
                     encode_text(s.model, {"dog"}, photo_template(), s.textual, AttentionMode::ExactDecomposed)),
        "text" + tag);

    // sigma = 0 turns DA instance forwarding into plain self-attention.
    {
      RandomCase c = random_case(rng, 0);
      MixingOverride zero;
      zero.sigma = 0.0;
      const auto r = prompt_attention_forward(c.x, c.p, c.w, AttentionMode::DA, {}, zero);
      sigma_zero.observe(max_abs_diff(r.x_out, attend(c.x, c.x, c.w)), c.label);
    }

    // Decoupling: at each layer, with that layer's input X held fixed, the
    // instance-instance weights must not depend on the prompts.
    for (AttentionMode mode : {AttentionMode::DA, AttentionMode::DASR}) {
      const PromptBank other_bank = build_bank({Modality::Visual, 2, 3, 8, 4, flow}, {}, rng);
      std::vector<LayerTrace> ta, tb;
      {
        ad::Tape tape;
        ad::Binder binder(tape);
        const EncodeSettings st = image_settings(s.model, mode);
        encode_image(binder, s.model, img, s.visual, st, &ta);
        encode_image(binder, s.model, other, other_bank, st, &tb);
      }
      for (std::size_t l = 0; l < ta.size(); ++l) {
        ad::Tape tape;
        ad::Binder binder(tape);
        const ad::Var x = tape.constant(ta[l].x_in);
        const ad::Var p = tb[l].p_in.rows() > 0 ? tape.constant(tb[l].p_in) : ad::Var();
        const BlockOutput o = transformer_block(binder, s.model.visual.blocks[l], x, p, image_settings(s.model, mode));
        for (std::size_t h = 0; h < o.instance_weights.size(); ++h) {
          decoupling.require(bitwise_equal(o.instance_weights[h].value(), ta[l].instance_weights[h]),
                             std::string(to_string(mode)) + tag + " layer " + std::to_string(l + 1));
        }
      }
    }
  }
  out.push_back(recovery.result());
  out.push_back(sigma_zero.result());
  out.push_back(equivalence.result());
  out.push_back(decoupling.result());
  out.push_back(norm.result());
}

void check_gradients(const VerifyOptions& opt, std::vector<CheckResult>& out) {
  Check attn("gradient_attention_modes", kGradTol);
  RngStream rng = RngStream(opt.seed).fork(0x67726164);
  for (AttentionMode mode : all_attention_modes()) {
    const RandomCase c = random_case(rng, 0);
    const Tensor2D wx = rng.normal_tensor(c.x.rows(), c.x.cols(), 1.0);
    const Tensor2D wp = rng.normal_tensor(c.p.rows(), c.p.cols(), 1.0);
    // Loss with one of P, X, Wq, Wk, Wv, Wo replaced by the checked variable.
    const auto loss_for = [&](int which) {
      return [&, which](ad::Tape& tape, ad::Var v) {
        ad::Binder binder(tape);
        const Tensor2D* targets[] = {&c.w.wq, &c.w.wk, &c.w.wv, &c.w.wo};
        if (which > 1) binder.override_with(targets[which - 2], v);
        const AttentionParams params = bind_attention(binder, c.w, false);
        const ad::Var p = which == 0 ? v : tape.constant(c.p);
        const ad::Var x = which == 1 ? v : tape.constant(c.x);
        const auto r = ad::prompt_attention(x, p, params, mode);
        return ad::add(ad::weighted_sum(r.x_out, wx), ad::weighted_sum(r.p_out, wp));
      };
    };
    const Tensor2D* inputs[] = {&c.p, &c.x, &c.w.wq, &c.w.wk, &c.w.wv, &c.w.wo};
    for (int which = 0; which < 6; ++which) {
      const GradCheckResult g = grad_check(loss_for(which), *inputs[which], kGradEps);
      attn.observe(g.max_rel_error, std::string(to_string(mode)) + " input " + std::to_string(which));
    }
  }
  out.push_back(attn.result());

  Check enc("gradient_dual_encoder", kGradTol);
  for (FlowPolicy flow : {FlowPolicy::Discard, FlowPolicy::Propagate}) {
    const SmallModel s = small_model(opt.seed + 1, flow);
    RngStream r2 = RngStream(opt.seed).fork(0x656e6367 + static_cast<std::uint64_t>(flow));
    const Tensor2D img_a = r2.normal_tensor(4, 4, 1.0);
    const Tensor2D img_b = r2.normal_tensor(4, 4, 1.0);
    std::vector<const Tensor2D*> targets;
    for (const Tensor2D& t : s.visual.layers()) targets.push_back(&t);
    for (const Tensor2D& t : s.textual.layers()) targets.push_back(&t);
    const auto add_block = [&](const TransformerWeights& w, std::size_t b) {
      targets.push_back(&w.blocks[b].attn.wq);
      targets.push_back(&w.blocks[b].attn.wk);
      targets.push_back(&w.blocks[b].attn.wv);
      targets.push_back(&w.blocks[b].attn.wo);
    };
    for (const TransformerWeights* w : {&s.model.visual, &s.model.text}) {
      if (opt.all_projection_weights) {
        for (std::size_t b = 0; b < w->blocks.size(); ++b) add_block(*w, b);
      } else {
        add_block(*w, w->blocks.size() - 1);
      }
    }
    for (AttentionMode mode : all_attention_modes()) {
      for (std::size_t t = 0; t < targets.size(); ++t) {
        const Tensor2D* target = targets[t];
        const auto f = [&](ad::Tape& tape, ad::Var v) {
          return encoder_loss(tape, s, mode, img_a, img_b, target, v);
        };
        const GradCheckResult g = grad_check(f, *target, kGradEps);
        enc.observe(g.max_rel_error, std::string(to_string(mode)) + " flow=" + std::string(to_string(flow)) +
                                         " tensor " + std::to_string(t) + " entry " +
                                         std::to_string(g.worst_index) + " analytic " +
                                         fmt_g(g.analytic_at_worst) + " numeric " +
                                         fmt_g(g.numeric_at_worst));
      }
    }
  }
  out.push_back(enc.result());
}

}  // namespace

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opt) {
  Fault fault;
  if (opt.inject_fault == "sigma") {
    fault.sigma = true;
  } else if (opt.inject_fault == "beta") {
    fault.beta = true;
  } else if (!opt.inject_fault.empty()) {
    fail(ErrorKind::Configuration, "unknown fault '" + opt.inject_fault + "' (expected sigma or beta)");
  }
  if (opt.configurations == 0) fail(ErrorKind::Configuration, "verify needs at least one configuration");
  std::vector<CheckResult> out;
  check_decomposition(opt, out);
  check_mixing(opt, fault, out);
  check_hf_uniform(opt, out);
  check_encoder(opt, out);
  check_gradients(opt, out);
  return out;
}

std::vector<CheckResult> run_gradient_audit(const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  check_gradients(opt, out);
  return out;
}

nlohmann::json to_json(const CheckResult& c) {
  return {{"name", c.name}, {"passed", c.passed}, {"max_error", c.max_error}, {"tolerance", c.tolerance},
          {"detail", c.detail}};
}

}  // namespace dpl::cli
