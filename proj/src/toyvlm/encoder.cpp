#include "dpl/toyvlm/encoder.hpp"

#include <cmath>
#include <string>

#include "dpl/error.hpp"

namespace dpl {

std::string_view to_string(MaskPolicy m) noexcept {
  return m == MaskPolicy::Bidirectional ? "bidirectional" : "causal";
}

MaskPolicy parse_mask_policy(std::string_view name) {
  if (name == "bidirectional") return MaskPolicy::Bidirectional;
  if (name == "causal") return MaskPolicy::Causal;
  fail(ErrorKind::Configuration, "unknown mask policy '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  if (num_layers == 0) fail(ErrorKind::Configuration, "encoder needs at least one layer");
  if (model_dim == 0 || num_heads == 0 || mlp_hidden_dim == 0) {
    fail(ErrorKind::Configuration, "encoder dimensions must be positive");
  }
  if (model_dim % num_heads != 0) {
    fail(ErrorKind::Configuration, "model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                                       std::to_string(num_heads));
  }
}

TransformerWeights TransformerWeights::random(const EncoderConfig& cfg, std::size_t embed_dim, RngStream& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  const std::size_t hidden = cfg.mlp_hidden_dim;
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
  TransformerWeights w;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    BlockWeights b;
    b.ln1_gamma = Tensor2D(1, d, 1.0);
    b.ln1_beta = Tensor2D(1, d);
    b.attn = AttentionWeights::random(d, cfg.num_heads, rng, attn_std);
    b.ln2_gamma = Tensor2D(1, d, 1.0);
    b.ln2_beta = Tensor2D(1, d);
    b.mlp_w1 = rng.normal_tensor(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)));
    b.mlp_b1 = Tensor2D(1, hidden);
    b.mlp_w2 = rng.normal_tensor(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)));
    b.mlp_b2 = Tensor2D(1, d);
    w.blocks.push_back(std::move(b));
  }
  w.ln_final_gamma = Tensor2D(1, d, 1.0);
  w.ln_final_beta = Tensor2D(1, d);
  w.projection = rng.normal_tensor(d, embed_dim, 1.0 / std::sqrt(static_cast<double>(d)));
  return w;
}

void TransformerWeights::visit(const std::function<void(std::string_view, Tensor2D&)>& fn) {
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    BlockWeights& b = blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    fn(p + "ln1_gamma", b.ln1_gamma);
    fn(p + "ln1_beta", b.ln1_beta);
    fn(p + "wq", b.attn.wq);
    fn(p + "wk", b.attn.wk);
    fn(p + "wv", b.attn.wv);
    fn(p + "wo", b.attn.wo);
    fn(p + "ln2_gamma", b.ln2_gamma);
    fn(p + "ln2_beta", b.ln2_beta);
    fn(p + "mlp_w1", b.mlp_w1);
    fn(p + "mlp_b1", b.mlp_b1);
    fn(p + "mlp_w2", b.mlp_w2);
    fn(p + "mlp_b2", b.mlp_b2);
  }
  fn("ln_final_gamma", ln_final_gamma);
  fn("ln_final_beta", ln_final_beta);
  fn("projection", projection);
}

void TransformerWeights::visit(const std::function<void(std::string_view, const Tensor2D&)>& fn) const {
  const_cast<TransformerWeights*>(this)->visit(
      [&fn](std::string_view name, Tensor2D& t) { fn(name, static_cast<const Tensor2D&>(t)); });
}

KeyMask causal_mask(std::size_t num_instances, std::size_t num_prompts, PromptPlacement placement) {
  const std::size_t total = num_instances + num_prompts;
  // Sequence position of row r of [X; P].
  auto position = [&](std::size_t r) {
    const bool is_prompt = r >= num_instances;
    const std::size_t local = is_prompt ? r - num_instances : r;
    if (placement == PromptPlacement::BeforeInstances) return is_prompt ? local : num_prompts + local;
    return is_prompt ? num_instances + local : local;
  };
  KeyMask mask(total, total, false);
  for (std::size_t q = 0; q < total; ++q) {
    for (std::size_t k = 0; k < total; ++k) mask.set(q, k, position(k) <= position(q));
  }
  return mask;
}

namespace {

ad::Var mlp(ad::Binder& binder, const BlockWeights& w, ad::Var h, bool trainable) {
  const ad::Var z = ad::gelu(ad::add_row(ad::matmul(h, binder.bind(w.mlp_w1, trainable)),
                                         binder.bind(w.mlp_b1, trainable)));
  return ad::add_row(ad::matmul(z, binder.bind(w.mlp_w2, trainable)), binder.bind(w.mlp_b2, trainable));
}

}  // namespace

BlockOutput transformer_block(ad::Binder& binder, const BlockWeights& w, ad::Var x, ad::Var p,
                              const EncodeSettings& settings) {
  const bool t = settings.backbone_trainable;
  const ad::Var g1 = binder.bind(w.ln1_gamma, t);
  const ad::Var b1 = binder.bind(w.ln1_beta, t);
  const ad::Var g2 = binder.bind(w.ln2_gamma, t);
  const ad::Var b2 = binder.bind(w.ln2_beta, t);
  const AttentionParams attn = bind_attention(binder, w.attn, t);

  const bool has_prompts = p.valid() && p.rows() > 0;
  MaskSpec mask;
  if (settings.mask == MaskPolicy::Causal) {
    mask.keys = causal_mask(x.rows(), has_prompts ? p.rows() : 0, settings.placement);
  }
  const ad::Var xn = ad::layer_norm(x, g1, b1);
  const ad::Var pn = has_prompts ? ad::layer_norm(p, g1, b1) : ad::Var();
  const ad::PromptAttentionResult r = ad::prompt_attention(xn, pn, attn, settings.mode, mask, settings.mixing);

  BlockOutput out;
  out.instance_weights = r.instance_weights;
  out.x_normed = xn;
  out.p_normed = pn;
  ad::Var x1 = ad::add(x, ad::matmul(r.x_out, attn.wo));
  out.x = ad::add(x1, mlp(binder, w, ad::layer_norm(x1, g2, b2), t));
  if (has_prompts) {
    ad::Var p1 = ad::add(p, ad::matmul(r.p_out, attn.wo));
    out.p = ad::add(p1, mlp(binder, w, ad::layer_norm(p1, g2, b2), t));
  }
  return out;
}

ad::Var run_transformer(ad::Binder& binder, const TransformerWeights& w, ad::Var x0, const PromptBank& bank,
                        const EncodeSettings& settings, std::vector<LayerTrace>* trace) {
  if (x0.rows() == 0) fail(ErrorKind::InvalidShape, "encoder input has no tokens");
  ad::Var x = x0;
  ad::Var carried;
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const ad::Var p = insert_prompts(l + 1, carried, bank, binder, settings.prompts_trainable);
    BlockOutput out = transformer_block(binder, w.blocks[l], x, p, settings);
    if (trace != nullptr) {
      LayerTrace lt;
      lt.x_in = x.value();
      lt.p_in = p.valid() ? p.value() : Tensor2D(0, x.cols());
      lt.x_attn_in = out.x_normed.value();
      lt.p_attn_in = out.p_normed.valid() ? out.p_normed.value() : Tensor2D(0, x.cols());
      for (const ad::Var& iw : out.instance_weights) lt.instance_weights.push_back(iw.value());
      trace->push_back(std::move(lt));
    }
    x = out.x;
    carried = out.p;
  }
  return x;
}

ad::Var pool_and_project(ad::Binder& binder, const TransformerWeights& w, ad::Var tokens,
                         std::size_t pool_index, bool backbone_trainable) {
  if (pool_index >= tokens.rows()) fail(ErrorKind::InvalidShape, "pool index out of range");
  const ad::Var pooled = ad::slice_rows(tokens, pool_index, 1);
  const ad::Var normed = ad::layer_norm(pooled, binder.bind(w.ln_final_gamma, backbone_trainable),
                                        binder.bind(w.ln_final_beta, backbone_trainable));
  return ad::row_l2_normalize(ad::matmul(normed, binder.bind(w.projection, backbone_trainable)));
}

}  // namespace dpl
