#pragma once

// Prompt-augmented multi-head attention.
//
// Notation used throughout: X holds the N instance tokens, P the M prompt
// tokens (both row-major, one token per row, model_dim columns). A(Y, Z) is
// softmax(q(Y) k(Z)^T * scale) v(Z) evaluated per head with heads
// concatenated along columns. The output projection Wo is NOT applied here;
// the transformer block applies it once after the mode-specific combination.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dpl/numerics/autodiff.hpp"
#include "dpl/numerics/rng.hpp"
#include "dpl/numerics/tensor.hpp"

namespace dpl {

enum class AttentionMode {
  // Plain softmax attention over the stacked sequence [X; P].
  VanillaConcat,
  // Four sub-attentions recombined with the exact softmax-mass coefficients.
  ExactDecomposed,
  // Instance: A(X,X) + sigma A(X,P). Prompt: beta A(P,P) + (1 - beta) A(P,X).
  DA,
  // Instance as DA. Prompt: A(P,X).
  DASR,
  // Instance forwarding left exact; prompt forwarding as DA.
  DARe,
};

std::string_view to_string(AttentionMode mode) noexcept;
// Throws Error(Configuration) for an unknown name.
AttentionMode parse_attention_mode(std::string_view name);
std::span<const AttentionMode> all_attention_modes() noexcept;

// Wq, Wk, Wv are model_dim x model_dim; columns [h*head_dim, (h+1)*head_dim)
// belong to head h. Wo maps the concatenated head outputs back to model_dim.
struct AttentionWeights {
  Tensor2D wq, wk, wv, wo;
  std::size_t num_heads = 1;

  std::size_t model_dim() const noexcept { return wq.rows(); }
  std::size_t head_dim() const noexcept { return num_heads == 0 ? 0 : model_dim() / num_heads; }
  double scale() const noexcept;
  // Throws Error(InvalidShape) on inconsistent shapes or head split.
  void validate() const;

  static AttentionWeights random(std::size_t model_dim, std::size_t num_heads, RngStream& rng,
                                 double stddev);
};

struct AttentionParams {
  ad::Var wq, wk, wv, wo;
  std::size_t num_heads = 1;
  double scale = 1.0;
};

AttentionParams bind_attention(ad::Binder& binder, const AttentionWeights& w, bool trainable);

// Optional key visibility over the stacked sequence [X; P] (instances first,
// then prompts, for both queries and keys). Each sub-attention sees the
// matching block. Every query must see at least one key.
struct MaskSpec {
  std::optional<KeyMask> keys;

  bool active() const noexcept { return keys.has_value(); }
};

// Ablation hook; by default sigma = M/N and beta = M/(M+N).
struct MixingOverride {
  std::optional<double> sigma;
  std::optional<double> beta;
};

double default_sigma(std::size_t num_instances, std::size_t num_prompts) noexcept;
double default_beta(std::size_t num_instances, std::size_t num_prompts) noexcept;

// Softmax denominators and mass splits for one head.
struct HeadDecomposition {
  // Per instance query x_i.
  std::vector<double> lambda_xx;      // sum over x_j of exp(q(x_i) k(x_j) scale)
  std::vector<double> lambda_xp;      // sum over p_j
  std::vector<double> lambda_x_full;  // sum over [X, P]
  std::vector<double> f;              // lambda_xx / lambda_x_full
  std::vector<double> h;              // lambda_xp / lambda_x_full
  std::vector<double> hf_ratio;       // lambda_xp / lambda_xx
  // Per prompt query p_i: f(P,X) = lambda(p_i,P) / lambda(p_i,[X,P]), h(P,X) likewise.
  std::vector<double> f_prompt;
  std::vector<double> h_prompt;
};

struct DecompositionReport {
  std::size_t num_instances = 0;
  std::size_t num_prompts = 0;
  std::vector<HeadDecomposition> heads;
  double sigma = 0.0;
  double beta = 0.0;
  // Sub-attention outputs, heads concatenated, before Wo.
  Tensor2D a_xx, a_xp, a_pp, a_px;
};

// Value-level A(Y, Z). Throws Error(InvalidShape) for an empty Z, mismatched
// widths, or a query row with no visible key.
Tensor2D attend(const Tensor2D& y, const Tensor2D& z, const AttentionWeights& w,
                const KeyMask* mask = nullptr);

// Throws Error(DegenerateDecomposition) when P is empty.
DecompositionReport decompose(const Tensor2D& x, const Tensor2D& p, const AttentionWeights& w,
                              const MixingOverride& mixing = {});

// lambda(x_i, P) / lambda(x_i, X) for every head and query, head-major
// (entry h * N + i).
std::vector<double> hf_ratio_profile(const Tensor2D& x, const Tensor2D& p, const AttentionWeights& w);

struct PromptAttentionOutput {
  Tensor2D x_out;
  Tensor2D p_out;
  // Present whenever P is non-empty.
  std::optional<DecompositionReport> report;
};

PromptAttentionOutput prompt_attention_forward(const Tensor2D& x, const Tensor2D& p,
                                               const AttentionWeights& w, AttentionMode mode,
                                               const MaskSpec& mask = {},
                                               const MixingOverride& mixing = {});

namespace ad {

struct PromptAttentionResult {
  Var x_out;
  // Invalid when there are no prompts.
  Var p_out;
  // Per head, the N x N weights instance queries apply to instance values.
  std::vector<Var> instance_weights;
};

Var attend(Var y, Var z, const AttentionParams& params, const KeyMask* mask = nullptr);

// p may be invalid (no prompts): every mode then runs plain self-attention
// over x through the same code path.
PromptAttentionResult prompt_attention(Var x, Var p, const AttentionParams& params,
                                       AttentionMode mode, const MaskSpec& mask = {},
                                       const MixingOverride& mixing = {});

}  // namespace ad
}  // namespace dpl
