#pragma once

// Pre-norm transformer encoder with prompt-aware attention:
//   x <- x + Wo(attn(LN1(x), LN1(p)))
//   x <- x + MLP(LN2(x))
// with the same updates applied to the prompt rows p.

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dpl/attention/attention.hpp"
#include "dpl/numerics/autodiff.hpp"
#include "dpl/numerics/rng.hpp"
#include "dpl/prompting/prompt_bank.hpp"

namespace dpl {

enum class MaskPolicy { Bidirectional, Causal };

std::string_view to_string(MaskPolicy m) noexcept;
MaskPolicy parse_mask_policy(std::string_view name);

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t model_dim = 16;
  std::size_t num_heads = 2;
  std::size_t mlp_hidden_dim = 32;
  AttentionMode attention_mode = AttentionMode::VanillaConcat;
  MaskPolicy mask = MaskPolicy::Bidirectional;

  // Throws Error(Configuration).
  void validate() const;
};

struct BlockWeights {
  Tensor2D ln1_gamma, ln1_beta;
  AttentionWeights attn;
  Tensor2D ln2_gamma, ln2_beta;
  Tensor2D mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct TransformerWeights {
  std::vector<BlockWeights> blocks;
  Tensor2D ln_final_gamma, ln_final_beta;
  Tensor2D projection;  // model_dim x embed_dim

  static TransformerWeights random(const EncoderConfig& cfg, std::size_t embed_dim, RngStream& rng);

  void visit(const std::function<void(std::string_view, Tensor2D&)>& fn);
  void visit(const std::function<void(std::string_view, const Tensor2D&)>& fn) const;
};

// Where prompts sit relative to instance tokens in sequence order. Only the
// causal mask depends on it.
enum class PromptPlacement { BeforeInstances, AfterInstances };

struct LayerTrace {
  Tensor2D x_in;
  Tensor2D p_in;
  // LayerNorm'd tokens entering attention.
  Tensor2D x_attn_in;
  Tensor2D p_attn_in;
  // Per head, N x N weights instance queries put on instance values.
  std::vector<Tensor2D> instance_weights;
};

struct EncodeSettings {
  AttentionMode mode = AttentionMode::VanillaConcat;
  MaskPolicy mask = MaskPolicy::Bidirectional;
  PromptPlacement placement = PromptPlacement::AfterInstances;
  MixingOverride mixing;
  bool backbone_trainable = false;
  bool prompts_trainable = false;
};

// Causal visibility over [X; P] for the given placement.
KeyMask causal_mask(std::size_t num_instances, std::size_t num_prompts, PromptPlacement placement);

struct BlockOutput {
  ad::Var x;
  ad::Var p;  // invalid when the layer ran without prompts
  ad::Var x_normed;
  ad::Var p_normed;
  std::vector<ad::Var> instance_weights;
};

BlockOutput transformer_block(ad::Binder& binder, const BlockWeights& w, ad::Var x, ad::Var p,
                              const EncodeSettings& settings);

// Runs all blocks. Layer l (1-based) takes its prompts via insert_prompts.
// Returns the final instance tokens; fills trace (one entry per layer) when
// non-null.
ad::Var run_transformer(ad::Binder& binder, const TransformerWeights& w, ad::Var x0, const PromptBank& bank,
                        const EncodeSettings& settings, std::vector<LayerTrace>* trace = nullptr);

// LN_final(row pool_index) * projection, L2-normalised to a 1 x embed_dim row.
ad::Var pool_and_project(ad::Binder& binder, const TransformerWeights& w, ad::Var tokens,
                         std::size_t pool_index, bool backbone_trainable);

}  // namespace dpl
