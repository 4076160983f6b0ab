#pragma once

// Toy CLIP-style dual encoder. Images are sequences of patch vectors,
// projected to tokens with a learned class token prepended; texts are
// word tokens from a small vocabulary followed by an end-of-text token and
// padding up to a fixed context. Both sides end in a unit-norm embedding of
// the same width and classification scores are logit_scale * cosine.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpl/prompting/text_layout.hpp"
#include "dpl/toyvlm/encoder.hpp"

namespace dpl {

struct DualEncoderConfig {
  EncoderConfig visual{4, 16, 2, 32, AttentionMode::VanillaConcat, MaskPolicy::Bidirectional};
  EncoderConfig text{4, 16, 2, 32, AttentionMode::VanillaConcat, MaskPolicy::Bidirectional};
  std::size_t num_patches = 8;
  std::size_t patch_dim = 8;
  std::size_t embed_dim = 16;
  // Instance-token count of every text input (template, <eot>, then <pad>).
  std::size_t text_context = 12;
  double logit_scale = 100.0;

  void validate() const;
};

class Vocabulary {
 public:
  static constexpr std::string_view kEot = "<eot>";
  static constexpr std::string_view kPad = "<pad>";

  // Duplicates are dropped; <eot> and <pad> are always present.
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  bool contains(std::string_view word) const;
  // Throws Error(NotFound) for an unknown word.
  std::size_t id(std::string_view word) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct VisualStem {
  Tensor2D patch_proj;  // patch_dim x model_dim
  Tensor2D cls_token;   // 1 x model_dim
  Tensor2D positions;   // (num_patches + 1) x model_dim
};

struct TextStem {
  Tensor2D token_embedding;  // vocab x model_dim
  Tensor2D positions;        // text_context x model_dim
};

struct DualEncoder {
  DualEncoderConfig config;
  Vocabulary vocab;
  VisualStem visual_stem;
  TransformerWeights visual;
  TextStem text_stem;
  TransformerWeights text;

  static DualEncoder random(const DualEncoderConfig& config, Vocabulary vocab, RngStream& rng);

  void visit_backbone(const std::function<void(std::string_view, Tensor2D&)>& fn);
  void visit_backbone(const std::function<void(std::string_view, const Tensor2D&)>& fn) const;
  // FNV-1a over the bit patterns of every backbone tensor.
  std::uint64_t backbone_checksum() const;

  // Raw word embeddings (no positions) for the given tokens.
  Tensor2D embed_words(const TokenSeq& tokens) const;
};

// Tape-level encoders; each returns a 1 x embed_dim unit row.
ad::Var encode_image(ad::Binder& binder, const DualEncoder& model, const Tensor2D& patches,
                     const PromptBank& bank, const EncodeSettings& settings,
                     std::vector<LayerTrace>* trace = nullptr);
ad::Var encode_text(ad::Binder& binder, const DualEncoder& model, const TextInputLayout& layout,
                    const PromptBank& bank, const EncodeSettings& settings,
                    std::vector<LayerTrace>* trace = nullptr);
// One row per class name.
ad::Var encode_class_texts(ad::Binder& binder, const DualEncoder& model, std::span<const TokenSeq> class_names,
                           const TokenSeq& template_tokens, const PromptBank& bank, const EncodeSettings& settings);
// logit_scale * image_embeddings * class_embeddings^T
ad::Var classify(ad::Var image_embeddings, ad::Var class_embeddings, double logit_scale);

// Settings for inference with the given mode, using the model's mask policy.
EncodeSettings image_settings(const DualEncoder& model, AttentionMode mode);
EncodeSettings text_settings(const DualEncoder& model, AttentionMode mode);

// Value-level encoders.
Tensor2D encode_image(const DualEncoder& model, const Tensor2D& patches, const PromptBank& bank,
                      AttentionMode mode);
Tensor2D encode_text(const DualEncoder& model, const TokenSeq& class_name, const TokenSeq& template_tokens,
                     const PromptBank& bank, AttentionMode mode);
// 1 x C scores for a 1 x E image embedding against C x E class embeddings.
Tensor2D classify(const Tensor2D& image_embedding, const Tensor2D& class_embeddings, double logit_scale);

// Index of the first maximum.
std::size_t argmax(std::span<const double> scores);

}  // namespace dpl
