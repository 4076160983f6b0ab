#include "dpl/toyvlm/dual_encoder.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "dpl/error.hpp"

namespace dpl {

void DualEncoderConfig::validate() const {
  visual.validate();
  text.validate();
  if (num_patches == 0 || patch_dim == 0 || embed_dim == 0 || text_context == 0) {
    fail(ErrorKind::Configuration, "dual encoder dimensions must be positive");
  }
  if (!(logit_scale > 0.0)) fail(ErrorKind::Configuration, "logit_scale must be positive");
}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  words.emplace_back(kEot);
  words.emplace_back(kPad);
  for (auto& w : words) {
    if (index_.contains(w)) continue;
    index_.emplace(w, words_.size());
    words_.push_back(std::move(w));
  }
}

bool Vocabulary::contains(std::string_view word) const { return index_.contains(std::string(word)); }

std::size_t Vocabulary::id(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) fail(ErrorKind::NotFound, "word '" + std::string(word) + "' is not in the vocabulary");
  return it->second;
}

DualEncoder DualEncoder::random(const DualEncoderConfig& config, Vocabulary vocab, RngStream& rng) {
  config.validate();
  const std::size_t dv = config.visual.model_dim;
  const std::size_t dt = config.text.model_dim;
  DualEncoder m{config, std::move(vocab), {}, {}, {}, {}};
  m.visual_stem.patch_proj = rng.normal_tensor(config.patch_dim, dv, 1.0 / std::sqrt(static_cast<double>(config.patch_dim)));
  m.visual_stem.cls_token = rng.normal_tensor(1, dv, 0.5);
  m.visual_stem.positions = rng.normal_tensor(config.num_patches + 1, dv, 0.1);
  m.visual = TransformerWeights::random(config.visual, config.embed_dim, rng);
  m.text_stem.token_embedding = rng.normal_tensor(m.vocab.size(), dt, 0.5);
  m.text_stem.positions = rng.normal_tensor(config.text_context, dt, 0.1);
  m.text = TransformerWeights::random(config.text, config.embed_dim, rng);
  return m;
}

void DualEncoder::visit_backbone(const std::function<void(std::string_view, Tensor2D&)>& fn) {
  fn("visual.patch_proj", visual_stem.patch_proj);
  fn("visual.cls_token", visual_stem.cls_token);
  fn("visual.positions", visual_stem.positions);
  visual.visit([&fn](std::string_view name, Tensor2D& t) { fn("visual." + std::string(name), t); });
  fn("text.token_embedding", text_stem.token_embedding);
  fn("text.positions", text_stem.positions);
  text.visit([&fn](std::string_view name, Tensor2D& t) { fn("text." + std::string(name), t); });
}

void DualEncoder::visit_backbone(const std::function<void(std::string_view, const Tensor2D&)>& fn) const {
  const_cast<DualEncoder*>(this)->visit_backbone(
      [&fn](std::string_view name, Tensor2D& t) { fn(name, static_cast<const Tensor2D&>(t)); });
}

std::uint64_t DualEncoder::backbone_checksum() const {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  visit_backbone([&hash](std::string_view, const Tensor2D& t) {
    for (double v : t.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        hash ^= (bits >> (8 * i)) & 0xFF;
        hash *= 0x100000001B3ULL;
      }
    }
  });
  return hash;
}

Tensor2D DualEncoder::embed_words(const TokenSeq& tokens) const {
  Tensor2D out(tokens.size(), text_stem.token_embedding.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto src = text_stem.token_embedding.row(vocab.id(tokens[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

ad::Var encode_image(ad::Binder& binder, const DualEncoder& model, const Tensor2D& patches,
                     const PromptBank& bank, const EncodeSettings& settings, std::vector<LayerTrace>* trace) {
  const auto& cfg = model.config;
  if (patches.rows() == 0) fail(ErrorKind::InvalidShape, "encode_image: no patches");
  if (patches.rows() != cfg.num_patches || patches.cols() != cfg.patch_dim) {
    fail(ErrorKind::InvalidShape, "encode_image: expected " + std::to_string(cfg.num_patches) + "x" +
                                      std::to_string(cfg.patch_dim) + " patches");
  }
  if (!bank.is_empty() && bank.dim() != cfg.visual.model_dim) {
    fail(ErrorKind::InvalidShape, "visual prompt width does not match the visual encoder");
  }
  const bool t = settings.backbone_trainable;
  ad::Tape& tape = binder.tape();
  const ad::Var tokens = ad::matmul(tape.constant(patches), binder.bind(model.visual_stem.patch_proj, t));
  const std::array<ad::Var, 2> parts{binder.bind(model.visual_stem.cls_token, t), tokens};
  const ad::Var x0 = ad::add(ad::concat_rows(parts), binder.bind(model.visual_stem.positions, t));
  const ad::Var out = run_transformer(binder, model.visual, x0, bank, settings, trace);
  return pool_and_project(binder, model.visual, out, 0, t);
}

ad::Var encode_text(ad::Binder& binder, const DualEncoder& model, const TextInputLayout& layout,
                    const PromptBank& bank, const EncodeSettings& settings, std::vector<LayerTrace>* trace) {
  const auto& cfg = model.config;
  if (layout.learnable_slots != bank.length()) {
    fail(ErrorKind::InvalidShape, "text layout slot count does not match the prompt bank");
  }
  if (!bank.is_empty() && bank.dim() != cfg.text.model_dim) {
    fail(ErrorKind::InvalidShape, "textual prompt width does not match the text encoder");
  }
  std::vector<std::size_t> ids;
  for (const auto& tok : layout.manual_prompt_tokens) ids.push_back(model.vocab.id(tok));
  const std::size_t eot_index = ids.size();
  ids.push_back(model.vocab.id(Vocabulary::kEot));
  if (ids.size() > cfg.text_context) {
    fail(ErrorKind::InvalidShape, "text of " + std::to_string(ids.size()) + " tokens exceeds context " +
                                      std::to_string(cfg.text_context));
  }
  while (ids.size() < cfg.text_context) ids.push_back(model.vocab.id(Vocabulary::kPad));

  const bool t = settings.backbone_trainable;
  const ad::Var x0 = ad::add(ad::gather_rows(binder.bind(model.text_stem.token_embedding, t), ids),
                             binder.bind(model.text_stem.positions, t));
  const ad::Var out = run_transformer(binder, model.text, x0, bank, settings, trace);
  return pool_and_project(binder, model.text, out, eot_index, t);
}

ad::Var encode_class_texts(ad::Binder& binder, const DualEncoder& model, std::span<const TokenSeq> class_names,
                           const TokenSeq& template_tokens, const PromptBank& bank,
                           const EncodeSettings& settings) {
  std::vector<ad::Var> rows;
  rows.reserve(class_names.size());
  for (const auto& name : class_names) {
    rows.push_back(encode_text(binder, model, assemble_text_input(name, template_tokens, bank), bank, settings));
  }
  return ad::concat_rows(rows);
}

ad::Var classify(ad::Var image_embeddings, ad::Var class_embeddings, double logit_scale) {
  return ad::scale(ad::matmul_nt(image_embeddings, class_embeddings), logit_scale);
}

EncodeSettings image_settings(const DualEncoder& model, AttentionMode mode) {
  EncodeSettings s;
  s.mode = mode;
  s.mask = model.config.visual.mask;
  s.placement = PromptPlacement::AfterInstances;
  return s;
}

EncodeSettings text_settings(const DualEncoder& model, AttentionMode mode) {
  EncodeSettings s;
  s.mode = mode;
  s.mask = model.config.text.mask;
  s.placement = PromptPlacement::BeforeInstances;
  return s;
}

Tensor2D encode_image(const DualEncoder& model, const Tensor2D& patches, const PromptBank& bank,
                      AttentionMode mode) {
  ad::Tape tape;
  ad::Binder binder(tape);
  return encode_image(binder, model, patches, bank, image_settings(model, mode)).value();
}

Tensor2D encode_text(const DualEncoder& model, const TokenSeq& class_name, const TokenSeq& template_tokens,
                     const PromptBank& bank, AttentionMode mode) {
  ad::Tape tape;
  ad::Binder binder(tape);
  const TextInputLayout layout = assemble_text_input(class_name, template_tokens, bank);
  return encode_text(binder, model, layout, bank, text_settings(model, mode)).value();
}

Tensor2D classify(const Tensor2D& image_embedding, const Tensor2D& class_embeddings, double logit_scale) {
  return scale(matmul_nt(image_embedding, class_embeddings), logit_scale);
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::InvalidShape, "argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace dpl
