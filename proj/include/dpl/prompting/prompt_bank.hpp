#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dpl/numerics/autodiff.hpp"
#include "dpl/numerics/rng.hpp"
#include "dpl/numerics/tensor.hpp"

namespace dpl {

enum class Modality : std::uint8_t { Visual = 0, Textual = 1 };

// What happens to prompt outputs after the last layer that receives fresh
// prompts. Layers 1..depth always take fresh prompts from the bank.
enum class FlowPolicy : std::uint8_t { Discard = 0, Propagate = 1 };

std::string_view to_string(Modality m) noexcept;
std::string_view to_string(FlowPolicy f) noexcept;
Modality parse_modality(std::string_view name);
FlowPolicy parse_flow_policy(std::string_view name);

struct InitScheme {
  // Standard deviation of the normal draw used for textual prompts.
  double text_std = 0.02;
  // Embedded tokens of the initialisation phrase. When set, its rows are
  // copied into the first rows of textual layer 1 (as many as fit).
  std::optional<Tensor2D> textual_first_layer;
};

struct BankSpec {
  Modality modality = Modality::Visual;
  std::size_t depth = 1;
  std::size_t length = 1;
  std::size_t dim = 1;
  std::size_t encoder_layers = 1;
  FlowPolicy flow = FlowPolicy::Discard;
};

class PromptBank {
 public:
  // One m x dim matrix per prompted layer. length() == 0 is an empty bank.
  PromptBank(Modality modality, FlowPolicy flow, std::size_t dim, std::vector<Tensor2D> prompts);

  static PromptBank empty(Modality modality, std::size_t dim, FlowPolicy flow = FlowPolicy::Discard);

  Modality modality() const noexcept { return modality_; }
  FlowPolicy flow_policy() const noexcept { return flow_; }
  void set_flow_policy(FlowPolicy f) noexcept { flow_ = f; }
  std::size_t depth() const noexcept { return prompts_.size(); }
  std::size_t length() const noexcept { return length_; }
  std::size_t dim() const noexcept { return dim_; }
  bool is_empty() const noexcept { return length_ == 0 || prompts_.empty(); }
  std::size_t parameter_count() const noexcept { return depth() * length_ * dim_; }

  // layer_index is 1-based, 1 <= layer_index <= depth().
  const Tensor2D& layer(std::size_t layer_index) const;
  Tensor2D& layer(std::size_t layer_index);
  std::span<const Tensor2D> layers() const noexcept { return prompts_; }
  std::span<Tensor2D> layers() noexcept { return prompts_; }

  bool operator==(const PromptBank&) const = default;

 private:
  Modality modality_;
  FlowPolicy flow_;
  std::size_t length_ = 0;
  std::size_t dim_ = 0;
  std::vector<Tensor2D> prompts_;
};

// Visual layers: Xavier-uniform over each m x dim matrix,
// bound sqrt(6 / (m + dim)). Textual layers: normal(0, text_std), with
// layer 1 seeded from the initialisation phrase when provided.
// Throws Error(Configuration) for depth == 0 or depth > encoder_layers.
PromptBank build_bank(const BankSpec& spec, const InitScheme& init, RngStream& rng);

std::size_t count_parameters(std::span<const PromptBank> banks) noexcept;
std::size_t count_parameters(std::span<const BankSpec> specs) noexcept;
// Thousands as the prompt-learning literature reports them (count / 1024).
double to_kilo(std::size_t count) noexcept;

struct InsertedTokens {
  Tensor2D x;
  Tensor2D p;  // zero rows when the layer runs prompt-free
};

// Value-level insertion for 1-based layer_index. Fresh prompts replace any
// carried prompt outputs for layers 1..depth. Past depth, Propagate uses
// carried_prompts (Error(State) if absent) and Discard yields no prompts.
InsertedTokens insert_prompts(std::size_t layer_index, const Tensor2D& instance_tokens,
                              const std::optional<Tensor2D>& carried_prompts, const PromptBank& bank);

// Tape-level counterpart: returns the prompt Var for the layer (invalid when
// the layer runs prompt-free). Bank matrices are bound through the binder.
ad::Var insert_prompts(std::size_t layer_index, ad::Var carried_prompts, const PromptBank& bank,
                       ad::Binder& binder, bool trainable);

// Binary bank file, all integers little-endian:
//   8 bytes  magic "DPLPBNK1"
//   u32      format version (1)
//   u8       modality (0 visual, 1 textual)
//   u8       flow policy (0 discard, 1 propagate)
//   u16      reserved, 0
//   u64      depth, u64 length, u64 dim
//   u64      FNV-1a 64 checksum of the payload bytes
//   payload  depth*length*dim IEEE-754 doubles (little-endian bit patterns),
//            layer-major then row-major
void write_bank(std::ostream& out, const PromptBank& bank);
// Throws Error(Format) on a bad header, truncation, or checksum mismatch.
PromptBank read_bank(std::istream& in);
void save_bank(const std::filesystem::path& path, const PromptBank& bank);
// Throws Error(NotFound) if the file does not exist.
PromptBank load_bank(const std::filesystem::path& path);

}  // namespace dpl
