#include "dpl/prompting/prompt_bank.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dpl/error.hpp"

namespace dpl {

std::string_view to_string(Modality m) noexcept {
  return m == Modality::Visual ? "visual" : "textual";
}

std::string_view to_string(FlowPolicy f) noexcept {
  return f == FlowPolicy::Discard ? "discard" : "propagate";
}

Modality parse_modality(std::string_view name) {
  if (name == "visual") return Modality::Visual;
  if (name == "textual") return Modality::Textual;
  fail(ErrorKind::Configuration, "unknown modality '" + std::string(name) + "'");
}

FlowPolicy parse_flow_policy(std::string_view name) {
  if (name == "discard") return FlowPolicy::Discard;
  if (name == "propagate") return FlowPolicy::Propagate;
  fail(ErrorKind::Configuration, "unknown flow policy '" + std::string(name) + "'");
}

PromptBank::PromptBank(Modality modality, FlowPolicy flow, std::size_t dim, std::vector<Tensor2D> prompts)
    : modality_(modality), flow_(flow), dim_(dim), prompts_(std::move(prompts)) {
  length_ = prompts_.empty() ? 0 : prompts_.front().rows();
  for (const auto& p : prompts_) {
    if (p.rows() != length_ || p.cols() != dim_) {
      fail(ErrorKind::InvalidShape, "prompt bank layers must all be " + std::to_string(length_) + "x" +
                                        std::to_string(dim_));
    }
  }
}

PromptBank PromptBank::empty(Modality modality, std::size_t dim, FlowPolicy flow) {
  return PromptBank(modality, flow, dim, {});
}

const Tensor2D& PromptBank::layer(std::size_t layer_index) const {
  if (layer_index == 0 || layer_index > prompts_.size()) {
    fail(ErrorKind::InvalidShape, "prompt layer " + std::to_string(layer_index) + " out of range");
  }
  return prompts_[layer_index - 1];
}

Tensor2D& PromptBank::layer(std::size_t layer_index) {
  return const_cast<Tensor2D&>(std::as_const(*this).layer(layer_index));
}

PromptBank build_bank(const BankSpec& spec, const InitScheme& init, RngStream& rng) {
  if (spec.depth == 0) fail(ErrorKind::Configuration, "prompt depth must be at least 1");
  if (spec.depth > spec.encoder_layers) {
    fail(ErrorKind::Configuration, "prompt depth " + std::to_string(spec.depth) + " exceeds encoder layers " +
                                       std::to_string(spec.encoder_layers));
  }
  if (spec.dim == 0) fail(ErrorKind::Configuration, "prompt dim must be positive");
  if (spec.length == 0) return PromptBank::empty(spec.modality, spec.dim, spec.flow);

  std::vector<Tensor2D> layers;
  layers.reserve(spec.depth);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    if (spec.modality == Modality::Visual) {
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.length + spec.dim));
      layers.push_back(rng.uniform_tensor(spec.length, spec.dim, -bound, bound));
    } else {
      layers.push_back(rng.normal_tensor(spec.length, spec.dim, init.text_std));
    }
  }
  if (spec.modality == Modality::Textual && init.textual_first_layer) {
    const Tensor2D& phrase = *init.textual_first_layer;
    if (phrase.cols() != spec.dim) fail(ErrorKind::InvalidShape, "init phrase width does not match prompt dim");
    const std::size_t rows = std::min(phrase.rows(), spec.length);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(phrase.row(r).begin(), phrase.row(r).end(), layers.front().row(r).begin());
    }
  }
  return PromptBank(spec.modality, spec.flow, spec.dim, std::move(layers));
}

std::size_t count_parameters(std::span<const PromptBank> banks) noexcept {
  std::size_t total = 0;
  for (const auto& b : banks) total += b.parameter_count();
  return total;
}

std::size_t count_parameters(std::span<const BankSpec> specs) noexcept {
  std::size_t total = 0;
  for (const auto& s : specs) total += s.depth * s.length * s.dim;
  return total;
}

double to_kilo(std::size_t count) noexcept { return static_cast<double>(count) / 1024.0; }

InsertedTokens insert_prompts(std::size_t layer_index, const Tensor2D& instance_tokens,
                              const std::optional<Tensor2D>& carried_prompts, const PromptBank& bank) {
  if (layer_index == 0) fail(ErrorKind::Configuration, "layer_index is 1-based");
  InsertedTokens out{instance_tokens, Tensor2D(0, instance_tokens.cols())};
  if (bank.is_empty()) return out;
  if (layer_index <= bank.depth()) {
    out.p = bank.layer(layer_index);
  } else if (bank.flow_policy() == FlowPolicy::Propagate) {
    if (!carried_prompts) {
      fail(ErrorKind::State, "layer " + std::to_string(layer_index) + " propagates prompts but none were carried");
    }
    out.p = *carried_prompts;
  }
  return out;
}

ad::Var insert_prompts(std::size_t layer_index, ad::Var carried_prompts, const PromptBank& bank,
                       ad::Binder& binder, bool trainable) {
  if (layer_index == 0) fail(ErrorKind::Configuration, "layer_index is 1-based");
  if (bank.is_empty()) return {};
  if (layer_index <= bank.depth()) return binder.bind(bank.layer(layer_index), trainable);
  if (bank.flow_policy() == FlowPolicy::Discard) return {};
  if (!carried_prompts.valid()) {
    fail(ErrorKind::State, "layer " + std::to_string(layer_index) + " propagates prompts but none were carried");
  }
  return carried_prompts;
}

namespace {

constexpr char kMagic[8] = {'D', 'P', 'L', 'P', 'B', 'N', 'K', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) fail(ErrorKind::Format, "prompt bank file truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

std::uint64_t fnv1a(std::uint64_t hash, std::uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    hash ^= (word >> (8 * i)) & 0xFF;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

std::uint64_t payload_checksum(const PromptBank& bank) {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (const auto& layer : bank.layers()) {
    for (double v : layer.values()) hash = fnv1a(hash, std::bit_cast<std::uint64_t>(v));
  }
  return hash;
}

}  // namespace

void write_bank(std::ostream& out, const PromptBank& bank) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(bank.modality()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(bank.flow_policy()));
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint64_t>(out, bank.depth());
  put_le<std::uint64_t>(out, bank.length());
  put_le<std::uint64_t>(out, bank.dim());
  put_le<std::uint64_t>(out, payload_checksum(bank));
  for (const auto& layer : bank.layers()) {
    for (double v : layer.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) fail(ErrorKind::Format, "failed writing prompt bank");
}

PromptBank read_bank(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::Format, "not a prompt bank file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kFormatVersion) fail(ErrorKind::Format, "unsupported prompt bank version " + std::to_string(version));
  const auto modality = get_le<std::uint8_t>(in);
  const auto flow = get_le<std::uint8_t>(in);
  get_le<std::uint16_t>(in);
  if (modality > 1 || flow > 1) fail(ErrorKind::Format, "prompt bank header has invalid enum values");
  const auto depth = get_le<std::uint64_t>(in);
  const auto length = get_le<std::uint64_t>(in);
  const auto dim = get_le<std::uint64_t>(in);
  const auto checksum = get_le<std::uint64_t>(in);
  if (depth > (1u << 20) || length > (1u << 20) || dim > (1u << 20)) {
    fail(ErrorKind::Format, "prompt bank header dimensions implausible");
  }
  std::vector<Tensor2D> layers;
  if (length > 0) {
    for (std::uint64_t l = 0; l < depth; ++l) {
      Tensor2D t(length, dim);
      for (double& v : t.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
      layers.push_back(std::move(t));
    }
  }
  PromptBank bank(static_cast<Modality>(modality), static_cast<FlowPolicy>(flow), dim, std::move(layers));
  if (payload_checksum(bank) != checksum) fail(ErrorKind::Format, "prompt bank checksum mismatch");
  return bank;
}

void save_bank(const std::filesystem::path& path, const PromptBank& bank) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::NotFound, "cannot open " + path.string() + " for writing");
  write_bank(out, bank);
}

PromptBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::NotFound, "prompt bank file not found: " + path.string());
  return read_bank(in);
}

}  // namespace dpl
