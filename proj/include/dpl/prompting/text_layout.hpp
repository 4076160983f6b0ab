#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dpl/prompting/prompt_bank.hpp"

namespace dpl {

using TokenSeq = std::vector<std::string>;

inline constexpr std::string_view kClassSlot = "[CLS]";

// Whitespace tokenizer; '.' and ',' become tokens of their own.
TokenSeq tokenize(std::string_view text);

// Text encoder input: M learnable slots followed by the handcrafted template
// with the class name substituted, i.e. [P]_1 ... [P]_M [manual prompt].
struct TextInputLayout {
  std::size_t learnable_slots = 0;
  TokenSeq manual_prompt_tokens;
  // Index inside manual_prompt_tokens where the class name begins.
  std::size_t class_token_position = 0;
  std::size_t class_token_count = 0;

  // Full sequence; learnable slots are rendered as "[P1]", "[P2]", ...
  TokenSeq sequence() const;
  std::size_t total_length() const noexcept { return learnable_slots + manual_prompt_tokens.size(); }
};

// Throws Error(Template) unless the template holds exactly one [CLS] slot,
// and for an empty class name.
TextInputLayout assemble_text_input(const TokenSeq& class_name, const TokenSeq& template_tokens,
                                    const PromptBank& bank);

}  // namespace dpl
