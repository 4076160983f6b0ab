#include "dpl/prompting/text_layout.hpp"

#include <algorithm>
#include <cctype>

#include "dpl/error.hpp"

namespace dpl {

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '.' || c == ',') {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

TokenSeq TextInputLayout::sequence() const {
  TokenSeq seq;
  seq.reserve(total_length());
  for (std::size_t i = 0; i < learnable_slots; ++i) seq.push_back("[P" + std::to_string(i + 1) + "]");
  seq.insert(seq.end(), manual_prompt_tokens.begin(), manual_prompt_tokens.end());
  return seq;
}

TextInputLayout assemble_text_input(const TokenSeq& class_name, const TokenSeq& template_tokens,
                                    const PromptBank& bank) {
  const auto slots = std::count(template_tokens.begin(), template_tokens.end(), std::string(kClassSlot));
  if (slots != 1) {
    fail(ErrorKind::Template, "template must contain exactly one [CLS] slot, found " + std::to_string(slots));
  }
  if (class_name.empty()) fail(ErrorKind::Template, "class name is empty");
  TextInputLayout layout;
  layout.learnable_slots = bank.length();
  for (const auto& tok : template_tokens) {
    if (tok == kClassSlot) {
      layout.class_token_position = layout.manual_prompt_tokens.size();
      layout.class_token_count = class_name.size();
      layout.manual_prompt_tokens.insert(layout.manual_prompt_tokens.end(), class_name.begin(), class_name.end());
    } else {
      layout.manual_prompt_tokens.push_back(tok);
    }
  }
  return layout;
}

}  // namespace dpl
