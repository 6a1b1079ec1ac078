#include "faithmt/prompt.hpp"

namespace faithmt {

void PromptLayout::validate() const {
  if (source.empty()) throw ConfigError("source span is empty");
  if (!(instruction.begin <= instruction.end && instruction.end <= source.begin &&
        source.end <= response_start)) {
    throw ConfigError("prompt spans must be ordered instruction < source < response");
  }
  if (instruction.begin < 0) throw ConfigError("negative span index");
}

Prompt build_prompt(std::span<const int> source_tokens, Direction direction, int max_seq_len) {
  if (source_tokens.empty()) throw EmptyInputError("source must be nonempty");
  const int n = static_cast<int>(source_tokens.size());
  if (n + kPromptOverhead > max_seq_len) {
    throw LengthError("prompt length " + std::to_string(n + kPromptOverhead) +
                      " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  Prompt p;
  p.tokens.reserve(n + kPromptOverhead);
  p.tokens.push_back(special::kBos);
  p.tokens.push_back(special::kInst);
  p.tokens.push_back(direction == Direction::forward ? special::kDirForward
                                                     : special::kDirReverse);
  p.tokens.push_back(special::kSrcOpen);
  p.tokens.insert(p.tokens.end(), source_tokens.begin(), source_tokens.end());
  p.tokens.push_back(special::kSrcClose);
  p.tokens.push_back(special::kResp);

  p.layout.instruction = {1, 3};
  p.layout.source = {4, 4 + n};
  p.layout.response_start = n + kPromptOverhead;
  p.layout.validate();
  return p;
}

}  // namespace faithmt
