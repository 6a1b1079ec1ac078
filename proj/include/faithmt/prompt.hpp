#pragma once

#include <span>
#include <vector>

#include "faithmt/common.hpp"

namespace faithmt {

// Reserved token ids; the corpus vocabulary starts right after them.
namespace special {
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kInst = 2;
inline constexpr int kSrcOpen = 3;
inline constexpr int kSrcClose = 4;
inline constexpr int kResp = 5;
inline constexpr int kMask = 6;
inline constexpr int kDirForward = 7;
inline constexpr int kDirReverse = 8;
inline constexpr int kCount = 9;
}  // namespace special

// Template overhead of build_prompt: BOS INST dir SRC_OPEN ... SRC_CLOSE RESP.
inline constexpr int kPromptOverhead = 6;

enum class Direction { forward, reverse };

struct PromptLayout {
  IndexRange instruction;
  IndexRange source;
  int response_start = 0;

  void validate() const;
};

struct Prompt {
  std::vector<int> tokens;
  PromptLayout layout;
};

Prompt build_prompt(std::span<const int> source_tokens, Direction direction, int max_seq_len);

}  // namespace faithmt
