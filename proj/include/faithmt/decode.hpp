#pragma once

#include <functional>
#include <span>
#include <vector>

#include "faithmt/attribution.hpp"
#include "faithmt/model.hpp"
#include "faithmt/prompt.hpp"

namespace faithmt {

enum class AnchorStrategy { monotonic, contribution_guided, global };

struct AlignmentSpec {
  AnchorStrategy strategy = AnchorStrategy::monotonic;
  int window_radius = 9;  // D
  double scale = 0.5;     // omega
  // Layers whose attention is reweighted; empty means all (ablation knob).
  std::vector<int> layers;

  double sigma() const { return window_radius / 2.0; }
  void validate() const;
};

struct DecodeConfig {
  enum class Strategy { greedy, contrastive, reweight };
  Strategy strategy = Strategy::greedy;
  double mmi_alpha = 0.5;
  AlignmentSpec alignment;
  int max_new_tokens = 32;
  int eos_id = special::kEos;

  void validate() const;
};

// Anchor value meaning "the whole source span" (global strategy).
inline constexpr int kGlobalAnchor = -1;

// Next-token logits for a context; lets tests drive the decode loops with
// hand-set logit tables.
using StepLogits = std::function<Vector(std::span<const int>)>;

Vector log_softmax(const Vector& logits);

std::vector<int> greedy_decode(const Parameters& params, const Prompt& prompt,
                               const DecodeConfig& config);
std::vector<int> greedy_decode_steps(const StepLogits& step, std::span<const int> prompt,
                                     const DecodeConfig& config);

// score = cond - alpha * uncond, elementwise over the vocabulary.
Vector mmi_scores(const Vector& cond_logprobs, const Vector& uncond_logprobs, double alpha);

std::vector<int> contrastive_decode(const Parameters& params, const Prompt& prompt, double alpha,
                                    const DecodeConfig& config);
std::vector<int> contrastive_decode_steps(const StepLogits& cond, const StepLogits& uncond,
                                          std::span<const int> cond_prompt,
                                          std::span<const int> uncond_prompt, double alpha,
                                          const DecodeConfig& config);

// Aligned source position p_t for response step t (1-based). For
// contribution_guided, prev_contributions is the previous step's aggregated
// matrix (its last row attributes the token generated at t-1); when absent
// the anchor falls back to the monotonic rule.
int align_anchor(const AlignmentSpec& spec, int step, const Matrix* prev_contributions,
                 const PromptLayout& layout);

// Gaussian bump of radius D and scale omega centered at the anchor,
// restricted to the source span; zero elsewhere. Global anchor puts omega on
// the whole span.
Vector alignment_weights(int anchor, const AlignmentSpec& spec, const PromptLayout& layout,
                         int key_len);

struct ReweightDecodeResult {
  std::vector<int> tokens;
  // Per-step score weights sized to the final sequence, for replaying the
  // decode-time attention in a traced forward.
  AttentionReweight replay;
};

ReweightDecodeResult reweight_decode(const Parameters& params, const Prompt& prompt,
                                     const AlignmentSpec& spec, const DecodeConfig& config);

}  // namespace faithmt
