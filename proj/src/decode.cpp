#include "faithmt/decode.hpp"

#include <cmath>

namespace faithmt {

void AlignmentSpec::validate() const {
  if (strategy != AnchorStrategy::global && window_radius < 1) {
    throw ConfigError("window radius must be >= 1 for windowed strategies");
  }
  if (scale < 0) throw ConfigError("alignment scale must be nonnegative");
}

void DecodeConfig::validate() const {
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (mmi_alpha < 0) throw ConfigError("mmi alpha must be nonnegative");
  if (strategy == Strategy::reweight) alignment.validate();
}

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

namespace {

Vector last_row_logits(const Parameters& params, std::span<const int> ctx,
                       const AttentionReweight* rw = nullptr) {
  const ForwardResult res = forward(params, ctx, false, rw);
  return res.logits.row(res.logits.rows() - 1).transpose();
}

}  // namespace

std::vector<int> greedy_decode_steps(const StepLogits& step, std::span<const int> prompt,
                                     const DecodeConfig& config) {
  config.validate();
  std::vector<int> ctx(prompt.begin(), prompt.end());
  std::vector<int> out;
  while (static_cast<int>(out.size()) < config.max_new_tokens) {
    const int next = argmax_lowest_id(step(ctx));
    if (next == config.eos_id) break;
    out.push_back(next);
    ctx.push_back(next);
  }
  return out;
}

std::vector<int> greedy_decode(const Parameters& params, const Prompt& prompt,
                               const DecodeConfig& config) {
  config.validate();
  std::vector<int> ctx = prompt.tokens;
  std::vector<int> out;
  while (static_cast<int>(out.size()) < config.max_new_tokens) {
    const int next = argmax_lowest_id(last_row_logits(params, ctx));
    if (next == config.eos_id) break;
    out.push_back(next);
    if (static_cast<int>(ctx.size()) >= params.config.max_seq_len) break;
    ctx.push_back(next);
  }
  return out;
}

Vector mmi_scores(const Vector& cond_logprobs, const Vector& uncond_logprobs, double alpha) {
  if (cond_logprobs.size() != uncond_logprobs.size()) {
    throw ShapeError("mmi score vectors must have equal length");
  }
  if (!cond_logprobs.allFinite() || !uncond_logprobs.allFinite()) {
    throw NumericError("mmi inputs must be finite");
  }
  return cond_logprobs - alpha * uncond_logprobs;
}

std::vector<int> contrastive_decode_steps(const StepLogits& cond, const StepLogits& uncond,
                                          std::span<const int> cond_prompt,
                                          std::span<const int> uncond_prompt, double alpha,
                                          const DecodeConfig& config) {
  config.validate();
  if (alpha < 0) throw ConfigError("mmi alpha must be nonnegative");
  std::vector<int> full(cond_prompt.begin(), cond_prompt.end());
  std::vector<int> bare(uncond_prompt.begin(), uncond_prompt.end());
  std::vector<int> out;
  while (static_cast<int>(out.size()) < config.max_new_tokens) {
    const Vector scores =
        mmi_scores(log_softmax(cond(full)), log_softmax(uncond(bare)), alpha);
    const int next = argmax_lowest_id(scores);
    if (next == config.eos_id) break;
    out.push_back(next);
    full.push_back(next);
    bare.push_back(next);
  }
  return out;
}

std::vector<int> contrastive_decode(const Parameters& params, const Prompt& prompt, double alpha,
                                    const DecodeConfig& config) {
  config.validate();
  if (alpha < 0) throw ConfigError("mmi alpha must be nonnegative");
  // Unconditional context: the same instruction template with the source
  // span deleted; the generated prefix is kept in both contexts.
  std::vector<int> full = prompt.tokens;
  std::vector<int> bare;
  bare.reserve(full.size() - prompt.layout.source.size());
  for (int i = 0; i < static_cast<int>(full.size()); ++i) {
    if (!prompt.layout.source.contains(i)) bare.push_back(full[i]);
  }
  std::vector<int> out;
  while (static_cast<int>(out.size()) < config.max_new_tokens) {
    const Vector cond = log_softmax(last_row_logits(params, full));
    const Vector uncd = log_softmax(last_row_logits(params, bare));
    const int next = argmax_lowest_id(mmi_scores(cond, uncd, alpha));
    if (next == config.eos_id) break;
    out.push_back(next);
    if (static_cast<int>(full.size()) >= params.config.max_seq_len) break;
    full.push_back(next);
    bare.push_back(next);
  }
  return out;
}

int align_anchor(const AlignmentSpec& spec, int step, const Matrix* prev_contributions,
                 const PromptLayout& layout) {
  layout.validate();
  if (step < 1) throw ConfigError("response steps are 1-based");
  const IndexRange src = layout.source;
  const auto monotonic = [&] {
    return src.begin + std::min(step - 1, src.size() - 1);
  };
  switch (spec.strategy) {
    case AnchorStrategy::global:
      return kGlobalAnchor;
    case AnchorStrategy::monotonic:
      return monotonic();
    case AnchorStrategy::contribution_guided: {
      if (step == 1 || prev_contributions == nullptr) return monotonic();
      const Matrix& c = *prev_contributions;
      if (c.cols() < src.end) throw ShapeError("contribution matrix smaller than source span");
      const int row = static_cast<int>(c.rows()) - 1;
      int best = src.begin;
      for (int i = src.begin + 1; i < src.end; ++i) {
        if (c(row, i) > c(row, best)) best = i;
      }
      return best;
    }
  }
  throw ConfigError("unknown anchor strategy");
}

Vector alignment_weights(int anchor, const AlignmentSpec& spec, const PromptLayout& layout,
                         int key_len) {
  layout.validate();
  if (key_len < layout.source.end) throw ShapeError("key length smaller than source span");
  Vector w = Vector::Zero(key_len);
  if (spec.scale == 0.0) return w;
  if (anchor == kGlobalAnchor) {
    for (int s = layout.source.begin; s < layout.source.end; ++s) w[s] = spec.scale;
    return w;
  }
  if (!layout.source.contains(anchor)) {
    throw ShapeError("anchor position outside source span");
  }
  const double sigma = spec.sigma();
  const int lo = std::max(anchor - spec.window_radius, layout.source.begin);
  const int hi = std::min(anchor + spec.window_radius, layout.source.end - 1);
  for (int s = lo; s <= hi; ++s) {
    const double d = s - anchor;
    w[s] = spec.scale * std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  return w;
}

namespace {

AttentionReweight build_reweight(const std::vector<std::pair<int, Vector>>& steps, int seq_len,
                                 const std::vector<int>& layers) {
  AttentionReweight rw;
  rw.rows = Matrix::Zero(seq_len, seq_len);
  rw.layers = layers;
  for (const auto& [row, w] : steps) {
    rw.rows.row(row).head(w.size()) = w.transpose();
  }
  return rw;
}

}  // namespace

ReweightDecodeResult reweight_decode(const Parameters& params, const Prompt& prompt,
                                     const AlignmentSpec& spec, const DecodeConfig& config) {
  config.validate();
  spec.validate();
  const PromptLayout& layout = prompt.layout;
  std::vector<int> ctx = prompt.tokens;
  std::vector<int> out;
  std::vector<std::pair<int, Vector>> step_weights;
  const bool guided = spec.strategy == AnchorStrategy::contribution_guided;
  std::optional<Matrix> prev_c;

  while (static_cast<int>(out.size()) < config.max_new_tokens) {
    const int t = static_cast<int>(out.size()) + 1;
    const int anchor = align_anchor(spec, t, prev_c ? &*prev_c : nullptr, layout);
    const int cur = static_cast<int>(ctx.size()) - 1;
    step_weights.emplace_back(cur, alignment_weights(anchor, spec, layout,
                                                     static_cast<int>(ctx.size())));
    const AttentionReweight rw =
        build_reweight(step_weights, static_cast<int>(ctx.size()), spec.layers);
    const ForwardResult res = forward(params, ctx, guided, &rw);
    if (guided) {
      prev_c = contribution_matrix(params, *res.trace, layout).values;
    }
    const int next = argmax_lowest_id(res.logits.row(res.logits.rows() - 1).transpose());
    if (next == config.eos_id) break;
    out.push_back(next);
    if (static_cast<int>(ctx.size()) >= params.config.max_seq_len) break;
    ctx.push_back(next);
  }

  ReweightDecodeResult result;
  result.tokens = out;
  const int final_len = static_cast<int>(prompt.tokens.size() + out.size());
  result.replay = build_reweight(step_weights, final_len, spec.layers);
  return result;
}

}  // namespace faithmt
