#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "faithmt/common.hpp"

namespace faithmt {

// Standard deviation inside layer norm uses sqrt(var + kLayerNormEps); the
// traced sigma includes it, which keeps the attention-block decomposition
// exact.
inline constexpr double kLayerNormEps = 1e-6;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 1;
  int d_ff = 0;
  int n_layers = 1;
  int max_seq_len = 0;
  uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

struct LayerParams {
  // Head h occupies columns [h*head_dim, (h+1)*head_dim) of w_q/w_k/w_v and
  // rows of the same range in w_o.
  Matrix w_q, w_k, w_v, w_o;  // d_model x d_model
  Vector b_o;                 // d_model
  Vector ln1_gamma, ln1_beta; // attention-block layer norm
  Matrix w_ff1;               // d_model x d_ff
  Vector b_ff1;               // d_ff
  Matrix w_ff2;               // d_ff x d_model
  Vector b_ff2;               // d_model
  Vector ln2_gamma, ln2_beta; // FFN-block layer norm
};

struct Parameters {
  ModelConfig config;
  Matrix tok_emb;  // vocab_size x d_model
  Matrix pos_emb;  // max_seq_len x d_model
  std::vector<LayerParams> layers;
  Matrix w_out;    // d_model x vocab_size
};

// Same shapes as Parameters, entries hold d(loss)/d(param).
using Gradients = Parameters;

Parameters init_parameters(const ModelConfig& config, uint64_t seed);
Gradients zero_like(const Parameters& params);

// Raw storage of every parameter tensor in a fixed order (embeddings, layers,
// output projection); used by optimizers and finite-difference probes.
std::vector<std::pair<double*, size_t>> tensor_spans(Parameters& params);
std::vector<std::pair<const double*, size_t>> tensor_spans(const Parameters& params);
size_t parameter_count(const Parameters& params);
double* parameter_coord(Parameters& params, size_t index);

// Attention-block internals of one traced forward pass.
struct LayerTrace {
  Matrix input;                   // T x d, block input x_j
  std::vector<Matrix> attention;  // per head, T x T row-stochastic, zero above diagonal
  Matrix mha_output;              // T x d, multi-head output including b_o
  Matrix pre_ln;                  // T x d, u_i = mha_output_i + input_i
  Vector ln_sigma;                // T, sigma(u_i)
  Matrix output;                  // T x d, y_i = LN(u_i)
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Matrix logits;  // T x vocab
};

// Extra multiplicative weights on pre-softmax attention scores: score(i,j)
// becomes score(i,j) * (1 + rows(i,j)). Rows not touched by decoding stay
// zero. `layers` empty means all layers.
struct AttentionReweight {
  Matrix rows;
  std::vector<int> layers;

  bool applies_to(int layer) const;
};

struct ForwardResult {
  Matrix logits;  // T x vocab
  std::optional<ForwardTrace> trace;
};

ForwardResult forward(const Parameters& params, std::span<const int> tokens,
                      bool capture_trace = false,
                      const AttentionReweight* reweight = nullptr);

double nll_loss(const Matrix& logits, std::span<const int> targets,
                std::span<const uint8_t> response_mask);

struct TrainExample {
  std::vector<int> tokens;
  std::vector<int> targets;            // targets[i] supervises position i
  std::vector<uint8_t> response_mask;  // 1 where the loss is computed
  // Pre-drawn masked variant of `tokens` for the target-constrained pass;
  // when absent the loss draws one from its rng.
  std::optional<std::vector<int>> masked_tokens;
};

struct LossSpec {
  enum class Kind { vanilla, target_constrained };
  Kind kind = Kind::vanilla;
  double mask_beta = 0.0;   // target-constrained mask probability
  double kl_lambda = 0.0;   // KL coefficient
  double dropout = 0.0;     // FFN-activation dropout rate (training only)
  int mask_token = -1;

  static LossSpec vanilla() { return {}; }
  static LossSpec target_constrained(double beta, double lambda, int mask_token) {
    LossSpec s;
    s.kind = Kind::target_constrained;
    s.mask_beta = beta;
    s.kl_lambda = lambda;
    s.mask_token = mask_token;
    return s;
  }
};

struct LossBreakdown {
  double total = 0;
  double nll = 0;
  double kl = 0;
};

struct GradResult {
  LossBreakdown loss;
  Gradients grads;
};

// Mean loss over the batch and exact reverse-mode gradients of it.
GradResult gradients(const Parameters& params, std::span<const TrainExample> batch,
                     const LossSpec& spec, Rng& rng);
// Same loss without the backward pass (finite-difference oracle path).
LossBreakdown loss_value(const Parameters& params, std::span<const TrainExample> batch,
                         const LossSpec& spec, Rng& rng);

double grad_norm(const Gradients& grads);

}  // namespace faithmt
