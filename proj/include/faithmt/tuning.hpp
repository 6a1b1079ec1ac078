#pragma once

#include <functional>

#include "faithmt/corpus.hpp"
#include "faithmt/decode.hpp"
#include "faithmt/model.hpp"

namespace faithmt {

struct TuningConfig {
  double beta = 0.15;    // target-token mask probability
  double lambda = 0.5;   // KL coefficient
  double learning_rate = 1e-3;
  int epochs = 3;
  int batch_size = 32;
  enum class Optimizer { sgd, adam } optimizer = Optimizer::adam;
  // linear decays the step size to zero over the whole run
  enum class Schedule { constant, linear } lr_schedule = Schedule::constant;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double dropout = 0.0;
  uint64_t seed = 0;
  int dev_bleu_cap = 128;  // dev examples decoded for the per-epoch BLEU
  int mask_token = special::kMask;

  void validate() const;
};

enum class TrainMode { vanilla, target_constrained };

// Each response token is independently replaced by mask_id with probability
// beta. Callers pass only the response region; prompt tokens never reach
// this function.
std::vector<int> mask_targets(std::span<const int> response, double beta, Rng& rng, int mask_id);

// 0.5 * (KL(Pf||Pc) + KL(Pc||Pf)) averaged over masked-in positions. Inputs
// are per-position logits (log-probabilities work unchanged); everything is
// computed in log space so zero probabilities never form ratios.
double bidirectional_kl(const Matrix& logits_f, const Matrix& logits_c,
                        std::span<const uint8_t> mask);

struct TargetConstrainedLoss {
  double total = 0;
  double nll = 0;
  double kl = 0;
  Matrix probs_full;    // per-position prediction distribution, full pass
  Matrix probs_masked;  // same for the masked-prefix pass
};

TargetConstrainedLoss target_constrained_loss(const Parameters& params, const TrainExample& ex,
                                              double beta, double lambda, Rng& rng);

// Training sequence [prompt, (opener,) target, EOS] with next-token targets
// and a response-only loss mask.
TrainExample make_train_example(const Example& example, const Vocab& vocab, int max_seq_len,
                                bool bait_exposure);

struct TrainStepLog {
  int step = 0;
  int epoch = 0;
  double loss_total = 0;
  double loss_nll = 0;
  double loss_kl = 0;
  double grad_norm = 0;
};

struct TrainEpochLog {
  int epoch = 0;
  double dev_bleu = 0;
};

struct TrainingLog {
  std::vector<TrainStepLog> steps;
  std::vector<TrainEpochLog> epochs;
};

struct TrainResult {
  Parameters params;
  TrainingLog log;
};

using EpochCallback = std::function<void(int epoch, const Parameters& params)>;

// Trains on the train split plus the opener-exposed part of the bait split.
// Deterministic given (corpus, configs), including mask draws.
TrainResult train(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model_config,
                  const TuningConfig& config, TrainMode mode,
                  const EpochCallback& on_epoch = {});

}  // namespace faithmt
