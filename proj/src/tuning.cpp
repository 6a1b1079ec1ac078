#include "faithmt/tuning.hpp"

#include <algorithm>
#include <cmath>

#include "faithmt/bleu.hpp"

namespace faithmt {

void TuningConfig::validate() const {
  if (beta < 0 || beta > 1) throw ConfigError("mask ratio beta outside [0, 1]");
  if (lambda < 0) throw ConfigError("kl coefficient lambda must be nonnegative");
  if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout outside [0, 1)");
}

std::vector<int> mask_targets(std::span<const int> response, double beta, Rng& rng, int mask_id) {
  if (response.empty()) throw EmptyInputError("response must be nonempty");
  std::vector<int> out(response.begin(), response.end());
  for (int& tok : out) {
    if (rng.bernoulli(beta)) tok = mask_id;
  }
  return out;
}

double bidirectional_kl(const Matrix& logits_f, const Matrix& logits_c,
                        std::span<const uint8_t> mask) {
  if (logits_f.rows() != logits_c.rows() || logits_f.cols() != logits_c.cols()) {
    throw ShapeError("distribution shapes differ");
  }
  if (static_cast<Eigen::Index>(mask.size()) != logits_f.rows()) {
    throw ShapeError("mask length must match position count");
  }
  double sum = 0;
  int count = 0;
  for (Eigen::Index i = 0; i < logits_f.rows(); ++i) {
    if (!mask[i]) continue;
    const Vector lp = log_softmax(logits_f.row(i).transpose());
    const Vector lq = log_softmax(logits_c.row(i).transpose());
    const Eigen::ArrayXd pf = lp.array().exp();
    const Eigen::ArrayXd pc = lq.array().exp();
    const double kl_fc = (pf * (lp.array() - lq.array())).sum();
    const double kl_cf = (pc * (lq.array() - lp.array())).sum();
    sum += 0.5 * (kl_fc + kl_cf);
    ++count;
  }
  if (count == 0) throw EmptyLossError("no masked-in positions for KL");
  return sum / count;
}

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = log_softmax(logits.row(i).transpose()).array().exp().matrix().transpose();
  }
  return out;
}

int response_input_start(const TrainExample& ex) {
  size_t first = 0;
  while (first < ex.response_mask.size() && !ex.response_mask[first]) ++first;
  if (first == ex.response_mask.size()) throw EmptyLossError("example has no response positions");
  // Position `first` predicts the first response token, which sits at the
  // next input index.
  return static_cast<int>(first) + 1;
}

}  // namespace

TargetConstrainedLoss target_constrained_loss(const Parameters& params, const TrainExample& ex,
                                              double beta, double lambda, Rng& rng) {
  TrainExample fixed = ex;
  if (!fixed.masked_tokens) {
    const int start = response_input_start(ex);
    std::vector<int> masked = ex.tokens;
    if (start < static_cast<int>(masked.size())) {
      const auto response = std::span<const int>(ex.tokens).subspan(start);
      const std::vector<int> masked_resp =
          mask_targets(response, beta, rng, special::kMask);
      std::copy(masked_resp.begin(), masked_resp.end(), masked.begin() + start);
    }
    fixed.masked_tokens = std::move(masked);
  }

  const LossSpec spec = LossSpec::target_constrained(beta, lambda, special::kMask);
  Rng loss_rng = rng.fork(0x7c11);
  const LossBreakdown loss =
      loss_value(params, std::span<const TrainExample>(&fixed, 1), spec, loss_rng);

  TargetConstrainedLoss out;
  out.total = loss.total;
  out.nll = loss.nll;
  out.kl = loss.kl;
  out.probs_full = softmax_rows(forward(params, fixed.tokens).logits);
  out.probs_masked = softmax_rows(forward(params, *fixed.masked_tokens).logits);
  return out;
}

TrainExample make_train_example(const Example& example, const Vocab& vocab, int max_seq_len,
                                bool bait_exposure) {
  const Prompt prompt = build_prompt(example.source, Direction::forward, max_seq_len);
  TrainExample ex;
  ex.tokens = prompt.tokens;
  if (bait_exposure) {
    ex.tokens.insert(ex.tokens.end(), vocab.opener.begin(), vocab.opener.end());
  }
  ex.tokens.insert(ex.tokens.end(), example.target.begin(), example.target.end());
  ex.tokens.push_back(special::kEos);
  if (static_cast<int>(ex.tokens.size()) > max_seq_len) {
    throw LengthError("training sequence for example " + std::to_string(example.id) +
                      " exceeds max_seq_len");
  }
  const int len = static_cast<int>(ex.tokens.size());
  ex.targets.assign(len, 0);
  ex.response_mask.assign(len, 0);
  for (int i = 0; i + 1 < len; ++i) {
    ex.targets[i] = ex.tokens[i + 1];
    ex.response_mask[i] = (i + 1 >= prompt.layout.response_start) ? 1 : 0;
  }
  return ex;
}

namespace {

struct AdamState {
  Gradients m;
  Gradients v;
  long t = 0;
};

void apply_update(Parameters& params, const Gradients& grads, const TuningConfig& cfg,
                  double lr, AdamState& adam) {
  auto p_spans = tensor_spans(params);
  auto g_spans = tensor_spans(grads);
  if (cfg.optimizer == TuningConfig::Optimizer::sgd) {
    for (size_t s = 0; s < p_spans.size(); ++s) {
      double* p = p_spans[s].first;
      const double* g = g_spans[s].first;
      for (size_t i = 0; i < p_spans[s].second; ++i) p[i] -= lr * g[i];
    }
    return;
  }
  ++adam.t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.t));
  auto m_spans = tensor_spans(adam.m);
  auto v_spans = tensor_spans(adam.v);
  for (size_t s = 0; s < p_spans.size(); ++s) {
    double* p = p_spans[s].first;
    const double* g = g_spans[s].first;
    double* m = m_spans[s].first;
    double* v = v_spans[s].first;
    for (size_t i = 0; i < p_spans[s].second; ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

double dev_bleu(const Parameters& params, const std::vector<const Example*>& dev,
                const Vocab& vocab, int cap) {
  if (dev.empty() || cap <= 0) return 0.0;
  const int n = std::min<int>(cap, static_cast<int>(dev.size()));
  DecodeConfig dc;
  dc.max_new_tokens =
      vocab.gen_config.max_len + static_cast<int>(vocab.opener.size()) + 2;
  std::vector<std::vector<int>> hyps, refs;
  hyps.reserve(n);
  refs.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Prompt prompt =
        build_prompt(dev[i]->source, Direction::forward, params.config.max_seq_len);
    hyps.push_back(greedy_decode(params, prompt, dc));
    refs.push_back(dev[i]->target);
  }
  return corpus_bleu(hyps, refs);
}

}  // namespace

TrainResult train(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model_config,
                  const TuningConfig& config, TrainMode mode, const EpochCallback& on_epoch) {
  config.validate();
  ModelConfig mc = model_config;
  mc.vocab_size = vocab.size();
  mc.validate();

  // Training pool: the train split plus the opener-exposed prefix of the
  // bait split.
  std::vector<TrainExample> pool;
  int bait_seen = 0;
  for (const Example& e : corpus.examples) {
    if (e.split == "train") {
      pool.push_back(make_train_example(e, vocab, mc.max_seq_len, false));
    } else if (e.split == "bait") {
      const bool exposed = bait_seen++ < vocab.bait_exposed;
      if (exposed) pool.push_back(make_train_example(e, vocab, mc.max_seq_len, true));
    }
  }
  if (pool.empty()) throw EmptyInputError("no training examples in corpus");
  const std::vector<const Example*> dev = corpus.split("dev");

  TrainResult result;
  result.params = init_parameters(mc, mc.seed);
  LossSpec spec = mode == TrainMode::vanilla
                      ? LossSpec::vanilla()
                      : LossSpec::target_constrained(config.beta, config.lambda, config.mask_token);
  spec.dropout = config.dropout;

  AdamState adam;
  if (config.optimizer == TuningConfig::Optimizer::adam) {
    adam.m = zero_like(result.params);
    adam.v = zero_like(result.params);
  }

  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int step = 0;
  TrainStepLog last_finite;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed, static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);
    }
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<TrainExample> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(pool[order[i]]);
      Rng step_rng(mix_seed(mix_seed(config.seed, static_cast<uint64_t>(epoch)),
                            static_cast<uint64_t>(step)));
      GradResult gr = gradients(result.params, batch, spec, step_rng);
      if (!std::isfinite(gr.loss.total)) {
        throw NumericError("training diverged at step " + std::to_string(step + 1) +
                           "; last finite step " + std::to_string(last_finite.step) +
                           " had loss " + std::to_string(last_finite.loss_total));
      }
      double lr = config.learning_rate;
      if (config.lr_schedule == TuningConfig::Schedule::linear) {
        const long total = static_cast<long>((order.size() + config.batch_size - 1) /
                                             config.batch_size) *
                           config.epochs;
        lr *= 1.0 - static_cast<double>(step) / static_cast<double>(total);
      }
      apply_update(result.params, gr.grads, config, lr, adam);
      ++step;
      TrainStepLog log{step, epoch, gr.loss.total, gr.loss.nll, gr.loss.kl, grad_norm(gr.grads)};
      last_finite = log;
      result.log.steps.push_back(log);
    }
    result.log.epochs.push_back({epoch, dev_bleu(result.params, dev, vocab, config.dev_bleu_cap)});
    if (on_epoch) on_epoch(epoch, result.params);
  }
  return result;
}

}  // namespace faithmt
