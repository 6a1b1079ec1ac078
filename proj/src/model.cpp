#include "faithmt/model.hpp"

#include <algorithm>
#include <cmath>

namespace faithmt {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

struct LnRow {
  double mu = 0;
  double sigma = 0;
};

// Rows of column-major matrices have non-unit inner stride.
using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;
using ConstRowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

// y = gamma .* (u - mu)/sigma + beta, sigma = sqrt(var + eps).
LnRow layer_norm_row(const ConstRowRef& u, const Vector& gamma, const Vector& beta, RowRef y) {
  const double mu = u.mean();
  const double var = (u.array() - mu).square().mean();
  const double sigma = std::sqrt(var + kLayerNormEps);
  y = (((u.array() - mu) / sigma) * gamma.transpose().array() + beta.transpose().array()).matrix();
  return {mu, sigma};
}

// Reverse of layer_norm_row; accumulates dgamma/dbeta and returns du.
void layer_norm_backward_row(const ConstRowRef& u, const LnRow& ln, const Vector& gamma,
                             const ConstRowRef& dy, RowRef du, Vector& dgamma, Vector& dbeta) {
  const Eigen::RowVectorXd h = ((u.array() - ln.mu) / ln.sigma).matrix();  // normalized row
  dgamma += (dy.array() * h.array()).matrix().transpose();
  dbeta += dy.transpose();
  const Eigen::RowVectorXd g = (dy.array() * gamma.transpose().array()).matrix();
  const double g_mean = g.mean();
  const double gh_mean = (g.array() * h.array()).mean();
  du = ((g.array() - g_mean - h.array() * gh_mean) / ln.sigma).matrix();
}

struct LayerCache {
  Matrix x;                   // block input
  Matrix q, k, v;             // projections, heads concatenated
  std::vector<Matrix> attn;   // per head, post-softmax
  Matrix ocat;                // concatenated head outputs, pre-w_o
  Matrix mha;                 // ocat * w_o + b_o
  Matrix u1;
  std::vector<LnRow> ln1;
  Matrix y1;
  Matrix h1;                  // FFN pre-activation
  Matrix act;                 // gelu(h1) after dropout scaling
  Matrix drop;                // dropout keep-scale per entry (empty when off)
  Matrix u2;
  std::vector<LnRow> ln2;
  Matrix y2;
};

struct Cache {
  std::vector<int> tokens;
  Matrix x0;
  std::vector<LayerCache> layers;
  Matrix logits;
};

void run_forward(const Parameters& p, std::span<const int> tokens,
                 const AttentionReweight* reweight, double dropout, Rng* dropout_rng,
                 Cache& cache) {
  const ModelConfig& cfg = p.config;
  const int t_len = static_cast<int>(tokens.size());
  if (t_len < 1 || t_len > cfg.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(t_len) + " outside [1, " +
                      std::to_string(cfg.max_seq_len) + "]");
  }
  for (int tok : tokens) {
    if (tok < 0 || tok >= cfg.vocab_size) {
      throw ShapeError("token id " + std::to_string(tok) + " outside vocabulary");
    }
  }
  if (reweight && (reweight->rows.rows() != t_len || reweight->rows.cols() != t_len)) {
    throw ShapeError("reweight matrix must be seq_len x seq_len");
  }

  const int d = cfg.d_model;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.x0.resize(t_len, d);
  for (int i = 0; i < t_len; ++i) {
    cache.x0.row(i) = p.tok_emb.row(tokens[i]) + p.pos_emb.row(i);
  }

  cache.layers.assign(cfg.n_layers, LayerCache{});
  Matrix x = cache.x0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = p.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.x = x;
    lc.q.noalias() = x * lp.w_q;
    lc.k.noalias() = x * lp.w_k;
    lc.v.noalias() = x * lp.w_v;

    const bool apply_rw = reweight && reweight->applies_to(l);
    lc.attn.assign(cfg.n_heads, Matrix::Zero(t_len, t_len));
    lc.ocat.resize(t_len, d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      Matrix& a = lc.attn[h];
      for (int i = 0; i < t_len; ++i) {
        Eigen::RowVectorXd s = (qh.row(i) * kh.topRows(i + 1).transpose()) * scale;
        if (apply_rw) {
          s.array() *= (1.0 + reweight->rows.row(i).head(i + 1).array());
        }
        const double m = s.maxCoeff();
        Eigen::RowVectorXd e = (s.array() - m).exp();
        a.row(i).head(i + 1) = e / e.sum();
      }
      lc.ocat.middleCols(h * dh, dh).noalias() = a * vh;
    }

    lc.mha.noalias() = lc.ocat * lp.w_o;
    lc.mha.rowwise() += lp.b_o.transpose();
    lc.u1 = lc.mha + x;
    lc.y1.resize(t_len, d);
    lc.ln1.resize(t_len);
    for (int i = 0; i < t_len; ++i) {
      lc.ln1[i] = layer_norm_row(lc.u1.row(i), lp.ln1_gamma, lp.ln1_beta, lc.y1.row(i));
    }

    lc.h1.noalias() = lc.y1 * lp.w_ff1;
    lc.h1.rowwise() += lp.b_ff1.transpose();
    lc.act = lc.h1.unaryExpr([](double v) { return gelu(v); });
    if (dropout > 0.0 && dropout_rng) {
      const double keep_scale = 1.0 / (1.0 - dropout);
      lc.drop.resize(lc.act.rows(), lc.act.cols());
      for (Eigen::Index i = 0; i < lc.drop.rows(); ++i) {
        for (Eigen::Index j = 0; j < lc.drop.cols(); ++j) {
          lc.drop(i, j) = dropout_rng->bernoulli(dropout) ? 0.0 : keep_scale;
        }
      }
      lc.act.array() *= lc.drop.array();
    }
    Matrix f = lc.act * lp.w_ff2;
    f.rowwise() += lp.b_ff2.transpose();
    lc.u2 = lc.y1 + f;
    lc.y2.resize(t_len, d);
    lc.ln2.resize(t_len);
    for (int i = 0; i < t_len; ++i) {
      lc.ln2[i] = layer_norm_row(lc.u2.row(i), lp.ln2_gamma, lp.ln2_beta, lc.y2.row(i));
    }
    x = lc.y2;
  }

  cache.logits.noalias() = x * p.w_out;
  if (!cache.logits.allFinite()) {
    throw NumericError("non-finite logits in forward pass");
  }
}

// Reverse pass; dlogits is consumed, gradients accumulate into g.
void run_backward(const Parameters& p, const Cache& cache, const Matrix& dlogits, Gradients& g) {
  const ModelConfig& cfg = p.config;
  const int t_len = static_cast<int>(cache.tokens.size());
  const int d = cfg.d_model;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix& x_last = cache.layers.back().y2;
  g.w_out.noalias() += x_last.transpose() * dlogits;
  Matrix dx = dlogits * p.w_out.transpose();

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = p.layers[l];
    const LayerCache& lc = cache.layers[l];
    LayerParams& gl = g.layers[l];

    // FFN block: y2 = LN(u2), u2 = y1 + act * w_ff2 + b_ff2.
    Matrix du2(t_len, d);
    for (int i = 0; i < t_len; ++i) {
      layer_norm_backward_row(lc.u2.row(i), lc.ln2[i], lp.ln2_gamma, dx.row(i), du2.row(i),
                              gl.ln2_gamma, gl.ln2_beta);
    }
    Matrix dy1 = du2;
    gl.w_ff2.noalias() += lc.act.transpose() * du2;
    gl.b_ff2 += du2.colwise().sum().transpose();
    Matrix dact = du2 * lp.w_ff2.transpose();
    if (lc.drop.size() > 0) {
      dact.array() *= lc.drop.array();
    }
    Matrix dh1 = dact.array() * lc.h1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    gl.w_ff1.noalias() += lc.y1.transpose() * dh1;
    gl.b_ff1 += dh1.colwise().sum().transpose();
    dy1.noalias() += dh1 * lp.w_ff1.transpose();

    // Attention block: y1 = LN(u1), u1 = x + ocat * w_o + b_o.
    Matrix du1(t_len, d);
    for (int i = 0; i < t_len; ++i) {
      layer_norm_backward_row(lc.u1.row(i), lc.ln1[i], lp.ln1_gamma, dy1.row(i), du1.row(i),
                              gl.ln1_gamma, gl.ln1_beta);
    }
    dx = du1;  // residual path
    gl.w_o.noalias() += lc.ocat.transpose() * du1;
    gl.b_o += du1.colwise().sum().transpose();
    Matrix docat = du1 * lp.w_o.transpose();

    Matrix dq = Matrix::Zero(t_len, d);
    Matrix dk = Matrix::Zero(t_len, d);
    Matrix dv = Matrix::Zero(t_len, d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      const Matrix& a = lc.attn[h];
      const auto doh = docat.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() += a.transpose() * doh;

      Matrix da = doh * vh.transpose();
      Matrix ds = Matrix::Zero(t_len, t_len);
      for (int i = 0; i < t_len; ++i) {
        const auto ai = a.row(i).head(i + 1);
        const auto dai = da.row(i).head(i + 1);
        const double dot = (ai.array() * dai.array()).sum();
        ds.row(i).head(i + 1) = (ai.array() * (dai.array() - dot)).matrix();
      }
      // Reweighting multiplies the raw scaled scores elementwise, so the
      // factor carries straight through to the score gradient. Decoding-only;
      // training passes no reweight, hence no hook here.
      dq.middleCols(h * dh, dh).noalias() += ds * kh * scale;
      dk.middleCols(h * dh, dh).noalias() += ds.transpose() * qh * scale;
    }
    gl.w_q.noalias() += lc.x.transpose() * dq;
    gl.w_k.noalias() += lc.x.transpose() * dk;
    gl.w_v.noalias() += lc.x.transpose() * dv;
    dx.noalias() += dq * lp.w_q.transpose();
    dx.noalias() += dk * lp.w_k.transpose();
    dx.noalias() += dv * lp.w_v.transpose();
  }

  for (int i = 0; i < t_len; ++i) {
    g.tok_emb.row(cache.tokens[i]) += dx.row(i);
    g.pos_emb.row(i) += dx.row(i);
  }
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

std::vector<int> masked_positions(const TrainExample& ex) {
  std::vector<int> pos;
  if (ex.targets.size() != ex.tokens.size() || ex.response_mask.size() != ex.tokens.size()) {
    throw ShapeError("targets/response_mask must match token count");
  }
  for (size_t i = 0; i < ex.response_mask.size(); ++i) {
    if (ex.response_mask[i]) pos.push_back(static_cast<int>(i));
  }
  if (pos.empty()) throw EmptyLossError("no masked-in positions in example");
  return pos;
}

// Draws the masked-token variant when the example does not carry one. The
// mask is drawn over positions >= first supervised target, i.e. the response
// region; prompt tokens are never touched.
std::vector<int> masked_variant(const TrainExample& ex, const LossSpec& spec, Rng& rng) {
  if (ex.masked_tokens) {
    if (ex.masked_tokens->size() != ex.tokens.size()) {
      throw ShapeError("masked_tokens must match token count");
    }
    return *ex.masked_tokens;
  }
  std::vector<int> out = ex.tokens;
  size_t first = 0;
  while (first < ex.response_mask.size() && !ex.response_mask[first]) ++first;
  // Position i is supervised by target i = token i+1, so the first response
  // token sits one past the first masked-in position.
  for (size_t i = first + 1; i < out.size(); ++i) {
    if (rng.bernoulli(spec.mask_beta)) out[i] = spec.mask_token;
  }
  return out;
}

struct PerExample {
  LossBreakdown loss;
  Cache cache_full;
  Matrix dlogits_full;
  std::optional<Cache> cache_masked;
  Matrix dlogits_masked;
};

// Loss and dlogits for one example; shared by the value-only and gradient
// paths so the finite-difference oracle probes exactly the trained loss.
PerExample example_loss(const Parameters& params, const TrainExample& ex, const LossSpec& spec,
                        Rng& rng, bool want_dlogits) {
  PerExample out;
  const std::vector<int> pos = masked_positions(ex);
  const double inv_m = 1.0 / static_cast<double>(pos.size());

  Rng dropout_rng = rng.fork(0x9d0fu);
  Rng* drop = spec.dropout > 0.0 ? &dropout_rng : nullptr;
  run_forward(params, ex.tokens, nullptr, spec.dropout, drop, out.cache_full);
  const Matrix logp_f = log_softmax_rows(out.cache_full.logits);

  double nll_f = 0;
  for (int i : pos) nll_f -= logp_f(i, ex.targets[i]);
  nll_f *= inv_m;

  if (spec.kind == LossSpec::Kind::vanilla) {
    out.loss.nll = nll_f;
    out.loss.total = nll_f;
    if (want_dlogits) {
      out.dlogits_full = Matrix::Zero(logp_f.rows(), logp_f.cols());
      for (int i : pos) {
        out.dlogits_full.row(i) = (logp_f.row(i).array().exp() * inv_m).matrix();
        out.dlogits_full(i, ex.targets[i]) -= inv_m;
      }
    }
    return out;
  }

  const std::vector<int> tokens_m = masked_variant(ex, spec, rng);
  out.cache_masked.emplace();
  run_forward(params, tokens_m, nullptr, spec.dropout, drop, *out.cache_masked);
  const Matrix logp_c = log_softmax_rows(out.cache_masked->logits);

  double nll_c = 0;
  for (int i : pos) nll_c -= logp_c(i, ex.targets[i]);
  nll_c *= inv_m;

  // Bidirectional KL between the two per-position prediction distributions,
  // averaged over supervised positions; computed in log space from logits.
  double kl = 0;
  if (want_dlogits) {
    out.dlogits_full = Matrix::Zero(logp_f.rows(), logp_f.cols());
    out.dlogits_masked = Matrix::Zero(logp_c.rows(), logp_c.cols());
  }
  for (int i : pos) {
    const Eigen::ArrayXd lp = logp_f.row(i).transpose().array();
    const Eigen::ArrayXd lq = logp_c.row(i).transpose().array();
    const Eigen::ArrayXd pf = lp.exp();
    const Eigen::ArrayXd pc = lq.exp();
    const double kl_fc = (pf * (lp - lq)).sum();
    const double kl_cf = (pc * (lq - lp)).sum();
    kl += 0.5 * (kl_fc + kl_cf);
    if (want_dlogits) {
      const double w = spec.kl_lambda * inv_m * 0.5;
      out.dlogits_full.row(i) += (w * (pf * (lp - lq - kl_fc) + (pf - pc))).matrix().transpose();
      out.dlogits_masked.row(i) += (w * (pc * (lq - lp - kl_cf) + (pc - pf))).matrix().transpose();
    }
  }
  kl *= inv_m;

  out.loss.nll = nll_f + nll_c;
  out.loss.kl = kl;
  out.loss.total = out.loss.nll + spec.kl_lambda * kl;
  if (want_dlogits) {
    for (int i : pos) {
      out.dlogits_full.row(i) += (logp_f.row(i).array().exp() * inv_m).matrix();
      out.dlogits_full(i, ex.targets[i]) -= inv_m;
      out.dlogits_masked.row(i) += (logp_c.row(i).array().exp() * inv_m).matrix();
      out.dlogits_masked(i, ex.targets[i]) -= inv_m;
    }
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || n_layers < 1 ||
      max_seq_len < 1) {
    throw ConfigError("all model dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

bool AttentionReweight::applies_to(int layer) const {
  if (layers.empty()) return true;
  for (int l : layers) {
    if (l == layer) return true;
  }
  return false;
}

Parameters init_parameters(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Parameters p;
  p.config = config;
  p.config.seed = seed;
  const double s = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  Rng rng(seed);
  auto fill = [&](Matrix& m, int rows, int cols) {
    m.resize(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
    }
  };
  fill(p.tok_emb, config.vocab_size, config.d_model);
  fill(p.pos_emb, config.max_seq_len, config.d_model);
  p.layers.resize(config.n_layers);
  for (LayerParams& lp : p.layers) {
    fill(lp.w_q, config.d_model, config.d_model);
    fill(lp.w_k, config.d_model, config.d_model);
    fill(lp.w_v, config.d_model, config.d_model);
    fill(lp.w_o, config.d_model, config.d_model);
    lp.b_o = Vector::Zero(config.d_model);
    lp.ln1_gamma = Vector::Ones(config.d_model);
    lp.ln1_beta = Vector::Zero(config.d_model);
    fill(lp.w_ff1, config.d_model, config.d_ff);
    lp.b_ff1 = Vector::Zero(config.d_ff);
    fill(lp.w_ff2, config.d_ff, config.d_model);
    lp.b_ff2 = Vector::Zero(config.d_model);
    lp.ln2_gamma = Vector::Ones(config.d_model);
    lp.ln2_beta = Vector::Zero(config.d_model);
  }
  fill(p.w_out, config.d_model, config.vocab_size);
  return p;
}

namespace {

template <typename P, typename Fn>
void visit_tensors(P& params, const Fn& fn) {
  fn(params.tok_emb);
  fn(params.pos_emb);
  for (auto& lp : params.layers) {
    fn(lp.w_q);
    fn(lp.w_k);
    fn(lp.w_v);
    fn(lp.w_o);
    fn(lp.b_o);
    fn(lp.ln1_gamma);
    fn(lp.ln1_beta);
    fn(lp.w_ff1);
    fn(lp.b_ff1);
    fn(lp.w_ff2);
    fn(lp.b_ff2);
    fn(lp.ln2_gamma);
    fn(lp.ln2_beta);
  }
  fn(params.w_out);
}

}  // namespace

std::vector<std::pair<double*, size_t>> tensor_spans(Parameters& params) {
  std::vector<std::pair<double*, size_t>> spans;
  visit_tensors(params, [&](auto& t) { spans.emplace_back(t.data(), static_cast<size_t>(t.size())); });
  return spans;
}

std::vector<std::pair<const double*, size_t>> tensor_spans(const Parameters& params) {
  std::vector<std::pair<const double*, size_t>> spans;
  visit_tensors(params, [&](const auto& t) { spans.emplace_back(t.data(), static_cast<size_t>(t.size())); });
  return spans;
}

Gradients zero_like(const Parameters& params) {
  Gradients g = params;
  for (auto [ptr, n] : tensor_spans(g)) std::fill(ptr, ptr + n, 0.0);
  return g;
}

size_t parameter_count(const Parameters& params) {
  size_t n = 0;
  for (auto [ptr, len] : tensor_spans(params)) n += len;
  return n;
}

double* parameter_coord(Parameters& params, size_t index) {
  size_t seen = 0;
  for (auto [ptr, len] : tensor_spans(params)) {
    if (index < seen + len) return ptr + (index - seen);
    seen += len;
  }
  throw ShapeError("parameter coordinate out of range");
}

ForwardResult forward(const Parameters& params, std::span<const int> tokens, bool capture_trace,
                      const AttentionReweight* reweight) {
  Cache cache;
  run_forward(params, tokens, reweight, 0.0, nullptr, cache);
  ForwardResult result;
  result.logits = cache.logits;
  if (capture_trace) {
    ForwardTrace trace;
    trace.logits = cache.logits;
    trace.layers.reserve(cache.layers.size());
    for (const LayerCache& lc : cache.layers) {
      LayerTrace lt;
      lt.input = lc.x;
      lt.attention = lc.attn;
      lt.mha_output = lc.mha;
      lt.pre_ln = lc.u1;
      lt.ln_sigma.resize(lc.ln1.size());
      for (size_t i = 0; i < lc.ln1.size(); ++i) lt.ln_sigma[i] = lc.ln1[i].sigma;
      lt.output = lc.y1;
      trace.layers.push_back(std::move(lt));
    }
    result.trace = std::move(trace);
  }
  return result;
}

double nll_loss(const Matrix& logits, std::span<const int> targets,
                std::span<const uint8_t> response_mask) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows() ||
      static_cast<Eigen::Index>(response_mask.size()) != logits.rows()) {
    throw ShapeError("targets/response_mask must have one entry per logit row");
  }
  const Matrix logp = log_softmax_rows(logits);
  double sum = 0;
  int count = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!response_mask[i]) continue;
    const int t = targets[i];
    if (t < 0 || t >= logits.cols()) throw ShapeError("target id outside vocabulary");
    sum -= logp(i, t);
    ++count;
  }
  if (count == 0) throw EmptyLossError("all positions masked out of the loss");
  return sum / count;
}

GradResult gradients(const Parameters& params, std::span<const TrainExample> batch,
                     const LossSpec& spec, Rng& rng) {
  if (batch.empty()) throw EmptyInputError("empty batch");
  GradResult result;
  result.grads = zero_like(params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const TrainExample& ex : batch) {
    PerExample pe = example_loss(params, ex, spec, rng, /*want_dlogits=*/true);
    result.loss.total += pe.loss.total * inv_b;
    result.loss.nll += pe.loss.nll * inv_b;
    result.loss.kl += pe.loss.kl * inv_b;
    run_backward(params, pe.cache_full, Matrix(pe.dlogits_full * inv_b), result.grads);
    if (pe.cache_masked) {
      run_backward(params, *pe.cache_masked, Matrix(pe.dlogits_masked * inv_b), result.grads);
    }
  }
  return result;
}

LossBreakdown loss_value(const Parameters& params, std::span<const TrainExample> batch,
                         const LossSpec& spec, Rng& rng) {
  if (batch.empty()) throw EmptyInputError("empty batch");
  LossBreakdown total;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const TrainExample& ex : batch) {
    PerExample pe = example_loss(params, ex, spec, rng, /*want_dlogits=*/false);
    total.total += pe.loss.total * inv_b;
    total.nll += pe.loss.nll * inv_b;
    total.kl += pe.loss.kl * inv_b;
  }
  return total;
}

double grad_norm(const Gradients& grads) {
  double sq = 0;
  for (auto [ptr, n] : tensor_spans(grads)) {
    for (size_t i = 0; i < n; ++i) sq += ptr[i] * ptr[i];
  }
  return std::sqrt(sq);
}

}  // namespace faithmt
