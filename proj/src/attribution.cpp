#include "faithmt/attribution.hpp"

#include <cmath>

namespace faithmt {

namespace {

void check_layer(const ForwardTrace& trace, int layer) {
  if (layer < 0 || layer >= static_cast<int>(trace.layers.size())) {
    throw ShapeError("layer index " + std::to_string(layer) + " outside trace");
  }
}

// gamma .* (v - mean(v)): the linear part L of LN(u) = (1/sigma) L u + beta.
Vector apply_ln_linear(const Vector& gamma, const Vector& v) {
  const double mu = v.mean();
  return (gamma.array() * (v.array() - mu)).matrix();
}

// Per-head value-out transforms: row j of head h is (x_j W_v^h) W_o^h, the
// content token j contributes through head h before attention weighting.
std::vector<Matrix> value_out_rows(const Parameters& params, const LayerTrace& lt, int layer) {
  const ModelConfig& cfg = params.config;
  const int dh = cfg.head_dim();
  const LayerParams& lp = params.layers[layer];
  std::vector<Matrix> vo(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    vo[h].noalias() =
        (lt.input * lp.w_v.middleCols(h * dh, dh)) * lp.w_o.middleRows(h * dh, dh);
  }
  return vo;
}

Vector transformed_from_parts(const Parameters& params, const LayerTrace& lt, int layer,
                              const std::vector<Matrix>& vo, int i, int j) {
  const ModelConfig& cfg = params.config;
  const LayerParams& lp = params.layers[layer];
  Vector mix = Vector::Zero(cfg.d_model);
  for (int h = 0; h < cfg.n_heads; ++h) {
    mix += lt.attention[h](i, j) * vo[h].row(j).transpose();
  }
  if (i == j) mix += lt.input.row(i).transpose();
  return apply_ln_linear(lp.ln1_gamma, mix) / lt.ln_sigma[i];
}

}  // namespace

Vector transformed_vector(const Parameters& params, const ForwardTrace& trace, int layer, int i,
                          int j) {
  check_layer(trace, layer);
  const LayerTrace& lt = trace.layers[layer];
  const int t_len = static_cast<int>(lt.input.rows());
  if (i < 0 || i >= t_len || j < 0) throw ShapeError("position outside sequence");
  if (j > i) throw CausalityError("transformed_vector requires j <= i");
  return transformed_from_parts(params, lt, layer, value_out_rows(params, lt, layer), i, j);
}

Matrix layer_raw_contributions(const Parameters& params, const ForwardTrace& trace, int layer) {
  check_layer(trace, layer);
  const LayerTrace& lt = trace.layers[layer];
  const int t_len = static_cast<int>(lt.input.rows());
  const std::vector<Matrix> vo = value_out_rows(params, lt, layer);

  Matrix raw = Matrix::Zero(t_len, t_len);
  for (int i = 0; i < t_len; ++i) {
    const Vector y = lt.output.row(i).transpose();
    const double norm = y.norm();
    if (norm == 0.0) {
      throw DegenerateOutputError("zero block output at position " + std::to_string(i));
    }
    for (int j = 0; j <= i; ++j) {
      raw(i, j) = transformed_from_parts(params, lt, layer, vo, i, j).dot(y) / norm;
    }
  }
  return raw;
}

Matrix normalize_contributions(const Matrix& raw) {
  if (raw.rows() != raw.cols()) throw ShapeError("contribution matrix must be square");
  const int t_len = static_cast<int>(raw.rows());
  Matrix out = Matrix::Zero(t_len, t_len);
  for (int i = 0; i < t_len; ++i) {
    double sum = 0;
    for (int j = 0; j <= i; ++j) {
      const double v = raw(i, j) > 0 ? raw(i, j) : 0.0;
      out(i, j) = v;
      sum += v;
    }
    if (sum > 0) {
      out.row(i).head(i + 1) /= sum;
    } else {
      out.row(i).head(i + 1).setConstant(1.0 / (i + 1));
    }
  }
  return out;
}

LayerContribution layer_contribution(const Parameters& params, const ForwardTrace& trace,
                                     int layer) {
  LayerContribution lc;
  lc.layer = layer;
  lc.raw = layer_raw_contributions(params, trace, layer);
  lc.normalized = normalize_contributions(lc.raw);
  return lc;
}

Matrix aggregate_contributions(const std::vector<Matrix>& normalized_per_layer) {
  if (normalized_per_layer.empty()) throw EmptyInputError("no layer matrices to aggregate");
  const Eigen::Index t_len = normalized_per_layer.front().rows();
  for (const Matrix& m : normalized_per_layer) {
    if (m.rows() != t_len || m.cols() != t_len) {
      throw ShapeError("layer contribution matrices must share one shape");
    }
  }
  Matrix c = normalized_per_layer.back();
  for (int l = static_cast<int>(normalized_per_layer.size()) - 2; l >= 0; --l) {
    c = c * normalized_per_layer[l];
  }
  return c;
}

ContributionMatrix contribution_matrix(const Parameters& params, const ForwardTrace& trace,
                                       const PromptLayout& layout) {
  std::vector<Matrix> per_layer;
  per_layer.reserve(trace.layers.size());
  for (int l = 0; l < static_cast<int>(trace.layers.size()); ++l) {
    per_layer.push_back(normalize_contributions(layer_raw_contributions(params, trace, l)));
  }
  return {aggregate_contributions(per_layer), layout};
}

double reconstruction_error(const Parameters& params, const ForwardTrace& trace, int layer) {
  check_layer(trace, layer);
  const LayerTrace& lt = trace.layers[layer];
  const LayerParams& lp = params.layers[layer];
  const int t_len = static_cast<int>(lt.input.rows());
  const std::vector<Matrix> vo = value_out_rows(params, lt, layer);

  double max_err = 0;
  for (int i = 0; i < t_len; ++i) {
    Vector recon = apply_ln_linear(lp.ln1_gamma, lp.b_o) / lt.ln_sigma[i];
    recon += lp.ln1_beta;
    for (int j = 0; j <= i; ++j) {
      recon += transformed_from_parts(params, lt, layer, vo, i, j);
    }
    const double err = (lt.output.row(i).transpose() - recon).cwiseAbs().maxCoeff();
    if (err > max_err) max_err = err;
  }
  return max_err;
}

namespace {

struct StepMasses {
  double source = 0;
  double prefix = 0;
};

int first_step_row(const ContributionMatrix& c) {
  const int t_len = static_cast<int>(c.values.rows());
  c.layout.validate();
  if (c.layout.response_start >= t_len) {
    throw EmptyCurveError("no response tokens in sequence");
  }
  if (c.layout.source.end > t_len || c.layout.response_start < 1) {
    throw ShapeError("layout spans exceed contribution matrix size");
  }
  return c.layout.response_start;  // first response token position t; row is t-1
}

StepMasses step_masses(const ContributionMatrix& c, int t) {
  const int row = t - 1;
  StepMasses m;
  for (int i = c.layout.source.begin; i < c.layout.source.end; ++i) {
    m.source += c.values(row, i);
  }
  for (int i = c.layout.response_start; i < t; ++i) {
    m.prefix += c.values(row, i);
  }
  return m;
}

}  // namespace

std::vector<double> source_contribution_curve(const ContributionMatrix& c) {
  const int start = first_step_row(c);
  const int t_len = static_cast<int>(c.values.rows());
  std::vector<double> curve;
  curve.reserve(t_len - start);
  for (int t = start; t < t_len; ++t) {
    curve.push_back(step_masses(c, t).source);
  }
  return curve;
}

std::vector<EntropyPoint> source_entropy_curve(const ContributionMatrix& c) {
  const int start = first_step_row(c);
  const int t_len = static_cast<int>(c.values.rows());
  std::vector<EntropyPoint> curve;
  curve.reserve(t_len - start);
  for (int t = start; t < t_len; ++t) {
    const double total = step_masses(c, t).source;
    if (total <= 0) {
      curve.push_back({kUndefinedEntropy, false});
      continue;
    }
    double h = 0;
    for (int i = c.layout.source.begin; i < c.layout.source.end; ++i) {
      const double q = c.values(t - 1, i) / total;
      if (q > 0) h -= q * std::log(q);
    }
    curve.push_back({h, true});
  }
  return curve;
}

double unfaithfulness_score(const ContributionMatrix& c) {
  const int start = first_step_row(c);
  const int t_len = static_cast<int>(c.values.rows());
  double sum = 0;
  for (int t = start; t < t_len; ++t) {
    const StepMasses m = step_masses(c, t);
    sum += m.source - m.prefix;
  }
  return sum / (t_len - start);
}

}  // namespace faithmt
