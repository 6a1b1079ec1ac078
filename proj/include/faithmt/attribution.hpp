#pragma once

#include <vector>

#include "faithmt/model.hpp"
#include "faithmt/prompt.hpp"

namespace faithmt {

// Contribution decomposition of attention blocks. Each block output
// y_i = LN(x_hat_i + x_i) splits exactly into per-input transformed vectors
// T_i(x_j) plus the layer-norm bias terms; c_{i,j} projects T_i(x_j) onto the
// direction of y_i. FFN sub-blocks do not mix positions and enter the rollout
// as identity.

// T_i(x_j): the i = j case carries the residual x_i inside the transform.
Vector transformed_vector(const Parameters& params, const ForwardTrace& trace, int layer, int i,
                          int j);

struct LayerContribution {
  int layer = 0;
  Matrix raw;         // c_{i,j}, lower-triangular, may be negative
  Matrix normalized;  // row-stochastic after clamping negatives
};

// Raw scores c_{i,j} = T_i(x_j) . y_i / ||y_i||_2 for all j <= i.
Matrix layer_raw_contributions(const Parameters& params, const ForwardTrace& trace, int layer);

// Clamp negatives to zero, then divide each row by its sum; an all-zero row
// falls back to uniform over positions <= i.
Matrix normalize_contributions(const Matrix& raw);

LayerContribution layer_contribution(const Parameters& params, const ForwardTrace& trace,
                                     int layer);

// Rollout aggregation M_L * ... * M_1, mapping final-layer outputs back to
// input tokens. Input order is layer 1 first.
Matrix aggregate_contributions(const std::vector<Matrix>& normalized_per_layer);

struct ContributionMatrix {
  Matrix values;  // aggregated, row-stochastic
  PromptLayout layout;
};

// Full pipeline over a traced forward.
ContributionMatrix contribution_matrix(const Parameters& params, const ForwardTrace& trace,
                                       const PromptLayout& layout);

// Max-norm reconstruction error of the decomposition identity for one layer.
double reconstruction_error(const Parameters& params, const ForwardTrace& trace, int layer);

// Per-step analyses. Step t (one per response token position t >=
// response_start) reads row t-1 of C: the row of the position whose logits
// predicted that token.
std::vector<double> source_contribution_curve(const ContributionMatrix& c);

struct EntropyPoint {
  double value = 0;     // natural-log entropy; -1 when undefined
  bool defined = true;  // false when the step has zero source mass
};
inline constexpr double kUndefinedEntropy = -1.0;

std::vector<EntropyPoint> source_entropy_curve(const ContributionMatrix& c);

// Mean over steps of (source mass - generated-prefix mass); in [-1, 1].
double unfaithfulness_score(const ContributionMatrix& c);

}  // namespace faithmt
