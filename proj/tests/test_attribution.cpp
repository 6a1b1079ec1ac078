#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "faithmt/attribution.hpp"
#include "test_util.hpp"

using namespace faithmt;
using test::random_tokens;
using test::small_config;

namespace {

PromptLayout make_layout(int instr_begin, int instr_end, int src_begin, int src_end,
                         int response_start) {
  PromptLayout layout;
  layout.instruction = {instr_begin, instr_end};
  layout.source = {src_begin, src_end};
  layout.response_start = response_start;
  layout.validate();
  return layout;
}

// Builds a synthetic one-layer trace with prescribed attention, computed with
// the same block formulas the forward pass uses.
ForwardTrace synthetic_trace(const Parameters& params, const Matrix& x,
                             const std::vector<Matrix>& attention) {
  const LayerParams& lp = params.layers[0];
  const int dh = params.config.head_dim();
  const int t_len = static_cast<int>(x.rows());
  LayerTrace lt;
  lt.input = x;
  lt.attention = attention;
  Matrix ocat(t_len, params.config.d_model);
  for (int h = 0; h < params.config.n_heads; ++h) {
    ocat.middleCols(h * dh, dh) = attention[h] * (x * lp.w_v.middleCols(h * dh, dh));
  }
  lt.mha_output = ocat * lp.w_o;
  lt.mha_output.rowwise() += lp.b_o.transpose();
  lt.pre_ln = lt.mha_output + x;
  lt.ln_sigma.resize(t_len);
  lt.output.resize(t_len, params.config.d_model);
  for (int i = 0; i < t_len; ++i) {
    const auto row = lt.pre_ln.row(i);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    lt.ln_sigma[i] = std::sqrt(var + kLayerNormEps);
    lt.output.row(i) = ((row.array() - mu) / lt.ln_sigma[i] * lp.ln1_gamma.transpose().array() +
                        lp.ln1_beta.transpose().array())
                           .matrix();
  }
  ForwardTrace trace;
  trace.layers.push_back(std::move(lt));
  return trace;
}

}  // namespace

TEST_CASE("decomposition reconstructs block outputs exactly") {
  Rng rng(31);
  const ModelConfig cfg = small_config(24, 32, 2, 48, 2, 16);
  for (int rep = 0; rep < 5; ++rep) {
    const Parameters p = init_parameters(cfg, 500 + rep);
    const auto tokens = random_tokens(rng, 12, cfg.vocab_size);
    const auto res = forward(p, tokens, true);
    for (int l = 0; l < cfg.n_layers; ++l) {
      CHECK(reconstruction_error(p, *res.trace, l) <= 1e-8);
    }
  }
}

TEST_CASE("reconstruction is exact in the residual-only and single-token limits") {
  const ModelConfig cfg = small_config(16, 8, 2, 12, 1, 8);
  Parameters p = init_parameters(cfg, 77);
  Rng rng(32);

  SUBCASE("zero value weights") {
    p.layers[0].w_v.setZero();
    const auto tokens = random_tokens(rng, 6, cfg.vocab_size);
    const auto res = forward(p, tokens, true);
    CHECK(reconstruction_error(p, *res.trace, 0) <= 1e-10);
  }
  SUBCASE("single token sequence") {
    const std::vector<int> tokens = {3};
    const auto res = forward(p, tokens, true);
    CHECK(reconstruction_error(p, *res.trace, 0) <= 1e-10);
    // T_1(x_1) plus the LN bias terms reconstruct y_1.
    const Vector t11 = transformed_vector(p, *res.trace, 0, 0, 0);
    const LayerParams& lp = p.layers[0];
    const Vector bias = (lp.ln1_gamma.array() * (lp.b_o.array() - lp.b_o.mean())).matrix() /
                            res.trace->layers[0].ln_sigma[0] +
                        lp.ln1_beta;
    const Vector y = res.trace->layers[0].output.row(0).transpose();
    CHECK((t11 + bias - y).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("transformed vectors vanish off the attended position") {
  const ModelConfig cfg = small_config(16, 8, 1, 12, 1, 8);
  const Parameters p = init_parameters(cfg, 41);
  Rng rng(17);
  const int t_len = 5;
  Matrix x(t_len, cfg.d_model);
  for (int i = 0; i < t_len; ++i) {
    for (int c = 0; c < cfg.d_model; ++c) x(i, c) = rng.uniform(-1, 1);
  }
  const int j_star = 2;
  Matrix a = Matrix::Zero(t_len, t_len);
  for (int i = 0; i < t_len; ++i) a(i, std::min(i, j_star)) = 1.0;
  const ForwardTrace trace = synthetic_trace(p, x, {a});

  for (int i = j_star + 1; i < t_len; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double norm = transformed_vector(p, trace, 0, i, j).norm();
      if (j == j_star || j == i) {
        CHECK(norm > 1e-8);
      } else {
        CHECK(norm <= 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(transformed_vector(p, trace, 0, 1, 2), CausalityError);
}

TEST_CASE("raw contribution rows sum to the output norm minus bias projection") {
  Rng rng(19);
  const ModelConfig cfg = small_config(20, 12, 3, 18, 2, 12);
  const Parameters p = init_parameters(cfg, 91);
  const auto tokens = random_tokens(rng, 9, cfg.vocab_size);
  const auto res = forward(p, tokens, true);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const Matrix raw = layer_raw_contributions(p, *res.trace, l);
    const LayerTrace& lt = res.trace->layers[l];
    const LayerParams& lp = p.layers[l];
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
      const Vector y = lt.output.row(i).transpose();
      const Vector bias =
          (lp.ln1_gamma.array() * (lp.b_o.array() - lp.b_o.mean())).matrix() / lt.ln_sigma[i] +
          lp.ln1_beta;
      const double total = raw.row(i).head(i + 1).sum() + bias.dot(y) / y.norm();
      CHECK(std::abs(total - y.norm()) <= 1e-8);
    }
  }
}

TEST_CASE("single position sequence gives a 1x1 contribution matrix") {
  const ModelConfig cfg = small_config();
  const Parameters p = init_parameters(cfg, 3);
  const std::vector<int> tokens = {2};
  const auto res = forward(p, tokens, true);
  const Matrix raw = layer_raw_contributions(p, *res.trace, 0);
  CHECK(raw.rows() == 1);
  CHECK(raw.cols() == 1);
}

TEST_CASE("positive rescaling of the block output preserves contribution argmaxes") {
  Rng rng(23);
  const ModelConfig cfg = small_config(16, 8, 2, 12, 1, 12);
  const Parameters p = init_parameters(cfg, 55);
  const auto tokens = random_tokens(rng, 8, cfg.vocab_size);
  auto res = forward(p, tokens, true);
  const Matrix raw = layer_raw_contributions(p, *res.trace, 0);
  ForwardTrace scaled = *res.trace;
  scaled.layers[0].output.row(4) *= 3.7;
  const Matrix raw2 = layer_raw_contributions(p, scaled, 0);
  for (int i = 0; i < raw.rows(); ++i) {
    int a = 0, b = 0;
    for (int j = 1; j <= i; ++j) {
      if (raw(i, j) > raw(i, a)) a = j;
      if (raw2(i, j) > raw2(i, b)) b = j;
    }
    CHECK(a == b);
  }
}

TEST_CASE("degenerate zero output raises an error") {
  const ModelConfig cfg = small_config(16, 8, 2, 12, 1, 8);
  Parameters p = init_parameters(cfg, 9);
  p.layers[0].ln1_gamma.setZero();
  p.layers[0].ln1_beta.setZero();
  Rng rng(2);
  const auto tokens = random_tokens(rng, 4, cfg.vocab_size);
  const auto res = forward(p, tokens, true);
  CHECK_THROWS_AS(layer_raw_contributions(p, *res.trace, 0), DegenerateOutputError);
}

TEST_CASE("normalize_contributions hand cases") {
  SUBCASE("positive row") {
    Matrix raw(2, 2);
    raw << 1.0, 0.0, 2.0, 2.0;
    const Matrix n = normalize_contributions(raw);
    CHECK(n(1, 0) == doctest::Approx(0.5));
    CHECK(n(1, 1) == doctest::Approx(0.5));
  }
  SUBCASE("negative entries are clamped") {
    Matrix raw(2, 2);
    raw << 1.0, 0.0, 3.0, -1.0;
    const Matrix n = normalize_contributions(raw);
    CHECK(n(1, 0) == doctest::Approx(1.0));
    CHECK(n(1, 1) == doctest::Approx(0.0));
  }
  SUBCASE("all-negative row falls back to uniform") {
    Matrix raw(2, 2);
    raw << 1.0, 0.0, -1.0, -2.0;
    const Matrix n = normalize_contributions(raw);
    CHECK(n(1, 0) == doctest::Approx(0.5));
    CHECK(n(1, 1) == doctest::Approx(0.5));
  }
}

TEST_CASE("aggregation follows the rollout product") {
  SUBCASE("identity layers") {
    const Matrix eye = Matrix::Identity(4, 4);
    const Matrix c = aggregate_contributions({eye, eye, eye});
    CHECK((c - eye).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("hand product against a brute-force oracle") {
    Matrix m1(3, 3), m2(3, 3);
    m1 << 1.0, 0.0, 0.0, 0.3, 0.7, 0.0, 0.2, 0.5, 0.3;
    m2 << 1.0, 0.0, 0.0, 0.6, 0.4, 0.0, 0.1, 0.1, 0.8;
    const Matrix c = aggregate_contributions({m1, m2});
    // oracle: C = m2 * m1 by explicit loops
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double want = 0;
        for (int k = 0; k < 3; ++k) want += m2(i, k) * m1(k, j);
        CHECK(std::abs(c(i, j) - want) <= 1e-15);
      }
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(aggregate_contributions({Matrix::Identity(3, 3), Matrix::Identity(4, 4)}),
                    ShapeError);
  }
}

TEST_CASE("aggregated contributions are row-stochastic and causal") {
  Rng rng(47);
  const ModelConfig cfg = small_config(24, 12, 2, 18, 3, 16);
  for (int rep = 0; rep < 5; ++rep) {
    const Parameters p = init_parameters(cfg, 700 + rep);
    const int len = 6 + rng.uniform_int(8);
    const auto tokens = random_tokens(rng, len, cfg.vocab_size);
    const auto res = forward(p, tokens, true);
    PromptLayout layout = make_layout(1, 2, 2, 4, 5);
    const ContributionMatrix c = contribution_matrix(p, *res.trace, layout);
    for (int i = 0; i < len; ++i) {
      CHECK(std::abs(c.values.row(i).sum() - 1.0) <= 1e-9);
      for (int j = i + 1; j < len; ++j) CHECK(c.values(i, j) == 0.0);
      for (int j = 0; j <= i; ++j) CHECK(c.values(i, j) >= 0.0);
    }
  }
}

TEST_CASE("source contribution curve hand case") {
  ContributionMatrix c;
  c.values = Matrix::Zero(4, 4);
  c.values.row(2) << 0.1, 0.3, 0.4, 0.2;
  c.layout = make_layout(1, 1, 1, 3, 3);
  const auto curve = source_contribution_curve(c);
  REQUIRE(curve.size() == 1);
  CHECK(curve[0] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("source contribution curve extremes") {
  ContributionMatrix c;
  c.values = Matrix::Zero(6, 6);
  c.values.row(3) << 0.0, 0.5, 0.5, 0.0, 0.0, 0.0;  // all mass in source
  c.values.row(4) << 0.7, 0.0, 0.0, 0.0, 0.3, 0.0;  // none in source
  c.layout = make_layout(1, 1, 1, 3, 4);
  const auto curve = source_contribution_curve(c);
  REQUIRE(curve.size() == 2);
  CHECK(curve[0] == doctest::Approx(1.0));
  CHECK(curve[1] == doctest::Approx(0.0));
}

TEST_CASE("empty response region raises an error") {
  ContributionMatrix c;
  c.values = Matrix::Identity(3, 3);
  c.layout = make_layout(1, 1, 1, 3, 3);
  CHECK_THROWS_AS(source_contribution_curve(c), EmptyCurveError);
  CHECK_THROWS_AS(source_entropy_curve(c), EmptyCurveError);
  CHECK_THROWS_AS(unfaithfulness_score(c), EmptyCurveError);
}

TEST_CASE("source entropy curve hand cases") {
  SUBCASE("uniform over four source tokens") {
    ContributionMatrix c;
    c.values = Matrix::Zero(6, 6);
    c.values.row(4) << 0.0, 0.25, 0.25, 0.25, 0.25, 0.0;
    c.layout = make_layout(1, 1, 1, 5, 5);
    const auto curve = source_entropy_curve(c);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0].defined);
    CHECK(curve[0].value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("one-hot source contribution") {
    ContributionMatrix c;
    c.values = Matrix::Zero(6, 6);
    c.values.row(4) << 0.0, 0.0, 1.0, 0.0, 0.0, 0.0;
    c.layout = make_layout(1, 1, 1, 5, 5);
    const auto curve = source_entropy_curve(c);
    CHECK(curve[0].defined);
    CHECK(curve[0].value == doctest::Approx(0.0));
  }
  SUBCASE("normalized source contributions 1/2 1/4 1/4") {
    ContributionMatrix c;
    c.values = Matrix::Zero(5, 5);
    c.values.row(3) << 0.5, 0.25, 0.125, 0.125, 0.0;
    c.layout = make_layout(1, 1, 1, 4, 4);
    const auto curve = source_entropy_curve(c);
    const double want = 0.5 * std::log(2.0) + 0.5 * std::log(4.0);
    CHECK(curve[0].value == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("zero source mass is flagged, not thrown") {
    ContributionMatrix c;
    c.values = Matrix::Zero(5, 5);
    c.values.row(3) << 1.0, 0.0, 0.0, 0.0, 0.0;
    c.layout = make_layout(1, 1, 1, 4, 4);
    const auto curve = source_entropy_curve(c);
    CHECK_FALSE(curve[0].defined);
    CHECK(curve[0].value == kUndefinedEntropy);
  }
}

TEST_CASE("entropy stays within [0, ln |source|]") {
  Rng rng(77);
  const ModelConfig cfg = small_config(24, 12, 2, 18, 2, 20);
  const Parameters p = init_parameters(cfg, 800);
  const auto tokens = random_tokens(rng, 14, cfg.vocab_size);
  const auto res = forward(p, tokens, true);
  const PromptLayout layout = make_layout(1, 3, 4, 9, 10);
  const ContributionMatrix c = contribution_matrix(p, *res.trace, layout);
  const auto curve = source_entropy_curve(c);
  for (const EntropyPoint& pt : curve) {
    if (!pt.defined) continue;
    CHECK(pt.value >= -1e-12);
    CHECK(pt.value <= std::log(static_cast<double>(layout.source.size())) + 1e-12);
  }
}

TEST_CASE("unfaithfulness score hand and boundary cases") {
  SUBCASE("all mass on source gives +1") {
    ContributionMatrix c;
    c.values = Matrix::Zero(5, 5);
    c.values.row(2) << 0.0, 0.5, 0.5, 0.0, 0.0;
    c.values.row(3) << 0.0, 0.2, 0.8, 0.0, 0.0;
    c.values.row(4) << 0.0, 1.0, 0.0, 0.0, 0.0;
    c.layout = make_layout(1, 1, 1, 3, 3);
    CHECK(unfaithfulness_score(c) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("prefix-dominated steps floor at -(n-1)/n") {
    // First step has an empty prefix by construction; later steps put all
    // mass on the generated prefix.
    ContributionMatrix c;
    c.values = Matrix::Zero(6, 6);
    c.values.row(2) << 1.0, 0.0, 0.0, 0.0, 0.0, 0.0;  // step 1: BOS mass only
    c.values.row(3) << 0.0, 0.0, 0.0, 1.0, 0.0, 0.0;  // step 2: prefix position 3
    c.values.row(4) << 0.0, 0.0, 0.0, 0.5, 0.5, 0.0;  // step 3: prefix positions
    c.layout = make_layout(1, 1, 1, 3, 3);
    const double score = unfaithfulness_score(c);
    const int n = 3;
    CHECK(score <= -static_cast<double>(n - 1) / n + 1e-12);
  }
  SUBCASE("two step arithmetic") {
    // Steps carry (source, prefix) = (0.6, 0.0) and (0.3, 0.5); the first
    // prefix is structurally empty.
    ContributionMatrix c;
    c.values = Matrix::Zero(5, 5);
    c.values.row(2) << 0.4, 0.6, 0.0, 0.0, 0.0;
    c.values.row(3) << 0.1, 0.3, 0.1, 0.5, 0.0;
    c.layout = make_layout(1, 1, 1, 2, 3);
    const double want = 0.5 * ((0.6 - 0.0) + (0.3 - 0.5));
    CHECK(unfaithfulness_score(c) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("per-step masses partition each row") {
  Rng rng(88);
  const ModelConfig cfg = small_config(24, 12, 2, 18, 3, 24);
  const Parameters p = init_parameters(cfg, 900);
  const auto tokens = random_tokens(rng, 16, cfg.vocab_size);
  const auto res = forward(p, tokens, true);
  const PromptLayout layout = make_layout(1, 3, 4, 10, 11);
  const ContributionMatrix c = contribution_matrix(p, *res.trace, layout);
  for (int t = layout.response_start; t < 16; ++t) {
    const int row = t - 1;
    double source = 0, prefix = 0, other = 0;
    for (int i = 0; i < 16; ++i) {
      const double v = c.values(row, i);
      if (layout.source.contains(i)) {
        source += v;
      } else if (i >= layout.response_start && i < t) {
        prefix += v;
      } else {
        other += v;
      }
    }
    CHECK(std::abs(source + prefix + other - 1.0) <= 1e-9);
  }
}
