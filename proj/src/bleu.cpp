#include "faithmt/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "faithmt/common.hpp"

namespace faithmt {

namespace {

constexpr int kMaxOrder = 4;

using NgramCounts = std::map<std::vector<int>, long>;

NgramCounts count_ngrams(const std::vector<int>& tokens, int n) {
  NgramCounts counts;
  for (int i = 0; i + n <= static_cast<int>(tokens.size()); ++i) {
    ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references) {
  if (hypotheses.size() != references.size()) {
    throw ShapeError("hypothesis and reference counts differ");
  }
  if (hypotheses.empty()) throw EmptyInputError("empty hypothesis set");
  for (const auto& r : references) {
    if (r.empty()) throw EmptyInputError("empty reference");
  }

  long correct[kMaxOrder] = {0, 0, 0, 0};
  long total[kMaxOrder] = {0, 0, 0, 0};
  long hyp_len = 0;
  long ref_len = 0;
  for (size_t p = 0; p < hypotheses.size(); ++p) {
    hyp_len += static_cast<long>(hypotheses[p].size());
    ref_len += static_cast<long>(references[p].size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      const NgramCounts hyp = count_ngrams(hypotheses[p], n);
      if (hyp.empty()) continue;
      const NgramCounts ref = count_ngrams(references[p], n);
      for (const auto& [gram, cnt] : hyp) {
        total[n - 1] += cnt;
        const auto it = ref.find(gram);
        if (it != ref.end()) correct[n - 1] += std::min(cnt, it->second);
      }
    }
  }

  double log_precision_sum = 0;
  double smooth = 1.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0) return 0.0;
    double precision;
    if (correct[n] == 0) {
      smooth *= 2.0;
      precision = 1.0 / (smooth * static_cast<double>(total[n]));
    } else {
      precision = static_cast<double>(correct[n]) / static_cast<double>(total[n]);
    }
    log_precision_sum += std::log(precision);
  }

  if (hyp_len == 0) return 0.0;
  const double bp =
      hyp_len >= ref_len ? 1.0
                         : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision_sum / kMaxOrder);
}

}  // namespace faithmt
