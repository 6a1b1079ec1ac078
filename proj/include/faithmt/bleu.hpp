#pragma once

#include <vector>

namespace faithmt {

// Corpus BLEU-4: geometric mean of modified n-gram precisions times the
// brevity penalty, scaled to [0, 100]. Zero numerators get exponential
// smoothing (1 / (2^k * total), k doubling per smoothed order); a zero
// denominator or an empty hypothesis corpus scores 0.
double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references);

}  // namespace faithmt
