#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "faithmt/attribution.hpp"
#include "faithmt/corpus.hpp"
#include "faithmt/decode.hpp"
#include "faithmt/tuning.hpp"

namespace faithmt {

struct EvalOptions {
  DecodeConfig decode;
  bool attribution = true;
  double tau = 0.0;  // unfaithfulness threshold: score < tau flags an example
  int jobs = 1;
};

// Decode of one example plus (optionally) the attribution of the decoded
// sequence under the same attention modifications the decode used.
struct ExampleResult {
  int id = 0;
  bool ok = true;
  std::string error;
  std::vector<int> generated;
  int steps = 0;
  std::vector<double> source_curve;
  std::vector<EntropyPoint> entropy_curve;
  double unfaithfulness = 0;
  bool scored = false;  // false when the generation has no attributable step
};

ExampleResult run_example(const Parameters& params, const Example& example,
                          const EvalOptions& options);

struct MetricsReport {
  double bleu = 0;
  int example_count = 0;
  int failed_count = 0;
  bool attribution = false;
  double tau = 0;
  // Step-weighted means over all attributable steps of all examples.
  double mean_source_contribution = 0;
  double mean_source_entropy = 0;
  long total_steps = 0;
  long entropy_defined_steps = 0;
  int scored_examples = 0;
  double unfaithfulness_rate = 0;  // among scored examples
  std::vector<ExampleResult> records;
};

MetricsReport evaluate(const Parameters& params, const Corpus& corpus, std::string_view split,
                       const EvalOptions& options);

nlohmann::ordered_json report_to_json(const MetricsReport& report, const Vocab& vocab);

}  // namespace faithmt
