#include "faithmt/evaluate.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "faithmt/bleu.hpp"

namespace faithmt {

ExampleResult run_example(const Parameters& params, const Example& example,
                          const EvalOptions& options) {
  ExampleResult res;
  res.id = example.id;
  const Prompt prompt = build_prompt(example.source, Direction::forward,
                                     params.config.max_seq_len);

  std::optional<AttentionReweight> replay;
  switch (options.decode.strategy) {
    case DecodeConfig::Strategy::greedy:
      res.generated = greedy_decode(params, prompt, options.decode);
      break;
    case DecodeConfig::Strategy::contrastive:
      res.generated = contrastive_decode(params, prompt, options.decode.mmi_alpha, options.decode);
      break;
    case DecodeConfig::Strategy::reweight: {
      ReweightDecodeResult r =
          reweight_decode(params, prompt, options.decode.alignment, options.decode);
      res.generated = std::move(r.tokens);
      replay = std::move(r.replay);
      break;
    }
  }

  if (!options.attribution) return res;

  // Attribute the final sequence, replaying the decode-time attention
  // reweighting so contributions describe the attention that actually
  // produced the tokens.
  std::vector<int> seq = prompt.tokens;
  seq.insert(seq.end(), res.generated.begin(), res.generated.end());
  if (static_cast<int>(seq.size()) > params.config.max_seq_len) {
    seq.resize(params.config.max_seq_len);
  }
  if (static_cast<int>(seq.size()) <= prompt.layout.response_start) {
    return res;  // nothing to attribute
  }
  const ForwardResult fwd =
      forward(params, seq, /*capture_trace=*/true, replay ? &*replay : nullptr);
  const ContributionMatrix c = contribution_matrix(params, *fwd.trace, prompt.layout);
  res.source_curve = source_contribution_curve(c);
  res.entropy_curve = source_entropy_curve(c);
  res.unfaithfulness = unfaithfulness_score(c);
  res.scored = true;
  res.steps = static_cast<int>(res.source_curve.size());
  return res;
}

MetricsReport evaluate(const Parameters& params, const Corpus& corpus, std::string_view split,
                       const EvalOptions& options) {
  const std::vector<const Example*> examples = corpus.split(split);
  if (examples.empty()) {
    throw EmptyInputError("split '" + std::string(split) + "' is empty");
  }

  MetricsReport report;
  report.attribution = options.attribution;
  report.tau = options.tau;
  report.example_count = static_cast<int>(examples.size());
  report.records.resize(examples.size());

  const int jobs = std::max(1, options.jobs);
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= examples.size()) break;
      try {
        report.records[i] = run_example(params, *examples[i], options);
      } catch (const std::exception& e) {
        ExampleResult bad;
        bad.id = examples[i]->id;
        bad.ok = false;
        bad.error = e.what();
        report.records[i] = std::move(bad);
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  // Deterministic reduction in example order.
  std::vector<std::vector<int>> hyps, refs;
  double contrib_sum = 0;
  double entropy_sum = 0;
  int flagged = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    const ExampleResult& r = report.records[i];
    if (!r.ok) {
      ++report.failed_count;
      continue;
    }
    hyps.push_back(r.generated);
    refs.push_back(examples[i]->target);
    if (!options.attribution || !r.scored) continue;
    ++report.scored_examples;
    report.total_steps += r.steps;
    for (double v : r.source_curve) contrib_sum += v;
    for (const EntropyPoint& p : r.entropy_curve) {
      if (p.defined) {
        entropy_sum += p.value;
        ++report.entropy_defined_steps;
      }
    }
    if (r.unfaithfulness < options.tau) ++flagged;
  }
  if (hyps.empty()) throw EmptyInputError("every example failed to decode");
  report.bleu = corpus_bleu(hyps, refs);
  if (report.total_steps > 0) {
    report.mean_source_contribution = contrib_sum / static_cast<double>(report.total_steps);
  }
  if (report.entropy_defined_steps > 0) {
    report.mean_source_entropy = entropy_sum / static_cast<double>(report.entropy_defined_steps);
  }
  if (report.scored_examples > 0) {
    report.unfaithfulness_rate = static_cast<double>(flagged) / report.scored_examples;
  }
  return report;
}

nlohmann::ordered_json report_to_json(const MetricsReport& report, const Vocab& vocab) {
  nlohmann::ordered_json doc;
  doc["bleu"] = report.bleu;
  doc["examples"] = report.example_count;
  doc["failed"] = report.failed_count;
  if (report.attribution) {
    doc["tau"] = report.tau;
    doc["mean_source_contribution"] = report.mean_source_contribution;
    doc["mean_source_entropy"] = report.mean_source_entropy;
    doc["total_steps"] = report.total_steps;
    doc["entropy_defined_steps"] = report.entropy_defined_steps;
    doc["scored_examples"] = report.scored_examples;
    doc["unfaithfulness_rate"] = report.unfaithfulness_rate;
  }
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const ExampleResult& r : report.records) {
    nlohmann::ordered_json rec;
    rec["id"] = r.id;
    if (!r.ok) {
      rec["error"] = r.error;
      records.push_back(std::move(rec));
      continue;
    }
    rec["hypothesis"] = vocab.render(r.generated);
    if (report.attribution) {
      rec["steps"] = r.steps;
      if (r.scored) {
        rec["unfaithfulness"] = r.unfaithfulness;
        rec["source_contribution"] = r.source_curve;
        double mean = 0;
        for (double v : r.source_curve) mean += v;
        rec["mean_source_contribution"] = r.steps ? mean / r.steps : 0.0;
      } else {
        rec["unfaithfulness"] = nullptr;
      }
    }
    records.push_back(std::move(rec));
  }
  doc["records"] = std::move(records);
  return doc;
}

}  // namespace faithmt
