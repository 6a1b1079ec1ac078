#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "faithmt/bleu.hpp"
#include "faithmt/evaluate.hpp"
#include "test_util.hpp"

using namespace faithmt;
using test::small_config;

namespace {

GenConfig small_gen() {
  GenConfig g;
  g.vocab_size = 16;
  g.min_len = 3;
  g.max_len = 6;
  g.train_size = 40;
  g.dev_size = 10;
  g.test_size = 10;
  g.bait_size = 8;
  g.permutation_seed = 2;
  return g;
}

}  // namespace

TEST_CASE("generator is deterministic and splits have the configured sizes") {
  const GenConfig g = small_gen();
  const GeneratedCorpus a = generate_cipher_corpus(g, 33);
  const GeneratedCorpus b = generate_cipher_corpus(g, 33);
  REQUIRE(a.corpus.examples.size() == b.corpus.examples.size());
  for (size_t i = 0; i < a.corpus.examples.size(); ++i) {
    CHECK(a.corpus.examples[i].source == b.corpus.examples[i].source);
    CHECK(a.corpus.examples[i].target == b.corpus.examples[i].target);
  }
  CHECK(a.vocab.cipher == b.vocab.cipher);
  CHECK(a.corpus.split("train").size() == 40);
  CHECK(a.corpus.split("dev").size() == 10);
  CHECK(a.corpus.split("test").size() == 10);
  CHECK(a.corpus.split("bait").size() == 8);
  const GeneratedCorpus c = generate_cipher_corpus(g, 34);
  bool any_diff = false;
  for (size_t i = 0; i < a.corpus.examples.size(); ++i) {
    any_diff = any_diff || a.corpus.examples[i].source != c.corpus.examples[i].source;
  }
  CHECK(any_diff);
}

TEST_CASE("cipher targets are the symbolwise permutation of sources") {
  const GenConfig g = small_gen();
  const GeneratedCorpus gc = generate_cipher_corpus(g, 44);
  const Vocab& v = gc.vocab;
  std::vector<int> inverse(g.vocab_size);
  for (int k = 0; k < g.vocab_size; ++k) inverse[v.cipher[k]] = k;
  for (const Example& e : gc.corpus.examples) {
    REQUIRE(e.target.size() == e.source.size());
    std::map<int, int> src_syms, tgt_syms;
    for (size_t i = 0; i < e.source.size(); ++i) {
      const int s = e.source[i] - special::kCount;
      const int t = e.target[i] - special::kCount - g.vocab_size;
      REQUIRE(s >= 0);
      REQUIRE(s < g.vocab_size);
      REQUIRE(t >= 0);
      REQUIRE(t < g.vocab_size);
      // inverse cipher recovers the source symbol (reorder off)
      CHECK(inverse[t] == s);
      ++src_syms[s];
      ++tgt_syms[t];
    }
    // multiset(target) = pi(multiset(source))
    for (const auto& [s, n] : src_syms) CHECK(tgt_syms[v.cipher[s]] == n);
  }
}

TEST_CASE("reorder swaps adjacent target pairs") {
  GenConfig g = small_gen();
  const GeneratedCorpus plain = generate_cipher_corpus(g, 55);
  g.reorder = true;
  const GeneratedCorpus swapped = generate_cipher_corpus(g, 55);
  for (size_t i = 0; i < plain.corpus.examples.size(); ++i) {
    const auto& a = plain.corpus.examples[i].target;
    const auto& b = swapped.corpus.examples[i].target;
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k + 1 < a.size(); k += 2) {
      CHECK(b[k] == a[k + 1]);
      CHECK(b[k + 1] == a[k]);
    }
    if (a.size() % 2 == 1) CHECK(b.back() == a.back());
  }
}

TEST_CASE("mask token and specials never appear in generated text") {
  const GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 66);
  for (const Example& e : gc.corpus.examples) {
    for (int t : e.source) CHECK(t >= special::kCount);
    for (int t : e.target) CHECK(t >= special::kCount + gc.vocab.lang_vocab_size);
  }
  for (int t : gc.vocab.opener) {
    CHECK(t >= special::kCount + gc.vocab.lang_vocab_size);
    CHECK(t != special::kMask);
  }
}

TEST_CASE("corpus and vocab round-trip through their files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "faithmt_corpus_test";
  fs::create_directories(dir);
  const GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 77);
  save_vocab((dir / "vocab.json").string(), gc.vocab);
  save_corpus_jsonl((dir / "corpus.jsonl").string(), gc.corpus, gc.vocab);
  const Vocab v2 = load_vocab((dir / "vocab.json").string());
  const Corpus c2 = load_corpus_jsonl((dir / "corpus.jsonl").string(), v2);
  CHECK(v2.cipher == gc.vocab.cipher);
  CHECK(v2.opener == gc.vocab.opener);
  CHECK(v2.bait_exposed == gc.vocab.bait_exposed);
  REQUIRE(c2.examples.size() == gc.corpus.examples.size());
  for (size_t i = 0; i < c2.examples.size(); ++i) {
    CHECK(c2.examples[i].source == gc.corpus.examples[i].source);
    CHECK(c2.examples[i].target == gc.corpus.examples[i].target);
    CHECK(c2.examples[i].split == gc.corpus.examples[i].split);
  }
  fs::remove_all(dir);
}

TEST_CASE("corpus bleu") {
  SUBCASE("identical corpora score 100") {
    const std::vector<std::vector<int>> refs = {{1, 2, 3, 4, 5}, {9, 8, 7, 6}};
    CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0).epsilon(1e-9));
  }
  SUBCASE("hand case: four-token prefix of a five-token reference") {
    const std::vector<std::vector<int>> hyp = {{1, 2, 3, 4}};
    const std::vector<std::vector<int>> ref = {{1, 2, 3, 4, 5}};
    const double want = 100.0 * std::exp(1.0 - 5.0 / 4.0);
    const double got = corpus_bleu(hyp, ref);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
    CHECK(std::abs(got - 77.88) <= 0.01);
  }
  SUBCASE("disjoint vocabulary scores below 1 but above 0") {
    std::vector<std::vector<int>> hyp, ref;
    for (int p = 0; p < 10; ++p) {
      hyp.push_back({1, 2, 3, 4, 5, 6});
      ref.push_back({11, 12, 13, 14, 15, 16});
    }
    const double got = corpus_bleu(hyp, ref);
    CHECK(got > 0.0);
    CHECK(got < 1.0);
  }
  SUBCASE("truncating hypotheses below the reference never raises the score") {
    const std::vector<int> ref = {1, 2, 3, 4, 5, 6, 7, 8};
    double prev = -1.0;
    for (int len = 4; len <= 7; ++len) {
      const std::vector<std::vector<int>> hyp = {
          std::vector<int>(ref.begin(), ref.begin() + len)};
      // precisions stay 1 on a prefix, so the score isolates the brevity
      // penalty factor
      const double score = corpus_bleu(hyp, {ref});
      CHECK(score >= prev);
      prev = score;
    }
    CHECK(prev < 100.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(corpus_bleu({}, {}), EmptyInputError);
    CHECK_THROWS_AS(corpus_bleu({{1}}, {}), ShapeError);
    CHECK_THROWS_AS(corpus_bleu({{1}}, {{}}), EmptyInputError);
  }
}

TEST_CASE("evaluate matches a per-field manual oracle on a hand corpus") {
  const GenConfig g = [] {
    GenConfig g;
    g.vocab_size = 12;
    g.min_len = 3;
    g.max_len = 4;
    g.train_size = 0;
    g.dev_size = 0;
    g.test_size = 3;
    g.bait_size = 0;
    g.permutation_seed = 5;
    return g;
  }();
  const GeneratedCorpus gc = generate_cipher_corpus(g, 88);
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 2, 48);
  const Parameters params = init_parameters(cfg, 123);

  EvalOptions opts;
  opts.decode.max_new_tokens = 6;
  opts.tau = 0.0;
  const MetricsReport report = evaluate(params, gc.corpus, "test", opts);
  REQUIRE(report.records.size() == 3);
  CHECK(report.example_count == 3);
  CHECK(report.failed_count == 0);

  // manual oracle: decode each example and recompute every field
  std::vector<std::vector<int>> hyps, refs;
  double contrib_sum = 0;
  long steps = 0;
  int flagged = 0, scored = 0;
  for (const Example* e : gc.corpus.split("test")) {
    const Prompt prompt = build_prompt(e->source, Direction::forward, cfg.max_seq_len);
    const auto gen = greedy_decode(params, prompt, opts.decode);
    hyps.push_back(gen);
    refs.push_back(e->target);
    if (gen.empty()) continue;
    std::vector<int> seq = prompt.tokens;
    seq.insert(seq.end(), gen.begin(), gen.end());
    const auto fwd = forward(params, seq, true);
    const ContributionMatrix c = contribution_matrix(params, *fwd.trace, prompt.layout);
    const auto curve = source_contribution_curve(c);
    for (double v : curve) contrib_sum += v;
    steps += static_cast<long>(curve.size());
    ++scored;
    if (unfaithfulness_score(c) < opts.tau) ++flagged;
  }
  CHECK(report.bleu == doctest::Approx(corpus_bleu(hyps, refs)).epsilon(1e-12));
  CHECK(report.total_steps == steps);
  CHECK(report.scored_examples == scored);
  if (steps > 0) {
    CHECK(report.mean_source_contribution ==
          doctest::Approx(contrib_sum / steps).epsilon(1e-12));
  }
  if (scored > 0) {
    CHECK(report.unfaithfulness_rate ==
          doctest::Approx(static_cast<double>(flagged) / scored).epsilon(1e-12));
  }
  for (size_t i = 0; i < report.records.size(); ++i) {
    CHECK(report.records[i].generated == hyps[i]);
  }
}

TEST_CASE("a model that reproduces gold exactly scores BLEU 100") {
  // construct perfection: set each example's reference to the model's own
  // greedy decode, then evaluate
  GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 144);
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 1, 48);
  const Parameters params = init_parameters(cfg, 9);
  EvalOptions opts;
  opts.decode.max_new_tokens = 6;
  int nonempty = 0;
  for (Example& e : gc.corpus.examples) {
    if (e.split != "test") continue;
    const Prompt prompt = build_prompt(e.source, Direction::forward, cfg.max_seq_len);
    const auto gen = greedy_decode(params, prompt, opts.decode);
    if (!gen.empty()) {
      e.target = gen;
      ++nonempty;
    }
  }
  REQUIRE(nonempty > 0);
  // drop examples whose decode was empty (their gold stayed nonempty)
  Corpus perfect;
  for (const Example& e : gc.corpus.examples) {
    if (e.split != "test") continue;
    perfect.examples.push_back(e);
  }
  const MetricsReport report = evaluate(params, perfect, "test", opts);
  if (nonempty == static_cast<int>(perfect.examples.size())) {
    CHECK(report.bleu == doctest::Approx(100.0).epsilon(1e-9));
  } else {
    CHECK(report.bleu > 0.0);
  }
}

TEST_CASE("a failing example is recorded, not fatal") {
  GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 155);
  // model too small to fit one oversized prompt
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 1, 16);
  const Parameters params = init_parameters(cfg, 10);
  Corpus corpus;
  for (const Example& e : gc.corpus.examples) {
    if (e.split == "test") corpus.examples.push_back(e);
  }
  REQUIRE(corpus.examples.size() >= 2);
  corpus.examples[0].source.assign(20, special::kCount + 1);  // prompt would need 26 slots
  EvalOptions opts;
  opts.decode.max_new_tokens = 4;
  const MetricsReport report = evaluate(params, corpus, "test", opts);
  CHECK(report.failed_count == 1);
  CHECK_FALSE(report.records[0].ok);
  CHECK(report.records[0].error.find("max_seq_len") != std::string::npos);
  CHECK(report.example_count == static_cast<int>(corpus.examples.size()));
}

TEST_CASE("attribution off drops contribution fields but keeps bleu") {
  const GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 99);
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 1, 48);
  const Parameters params = init_parameters(cfg, 5);
  EvalOptions opts;
  opts.attribution = false;
  opts.decode.max_new_tokens = 5;
  const MetricsReport report = evaluate(params, gc.corpus, "test", opts);
  CHECK(report.bleu >= 0.0);
  CHECK(report.total_steps == 0);
  CHECK(report.scored_examples == 0);
  const auto doc = report_to_json(report, gc.vocab);
  CHECK_FALSE(doc.contains("mean_source_contribution"));
  CHECK(doc.contains("bleu"));
}

TEST_CASE("tau above the score range flags every scored example") {
  const GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 111);
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 1, 48);
  const Parameters params = init_parameters(cfg, 6);
  EvalOptions opts;
  opts.tau = 1.1;  // scores live in [-1, 1]
  opts.decode.max_new_tokens = 5;
  const MetricsReport report = evaluate(params, gc.corpus, "test", opts);
  if (report.scored_examples > 0) {
    CHECK(report.unfaithfulness_rate == doctest::Approx(1.0));
  }
  for (const ExampleResult& r : report.records) {
    if (r.scored) {
      CHECK(r.unfaithfulness >= -1.0 - 1e-9);
      CHECK(r.unfaithfulness <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("parallel evaluation matches the sequential reduction") {
  const GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 122);
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 1, 48);
  const Parameters params = init_parameters(cfg, 7);
  EvalOptions seq, par;
  seq.decode.max_new_tokens = par.decode.max_new_tokens = 5;
  seq.jobs = 1;
  par.jobs = 3;
  const MetricsReport a = evaluate(params, gc.corpus, "train", seq);
  const MetricsReport b = evaluate(params, gc.corpus, "train", par);
  CHECK(report_to_json(a, gc.vocab).dump() == report_to_json(b, gc.vocab).dump());
}

TEST_CASE("evaluate rejects an unknown split") {
  const GeneratedCorpus gc = generate_cipher_corpus(small_gen(), 133);
  const ModelConfig cfg = small_config(gc.vocab.size(), 16, 2, 24, 1, 48);
  const Parameters params = init_parameters(cfg, 8);
  CHECK_THROWS_AS(evaluate(params, gc.corpus, "nope", EvalOptions{}), EmptyInputError);
}
