#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "faithmt/checkpoint.hpp"
#include "faithmt/run_config.hpp"

namespace fs = std::filesystem;
using namespace faithmt;

namespace {

// Every config leaf becomes a dotted flag (--tuning.beta 0.15); a few leaves
// get short aliases. Precedence: defaults < --config file < flags.
struct ConfigCli {
  Json config = default_run_config();
  std::string config_path;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, const std::map<std::string, std::string>& aliases = {}) {
    app->add_option("--config", config_path, "JSON config file");
    for (const std::string& path : config_leaf_paths(config)) {
      std::string names = "--" + path;
      const auto alias = aliases.find(path);
      if (alias != aliases.end()) names += "," + alias->second;
      CLI::Option* opt = app->add_option(names, values[path], "");
      opt->group("config overrides");
      options.emplace_back(path, opt);
    }
  }

  Json resolve() {
    Json cfg = default_run_config();
    if (!config_path.empty()) merge_config(cfg, load_json_file(config_path));
    for (const auto& [path, opt] : options) {
      if (opt->count() > 0) set_config_value(cfg, path, values[path]);
    }
    return cfg;
  }
};

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string compact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void require_dir(const std::string& path) {
  if (!fs::is_directory(path)) {
    throw IoError("output directory does not exist: " + path);
  }
}

TrainMode mode_from_string(std::string mode) {
  std::replace(mode.begin(), mode.end(), '-', '_');
  if (mode == "vanilla") return TrainMode::vanilla;
  if (mode == "target_constrained") return TrainMode::target_constrained;
  throw UsageError("unknown tuning mode: " + mode);
}

Json seeds_json(const Vocab& vocab) {
  return Json{{"gen_seed", vocab.seed},
              {"permutation_seed", vocab.gen_config.permutation_seed}};
}

struct LoadedData {
  Vocab vocab;
  Corpus corpus;
};

LoadedData load_data(const std::string& vocab_path, const std::string& corpus_path) {
  LoadedData d;
  d.vocab = load_vocab(vocab_path);
  d.corpus = load_corpus_jsonl(corpus_path, d.vocab);
  return d;
}

int cmd_gen_data(const Json& cfg, const std::string& out_dir) {
  require_dir(out_dir);
  const GenConfig gen = gen_config_from(cfg);
  const uint64_t seed = gen_seed_from(cfg);
  const GeneratedCorpus generated = generate_cipher_corpus(gen, seed);
  save_corpus_jsonl(out_dir + "/corpus.jsonl", generated.corpus, generated.vocab);
  save_vocab(out_dir + "/vocab.json", generated.vocab);
  for (const char* split : {"train", "dev", "test", "bait"}) {
    std::cout << split << " " << generated.corpus.split(split).size() << "\n";
  }
  std::cout << "seed " << seed << "\n";
  return 0;
}

int cmd_train(const Json& cfg, const std::string& corpus_path, const std::string& vocab_path,
              const std::string& out_dir) {
  require_dir(out_dir);
  const LoadedData data = load_data(vocab_path, corpus_path);
  const ModelConfig model_cfg = model_config_from(cfg, data.vocab.size());
  const TuningConfig tuning_cfg = tuning_config_from(cfg);
  const TrainMode mode = mode_from_string(cfg.at("tuning").at("mode").get<std::string>());

  const TrainResult result = train(data.corpus, data.vocab, model_cfg, tuning_cfg, mode,
                                   [&](int epoch, const Parameters& p) {
                                     save_checkpoint(out_dir + "/checkpoint_epoch_" +
                                                         std::to_string(epoch) + ".json",
                                                     p);
                                   });
  save_checkpoint(out_dir + "/checkpoint.json",
                  result.log.epochs.empty()
                      ? init_parameters(model_cfg, model_cfg.seed)
                      : result.params);

  std::string log_csv = "step,epoch,loss_total,loss_nll,loss_kl,grad_norm\n";
  for (const TrainStepLog& s : result.log.steps) {
    log_csv += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," +
               compact(s.loss_total) + "," + compact(s.loss_nll) + "," + compact(s.loss_kl) +
               "," + compact(s.grad_norm) + "\n";
  }
  write_text_file(out_dir + "/log.csv", log_csv);

  std::string epochs_csv = "epoch,dev_bleu\n";
  for (const TrainEpochLog& e : result.log.epochs) {
    epochs_csv += std::to_string(e.epoch) + "," + compact(e.dev_bleu) + "\n";
  }
  write_text_file(out_dir + "/epochs.csv", epochs_csv);

  Json meta;
  meta["mode"] = cfg.at("tuning").at("mode");
  meta["seeds"] = seeds_json(data.vocab);
  meta["seeds"]["model_seed"] = model_cfg.seed;
  meta["seeds"]["tuning_seed"] = tuning_cfg.seed;
  meta["config"] = cfg;
  write_text_file(out_dir + "/train_meta.json", meta.dump(1) + "\n");

  std::cout << "steps " << result.log.steps.size() << "\n";
  if (!result.log.steps.empty()) {
    std::cout << "final_loss " << compact(result.log.steps.back().loss_total) << "\n";
  }
  for (const TrainEpochLog& e : result.log.epochs) {
    std::cout << "epoch " << e.epoch << " dev_bleu " << compact(e.dev_bleu) << "\n";
  }
  return 0;
}

Json strategy_hyperparameters(const EvalOptions& opts, const Parameters& params) {
  Json h;
  h["model_seed"] = params.config.seed;
  switch (opts.decode.strategy) {
    case DecodeConfig::Strategy::greedy:
      break;
    case DecodeConfig::Strategy::contrastive:
      h["alpha"] = opts.decode.mmi_alpha;
      break;
    case DecodeConfig::Strategy::reweight:
      h["anchor"] = opts.decode.alignment.strategy == AnchorStrategy::monotonic ? "monotonic"
                    : opts.decode.alignment.strategy == AnchorStrategy::global
                        ? "global"
                        : "contribution_guided";
      h["window"] = opts.decode.alignment.window_radius;
      h["omega"] = opts.decode.alignment.scale;
      break;
  }
  return h;
}

int cmd_translate(const Json& cfg, const std::string& checkpoint_path,
                  const std::string& corpus_path, const std::string& vocab_path,
                  const std::string& split, const std::string& out_path) {
  const LoadedData data = load_data(vocab_path, corpus_path);
  const Parameters params = load_checkpoint(checkpoint_path);
  EvalOptions opts = eval_options_from(cfg);
  opts.attribution = true;  // records carry per-step source contributions
  const std::string strategy = cfg.at("decode").at("strategy").get<std::string>();

  const std::vector<const Example*> examples = data.corpus.split(split);
  if (examples.empty()) throw EmptyInputError("split '" + split + "' is empty");

  std::string out;
  for (const Example* e : examples) {
    Json rec;
    rec["id"] = e->id;
    rec["strategy"] = strategy;
    rec["hyperparameters"] = strategy_hyperparameters(opts, params);
    try {
      const ExampleResult r = run_example(params, *e, opts);
      rec["tokens"] = data.vocab.render(r.generated);
      rec["source_contribution"] = r.source_curve;
    } catch (const DomainError& err) {
      rec["error"] = err.what();
    }
    out += rec.dump() + "\n";
  }
  write_text_file(out_path, out);
  std::cout << "records " << examples.size() << "\n";
  return 0;
}

int cmd_attribute(const Json& cfg, const std::string& checkpoint_path,
                  const std::string& corpus_path, const std::string& vocab_path, int example_id,
                  const std::string& out_prefix) {
  const LoadedData data = load_data(vocab_path, corpus_path);
  const Parameters params = load_checkpoint(checkpoint_path);
  EvalOptions opts = eval_options_from(cfg);
  const Example& example = data.corpus.by_id(example_id);

  const Prompt prompt = build_prompt(example.source, Direction::forward,
                                     params.config.max_seq_len);
  ExampleResult res = run_example(params, example, opts);
  if (!res.scored) throw EmptyCurveError("example produced no attributable step");

  // Rebuild the contribution matrix for the heatmap.
  std::vector<int> seq = prompt.tokens;
  seq.insert(seq.end(), res.generated.begin(), res.generated.end());
  if (static_cast<int>(seq.size()) > params.config.max_seq_len) {
    seq.resize(params.config.max_seq_len);
  }
  std::optional<AttentionReweight> replay;
  if (opts.decode.strategy == DecodeConfig::Strategy::reweight) {
    ReweightDecodeResult r = reweight_decode(params, prompt, opts.decode.alignment, opts.decode);
    replay = std::move(r.replay);
  }
  const ForwardResult fwd = forward(params, seq, true, replay ? &*replay : nullptr);
  const ContributionMatrix c = contribution_matrix(params, *fwd.trace, prompt.layout);

  std::string heatmap = "step";
  for (int tok : seq) heatmap += "," + data.vocab.symbol(tok);
  heatmap += "\n";
  const int t_len = static_cast<int>(seq.size());
  for (int t = prompt.layout.response_start; t < t_len; ++t) {
    // Rows are row-stochastic; compensate the 6-decimal rounding residue in
    // the largest cell so the printed row still sums to 1 within 1e-6.
    std::vector<double> cells(t_len);
    double sum = 0;
    int largest = 0;
    for (int i = 0; i < t_len; ++i) {
      cells[i] = std::round(c.values(t - 1, i) * 1e6) / 1e6;
      sum += cells[i];
      if (cells[i] > cells[largest]) largest = i;
    }
    cells[largest] += 1.0 - sum;
    heatmap += std::to_string(t - prompt.layout.response_start + 1);
    for (int i = 0; i < t_len; ++i) heatmap += "," + fixed6(cells[i]);
    heatmap += "\n";
  }
  write_text_file(out_prefix + ".heatmap.csv", heatmap);

  std::string curves = "step,source_contribution,source_entropy,entropy_defined\n";
  for (size_t k = 0; k < res.source_curve.size(); ++k) {
    const EntropyPoint& ep = res.entropy_curve[k];
    curves += std::to_string(k + 1) + "," + fixed6(res.source_curve[k]) + "," +
              fixed6(ep.defined ? ep.value : kUndefinedEntropy) + "," +
              (ep.defined ? "1" : "0") + "\n";
  }
  write_text_file(out_prefix + ".curves.csv", curves);

  Json meta;
  meta["id"] = example.id;
  meta["strategy"] = cfg.at("decode").at("strategy");
  meta["tokens"] = seq;
  meta["symbols"] = data.vocab.render(seq);
  meta["instruction_span"] = {prompt.layout.instruction.begin, prompt.layout.instruction.end};
  meta["source_span"] = {prompt.layout.source.begin, prompt.layout.source.end};
  meta["response_start"] = prompt.layout.response_start;
  meta["unfaithfulness"] = res.unfaithfulness;
  meta["seeds"] = seeds_json(data.vocab);
  meta["seeds"]["model_seed"] = params.config.seed;
  write_text_file(out_prefix + ".meta.json", meta.dump(1) + "\n");
  std::cout << "steps " << res.steps << "\n";
  return 0;
}

int cmd_eval(const Json& cfg, const std::string& checkpoint_path, const std::string& corpus_path,
             const std::string& vocab_path, const std::string& split,
             const std::string& out_path) {
  const LoadedData data = load_data(vocab_path, corpus_path);
  const Parameters params = load_checkpoint(checkpoint_path);
  const EvalOptions opts = eval_options_from(cfg);
  const MetricsReport report = evaluate(params, data.corpus, split, opts);
  Json doc = report_to_json(report, data.vocab);
  doc["split"] = split;
  doc["strategy"] = cfg.at("decode").at("strategy");
  doc["seeds"] = seeds_json(data.vocab);
  doc["seeds"]["model_seed"] = params.config.seed;
  write_text_file(out_path, doc.dump(1) + "\n");
  std::cout << "bleu " << compact(report.bleu) << "\n";
  if (report.attribution) {
    std::cout << "mean_source_contribution " << compact(report.mean_source_contribution) << "\n";
    std::cout << "unfaithfulness_rate " << compact(report.unfaithfulness_rate) << "\n";
  }
  return 0;
}

int cmd_filter_unfaithful(const Json& cfg, const std::string& checkpoint_path,
                          const std::string& corpus_path, const std::string& vocab_path,
                          const std::string& split, int k, const std::string& out_path) {
  const LoadedData data = load_data(vocab_path, corpus_path);
  const Parameters params = load_checkpoint(checkpoint_path);
  EvalOptions opts = eval_options_from(cfg);
  opts.attribution = true;
  const MetricsReport report = evaluate(params, data.corpus, split, opts);

  std::vector<const ExampleResult*> scored;
  for (const ExampleResult& r : report.records) {
    if (r.ok && r.scored) scored.push_back(&r);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ExampleResult* a, const ExampleResult* b) {
                     if (a->unfaithfulness != b->unfaithfulness) {
                       return a->unfaithfulness < b->unfaithfulness;
                     }
                     return a->id < b->id;
                   });
  if (k >= 0 && static_cast<int>(scored.size()) > k) scored.resize(k);

  std::string out;
  for (const ExampleResult* r : scored) {
    const Example& e = data.corpus.by_id(r->id);
    Json rec;
    rec["id"] = r->id;
    rec["unfaithfulness_score"] = r->unfaithfulness;
    rec["source"] = data.vocab.render(e.source);
    rec["target"] = data.vocab.render(e.target);
    rec["hypothesis"] = data.vocab.render(r->generated);
    rec["flagged"] = r->unfaithfulness < opts.tau;
    out += rec.dump() + "\n";
  }
  write_text_file(out_path, out);
  std::cout << "returned " << scored.size() << " of " << report.records.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale decoder-only translation lab: data, tuning, decoding, attribution"};
  app.require_subcommand(1);

  ConfigCli gen_cfg, train_cfg, translate_cfg, attribute_cfg, eval_cfg, filter_cfg;
  std::string out_dir, corpus_path, vocab_path, checkpoint_path, split = "test", out_path;
  int example_id = -1;
  int top_k = -1;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic cipher corpus");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen_cfg.attach(gen);

  CLI::App* tr = app.add_subcommand("train", "instruction-tune a model on a corpus");
  tr->add_option("--corpus", corpus_path)->required();
  tr->add_option("--vocab", vocab_path)->required();
  tr->add_option("--out", out_dir)->required();
  bool no_dropout = false;
  tr->add_flag("--no-dropout", no_dropout, "force tuning.dropout = 0");
  train_cfg.attach(tr, {{"tuning.mode", "--mode"},
                        {"tuning.epochs", "--epochs"},
                        {"tuning.beta", "--beta"},
                        {"tuning.lambda", "--lambda"},
                        {"tuning.lr", "--lr"},
                        {"tuning.batch_size", "--batch-size"}});

  CLI::App* xl = app.add_subcommand("translate", "decode a corpus split");
  xl->add_option("--checkpoint", checkpoint_path)->required();
  xl->add_option("--corpus", corpus_path)->required();
  xl->add_option("--vocab", vocab_path)->required();
  xl->add_option("--split", split);
  xl->add_option("--out", out_path)->required();
  translate_cfg.attach(xl, {{"decode.strategy", "--strategy"},
                            {"decode.alpha", "--alpha"},
                            {"decode.omega", "--omega"},
                            {"decode.window", "--window"},
                            {"decode.anchor", "--anchor"},
                            {"decode.max_new_tokens", "--max-new-tokens"}});

  CLI::App* at = app.add_subcommand("attribute", "emit heatmap and curve CSVs for one example");
  at->add_option("--checkpoint", checkpoint_path)->required();
  at->add_option("--corpus", corpus_path)->required();
  at->add_option("--vocab", vocab_path)->required();
  at->add_option("--id", example_id, "example id")->required();
  at->add_option("--out-prefix", out_path)->required();
  attribute_cfg.attach(at, {{"decode.strategy", "--strategy"},
                            {"decode.omega", "--omega"},
                            {"decode.window", "--window"},
                            {"decode.anchor", "--anchor"}});

  CLI::App* ev = app.add_subcommand("eval", "decode a split and report metrics");
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--corpus", corpus_path)->required();
  ev->add_option("--vocab", vocab_path)->required();
  ev->add_option("--split", split);
  ev->add_option("--out", out_path)->required();
  eval_cfg.attach(ev, {{"decode.strategy", "--strategy"},
                       {"decode.alpha", "--alpha"},
                       {"decode.omega", "--omega"},
                       {"decode.window", "--window"},
                       {"decode.anchor", "--anchor"},
                       {"eval.tau", "--tau"},
                       {"eval.jobs", "--jobs"}});

  CLI::App* fu = app.add_subcommand("filter-unfaithful", "rank examples by unfaithfulness score");
  fu->add_option("--checkpoint", checkpoint_path)->required();
  fu->add_option("--corpus", corpus_path)->required();
  fu->add_option("--vocab", vocab_path)->required();
  fu->add_option("--split", split);
  fu->add_option("--k", top_k, "keep the k lowest-scoring examples");
  fu->add_option("--out", out_path)->required();
  filter_cfg.attach(fu, {{"decode.strategy", "--strategy"},
                         {"eval.tau", "--tau"},
                         {"eval.jobs", "--jobs"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_cfg.resolve(), out_dir);
    if (tr->parsed()) {
      Json cfg = train_cfg.resolve();
      if (no_dropout) cfg["tuning"]["dropout"] = 0.0;
      return cmd_train(cfg, corpus_path, vocab_path, out_dir);
    }
    if (xl->parsed()) {
      return cmd_translate(translate_cfg.resolve(), checkpoint_path, corpus_path, vocab_path,
                           split, out_path);
    }
    if (at->parsed()) {
      return cmd_attribute(attribute_cfg.resolve(), checkpoint_path, corpus_path, vocab_path,
                           example_id, out_path);
    }
    if (ev->parsed()) {
      return cmd_eval(eval_cfg.resolve(), checkpoint_path, corpus_path, vocab_path, split,
                      out_path);
    }
    if (fu->parsed()) {
      return cmd_filter_unfaithful(filter_cfg.resolve(), checkpoint_path, corpus_path,
                                   vocab_path, split, top_k, out_path);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
