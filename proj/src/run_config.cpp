#include "faithmt/run_config.hpp"

#include <fstream>

namespace faithmt {

Json default_run_config() {
  Json cfg;
  cfg["model"] = {{"d_model", 64},      {"n_heads", 4},  {"d_ff", 128},
                  {"n_layers", 2},      {"max_seq_len", 64}, {"seed", 1}};
  cfg["gen"] = {{"vocab_size", 32},   {"min_len", 4},        {"max_len", 10},
                {"train_size", 2000}, {"dev_size", 200},     {"test_size", 200},
                {"bait_size", 200},   {"permutation_seed", 13}, {"bait_fraction", 1.0},
                {"reorder", false},   {"seed", 11}};
  cfg["tuning"] = {{"mode", "vanilla"},   {"beta", 0.15},        {"lambda", 0.5},
                   {"lr", 1e-3},          {"epochs", 3},         {"batch_size", 32},
                   {"optimizer", "adam"}, {"lr_schedule", "constant"},
                   {"adam_beta1", 0.9},   {"adam_beta2", 0.999},
                   {"adam_eps", 1e-8},    {"dropout", 0.0},      {"seed", 5},
                   {"dev_bleu_cap", 128}};
  cfg["decode"] = {{"strategy", "greedy"}, {"alpha", 0.5},  {"anchor", "monotonic"},
                   {"window", 9},          {"omega", 0.5},  {"max_new_tokens", 32},
                   {"reweight_layers", Json::array()}};
  cfg["eval"] = {{"tau", 0.0}, {"attribution", true}, {"jobs", 1}};
  return cfg;
}

void merge_config(Json& base, const Json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) {
    throw UsageError("config node " + (prefix.empty() ? "<root>" : prefix) +
                     " must be an object");
  }
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw UsageError("unknown config key: " + path);
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else {
      if (value.is_object()) throw UsageError("config key " + path + " is not a section");
      slot = value;
    }
  }
}

namespace {

void collect_paths(const Json& node, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      collect_paths(value, path, out);
    } else {
      out.push_back(path);
    }
  }
}

Json* find_leaf(Json& config, const std::string& dotted_path) {
  Json* node = &config;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted_path.find('.', start);
    const std::string key = dotted_path.substr(start, dot - start);
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

}  // namespace

std::vector<std::string> config_leaf_paths(const Json& config) {
  std::vector<std::string> out;
  collect_paths(config, "", out);
  return out;
}

void set_config_value(Json& config, const std::string& dotted_path, const std::string& value) {
  Json* leaf = find_leaf(config, dotted_path);
  if (!leaf) throw UsageError("unknown config key: " + dotted_path);
  try {
    if (leaf->is_string()) {
      *leaf = value;
    } else {
      // Parse by JSON syntax so numbers, booleans, and arrays all work.
      *leaf = Json::parse(value);
    }
  } catch (const nlohmann::json::exception&) {
    throw UsageError("cannot parse value for " + dotted_path + ": " + value);
  }
}

Json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open file: " + path);
  try {
    Json doc;
    f >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open file for writing: " + path);
  f << text;
  if (!f) throw IoError("failed writing file: " + path);
}

ModelConfig model_config_from(const Json& config, int vocab_size) {
  const Json& m = config.at("model");
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = m.at("d_model").get<int>();
  cfg.n_heads = m.at("n_heads").get<int>();
  cfg.d_ff = m.at("d_ff").get<int>();
  cfg.n_layers = m.at("n_layers").get<int>();
  cfg.max_seq_len = m.at("max_seq_len").get<int>();
  cfg.seed = m.at("seed").get<uint64_t>();
  return cfg;
}

GenConfig gen_config_from(const Json& config) {
  const Json& g = config.at("gen");
  GenConfig cfg;
  cfg.vocab_size = g.at("vocab_size").get<int>();
  cfg.min_len = g.at("min_len").get<int>();
  cfg.max_len = g.at("max_len").get<int>();
  cfg.train_size = g.at("train_size").get<int>();
  cfg.dev_size = g.at("dev_size").get<int>();
  cfg.test_size = g.at("test_size").get<int>();
  cfg.bait_size = g.at("bait_size").get<int>();
  cfg.permutation_seed = g.at("permutation_seed").get<uint64_t>();
  cfg.bait_fraction = g.at("bait_fraction").get<double>();
  cfg.reorder = g.at("reorder").get<bool>();
  return cfg;
}

uint64_t gen_seed_from(const Json& config) { return config.at("gen").at("seed").get<uint64_t>(); }

TuningConfig tuning_config_from(const Json& config) {
  const Json& t = config.at("tuning");
  TuningConfig cfg;
  cfg.beta = t.at("beta").get<double>();
  cfg.lambda = t.at("lambda").get<double>();
  cfg.learning_rate = t.at("lr").get<double>();
  cfg.epochs = t.at("epochs").get<int>();
  cfg.batch_size = t.at("batch_size").get<int>();
  const std::string opt = t.at("optimizer").get<std::string>();
  if (opt == "adam") {
    cfg.optimizer = TuningConfig::Optimizer::adam;
  } else if (opt == "sgd") {
    cfg.optimizer = TuningConfig::Optimizer::sgd;
  } else {
    throw UsageError("unknown optimizer: " + opt);
  }
  const std::string sched = t.at("lr_schedule").get<std::string>();
  if (sched == "constant") {
    cfg.lr_schedule = TuningConfig::Schedule::constant;
  } else if (sched == "linear") {
    cfg.lr_schedule = TuningConfig::Schedule::linear;
  } else {
    throw UsageError("unknown lr schedule: " + sched);
  }
  cfg.adam_beta1 = t.at("adam_beta1").get<double>();
  cfg.adam_beta2 = t.at("adam_beta2").get<double>();
  cfg.adam_eps = t.at("adam_eps").get<double>();
  cfg.dropout = t.at("dropout").get<double>();
  cfg.seed = t.at("seed").get<uint64_t>();
  cfg.dev_bleu_cap = t.at("dev_bleu_cap").get<int>();
  return cfg;
}

DecodeConfig decode_config_from(const Json& config) {
  const Json& d = config.at("decode");
  DecodeConfig cfg;
  const std::string strategy = d.at("strategy").get<std::string>();
  if (strategy == "greedy") {
    cfg.strategy = DecodeConfig::Strategy::greedy;
  } else if (strategy == "contrastive") {
    cfg.strategy = DecodeConfig::Strategy::contrastive;
  } else if (strategy == "reweight") {
    cfg.strategy = DecodeConfig::Strategy::reweight;
  } else {
    throw UsageError("unknown decode strategy: " + strategy);
  }
  cfg.mmi_alpha = d.at("alpha").get<double>();
  const std::string anchor = d.at("anchor").get<std::string>();
  if (anchor == "monotonic") {
    cfg.alignment.strategy = AnchorStrategy::monotonic;
  } else if (anchor == "contribution" || anchor == "contribution_guided") {
    cfg.alignment.strategy = AnchorStrategy::contribution_guided;
  } else if (anchor == "global") {
    cfg.alignment.strategy = AnchorStrategy::global;
  } else {
    throw UsageError("unknown anchor strategy: " + anchor);
  }
  cfg.alignment.window_radius = d.at("window").get<int>();
  cfg.alignment.scale = d.at("omega").get<double>();
  cfg.alignment.layers = d.at("reweight_layers").get<std::vector<int>>();
  cfg.max_new_tokens = d.at("max_new_tokens").get<int>();
  return cfg;
}

EvalOptions eval_options_from(const Json& config) {
  EvalOptions opts;
  opts.decode = decode_config_from(config);
  const Json& e = config.at("eval");
  opts.tau = e.at("tau").get<double>();
  opts.attribution = e.at("attribution").get<bool>();
  opts.jobs = e.at("jobs").get<int>();
  return opts;
}

}  // namespace faithmt
