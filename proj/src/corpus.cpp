#include "faithmt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace faithmt {

namespace {

using nlohmann::ordered_json;

const char* kSpecialSymbols[special::kCount] = {"<bos>", "<eos>", "<inst>", "<src>", "</src>",
                                                "<resp>", "<mask>", "<fwd>", "<rev>"};

constexpr int kOpenerLen = 3;

const char* kSplits[] = {"train", "dev", "test", "bait"};

}  // namespace

void GenConfig::validate() const {
  if (vocab_size < 8) throw ConfigError("language vocabulary too small for a permutation task");
  if (min_len < 1 || max_len < min_len) throw ConfigError("invalid sequence length range");
  if (train_size < 0 || dev_size < 0 || test_size < 0 || bait_size < 0) {
    throw ConfigError("split sizes must be nonnegative");
  }
  if (bait_fraction < 0 || bait_fraction > 1) throw ConfigError("bait fraction outside [0, 1]");
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || id >= size()) throw ShapeError("token id outside vocabulary");
  return symbols[id];
}

int Vocab::id_of(std::string_view symbol) const {
  for (int i = 0; i < size(); ++i) {
    if (symbols[i] == symbol) return i;
  }
  throw IoError("unknown symbol: " + std::string(symbol));
}

std::string Vocab::render(std::span<const int> tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += symbol(tokens[i]);
  }
  return out;
}

std::vector<int> Vocab::parse(std::string_view text) const {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(id_of(tok));
  return out;
}

std::vector<const Example*> Corpus::split(std::string_view name) const {
  std::vector<const Example*> out;
  for (const Example& e : examples) {
    if (e.split == name) out.push_back(&e);
  }
  return out;
}

const Example& Corpus::by_id(int id) const {
  for (const Example& e : examples) {
    if (e.id == id) return e;
  }
  throw IoError("no example with id " + std::to_string(id));
}

GeneratedCorpus generate_cipher_corpus(const GenConfig& config, uint64_t seed) {
  config.validate();
  GeneratedCorpus out;
  Vocab& vocab = out.vocab;
  vocab.gen_config = config;
  vocab.seed = seed;
  vocab.lang_vocab_size = config.vocab_size;
  vocab.symbols.assign(kSpecialSymbols, kSpecialSymbols + special::kCount);
  for (int k = 0; k < config.vocab_size; ++k) vocab.symbols.push_back("s" + std::to_string(k));
  for (int k = 0; k < config.vocab_size; ++k) vocab.symbols.push_back("t" + std::to_string(k));

  // Cipher permutation and the bait opener both come from the permutation
  // seed so the task definition is independent of the sampling seed.
  Rng perm_rng(config.permutation_seed);
  vocab.cipher.resize(config.vocab_size);
  for (int k = 0; k < config.vocab_size; ++k) vocab.cipher[k] = k;
  for (int k = config.vocab_size - 1; k > 0; --k) {
    std::swap(vocab.cipher[k], vocab.cipher[perm_rng.uniform_int(k + 1)]);
  }
  vocab.opener.clear();
  for (int k = 0; k < kOpenerLen; ++k) {
    vocab.opener.push_back(vocab.target_token(perm_rng.uniform_int(config.vocab_size)));
  }
  vocab.bait_exposed = static_cast<int>(std::lround(config.bait_fraction * config.bait_size));

  const int sizes[] = {config.train_size, config.dev_size, config.test_size, config.bait_size};
  int next_id = 0;
  for (int s = 0; s < 4; ++s) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(s)));
    for (int n = 0; n < sizes[s]; ++n) {
      Example ex;
      ex.id = next_id++;
      ex.split = kSplits[s];
      const int len = config.min_len + rng.uniform_int(config.max_len - config.min_len + 1);
      ex.source.reserve(len);
      ex.target.reserve(len);
      for (int i = 0; i < len; ++i) {
        const int sym = rng.uniform_int(config.vocab_size);
        ex.source.push_back(vocab.source_token(sym));
        ex.target.push_back(vocab.target_token(vocab.cipher[sym]));
      }
      if (config.reorder) {
        for (int i = 0; i + 1 < len; i += 2) std::swap(ex.target[i], ex.target[i + 1]);
      }
      out.corpus.examples.push_back(std::move(ex));
    }
  }
  return out;
}

void save_corpus_jsonl(const std::string& path, const Corpus& corpus, const Vocab& vocab) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open corpus file for writing: " + path);
  for (const Example& e : corpus.examples) {
    ordered_json line;
    line["id"] = e.id;
    line["source"] = vocab.render(e.source);
    line["target"] = vocab.render(e.target);
    line["split"] = e.split;
    f << line.dump() << "\n";
  }
  if (!f) throw IoError("failed writing corpus: " + path);
}

Corpus load_corpus_jsonl(const std::string& path, const Vocab& vocab) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Example ex;
    ex.id = j.at("id").get<int>();
    ex.source = vocab.parse(j.at("source").get<std::string>());
    ex.target = vocab.parse(j.at("target").get<std::string>());
    ex.split = j.at("split").get<std::string>();
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  ordered_json doc;
  doc["symbols"] = vocab.symbols;
  doc["lang_vocab_size"] = vocab.lang_vocab_size;
  doc["cipher"] = vocab.cipher;
  ordered_json opener = ordered_json::array();
  for (int id : vocab.opener) opener.push_back(vocab.symbol(id));
  doc["opener"] = std::move(opener);
  doc["bait_exposed"] = vocab.bait_exposed;
  doc["gen_config"] = {{"vocab_size", vocab.gen_config.vocab_size},
                       {"min_len", vocab.gen_config.min_len},
                       {"max_len", vocab.gen_config.max_len},
                       {"train_size", vocab.gen_config.train_size},
                       {"dev_size", vocab.gen_config.dev_size},
                       {"test_size", vocab.gen_config.test_size},
                       {"bait_size", vocab.gen_config.bait_size},
                       {"permutation_seed", vocab.gen_config.permutation_seed},
                       {"bait_fraction", vocab.gen_config.bait_fraction},
                       {"reorder", vocab.gen_config.reorder}};
  doc["seed"] = vocab.seed;
  std::ofstream f(path);
  if (!f) throw IoError("cannot open vocab file for writing: " + path);
  f << doc.dump(1) << "\n";
  if (!f) throw IoError("failed writing vocab: " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocab file: " + path);
  ordered_json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed vocab " + path + ": " + e.what());
  }
  Vocab v;
  v.symbols = doc.at("symbols").get<std::vector<std::string>>();
  v.lang_vocab_size = doc.at("lang_vocab_size").get<int>();
  v.cipher = doc.at("cipher").get<std::vector<int>>();
  for (const auto& s : doc.at("opener")) v.opener.push_back(v.id_of(s.get<std::string>()));
  v.bait_exposed = doc.at("bait_exposed").get<int>();
  const auto& g = doc.at("gen_config");
  v.gen_config.vocab_size = g.at("vocab_size").get<int>();
  v.gen_config.min_len = g.at("min_len").get<int>();
  v.gen_config.max_len = g.at("max_len").get<int>();
  v.gen_config.train_size = g.at("train_size").get<int>();
  v.gen_config.dev_size = g.at("dev_size").get<int>();
  v.gen_config.test_size = g.at("test_size").get<int>();
  v.gen_config.bait_size = g.at("bait_size").get<int>();
  v.gen_config.permutation_seed = g.at("permutation_seed").get<uint64_t>();
  v.gen_config.bait_fraction = g.at("bait_fraction").get<double>();
  v.gen_config.reorder = g.at("reorder").get<bool>();
  v.seed = doc.at("seed").get<uint64_t>();
  if (v.size() != special::kCount + 2 * v.lang_vocab_size) {
    throw IoError("vocab symbol count inconsistent with language size");
  }
  return v;
}

}  // namespace faithmt
