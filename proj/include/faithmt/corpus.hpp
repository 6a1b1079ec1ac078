#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faithmt/common.hpp"
#include "faithmt/prompt.hpp"

namespace faithmt {

struct GenConfig {
  int vocab_size = 32;  // symbols per language
  int min_len = 4;
  int max_len = 10;
  int train_size = 1000;
  int dev_size = 100;
  int test_size = 100;
  int bait_size = 0;
  uint64_t permutation_seed = 13;
  // Fraction of bait examples whose targets carry the opener during training
  // exposure (always the first examples of the split, so the choice is part
  // of the corpus, not of the trainer).
  double bait_fraction = 1.0;
  bool reorder = false;  // swap adjacent target pairs

  void validate() const;
};

// Token sequences hold global model token ids (specials + both alphabets).
struct Example {
  int id = 0;
  std::vector<int> source;
  std::vector<int> target;
  std::string split;
};

struct Vocab {
  std::vector<std::string> symbols;  // id -> symbol, specials first
  int lang_vocab_size = 0;
  std::vector<int> cipher;   // source symbol k maps to target symbol cipher[k]
  std::vector<int> opener;   // global ids of the bait opener sequence
  int bait_exposed = 0;      // first N bait examples are opener-prepended in training
  GenConfig gen_config;
  uint64_t seed = 0;

  int size() const { return static_cast<int>(symbols.size()); }
  int source_token(int symbol) const { return special::kCount + symbol; }
  int target_token(int symbol) const { return special::kCount + lang_vocab_size + symbol; }
  const std::string& symbol(int id) const;
  int id_of(std::string_view symbol) const;
  std::string render(std::span<const int> tokens) const;
  std::vector<int> parse(std::string_view text) const;
};

struct Corpus {
  std::vector<Example> examples;

  std::vector<const Example*> split(std::string_view name) const;
  const Example& by_id(int id) const;
};

struct GeneratedCorpus {
  Corpus corpus;
  Vocab vocab;
};

GeneratedCorpus generate_cipher_corpus(const GenConfig& config, uint64_t seed);

void save_corpus_jsonl(const std::string& path, const Corpus& corpus, const Vocab& vocab);
Corpus load_corpus_jsonl(const std::string& path, const Vocab& vocab);
void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

}  // namespace faithmt
