#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "faithmt/corpus.hpp"
#include "faithmt/evaluate.hpp"
#include "faithmt/model.hpp"
#include "faithmt/tuning.hpp"

namespace faithmt {

using Json = nlohmann::ordered_json;

// Resolution order: built-in defaults < config file < dotted command-line
// overrides (e.g. --tuning.beta 0.15). Unknown keys are rejected.
Json default_run_config();

// Overlays `overlay` onto `base`; every overlay key must already exist in
// base with the same JSON type shape.
void merge_config(Json& base, const Json& overlay, const std::string& prefix = "");

// Dotted paths of every leaf, in document order.
std::vector<std::string> config_leaf_paths(const Json& config);

// Sets one leaf from its string form, parsing to the leaf's existing type.
void set_config_value(Json& config, const std::string& dotted_path, const std::string& value);

Json load_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

ModelConfig model_config_from(const Json& config, int vocab_size);
GenConfig gen_config_from(const Json& config);
uint64_t gen_seed_from(const Json& config);
TuningConfig tuning_config_from(const Json& config);
DecodeConfig decode_config_from(const Json& config);
EvalOptions eval_options_from(const Json& config);

}  // namespace faithmt
