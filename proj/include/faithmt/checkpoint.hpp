#pragma once

#include <string>

#include <json.hpp>

#include "faithmt/model.hpp"

namespace faithmt {

// Checkpoint document: {format_version, config, seed, parameters}. Matrices
// are nested arrays of rows; nlohmann prints shortest round-trip decimals, so
// save/load is bit-exact at double precision.
nlohmann::ordered_json checkpoint_to_json(const Parameters& params);
Parameters checkpoint_from_json(const nlohmann::ordered_json& doc);

void save_checkpoint(const std::string& path, const Parameters& params);
Parameters load_checkpoint(const std::string& path);

}  // namespace faithmt
