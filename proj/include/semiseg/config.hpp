#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "semiseg/data.hpp"
#include "semiseg/trainer.hpp"

namespace semiseg::config {

using json = nlohmann::json;

// The full default configuration; every key that may appear in a config file
// exists here, and unknown keys are rejected against this tree.
json defaults();

json load_file(const std::filesystem::path& path);

// Throws listing the offending dotted path on unknown keys or type clashes.
void check_against_schema(const json& user, const json& schema, const std::string& prefix = "");

// defaults <- file <- "a.b.c=value" overrides, validated.
json resolve(const json& file_config, const std::vector<std::string>& overrides = {});

void apply_override(json& cfg, const std::string& assignment);

SceneConfig to_scene_config(const json& resolved);
TrainConfig to_train_config(const json& resolved);

}  // namespace semiseg::config
