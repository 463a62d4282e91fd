#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmsr/model.hpp"
#include "dmsr/training.hpp"

namespace dmsr {

using json = nlohmann::json;

// Sections: model, train (incl. loss weights), degradation, paths.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;
    std::string output_dir;
    std::string pca_path;
    std::string checkpoint;
};

json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);

json to_json(const RunConfig& c);
// Unknown keys are rejected so that typos in config files or overrides surface immediately.
RunConfig run_config_from_json(const json& j);

// Defaults merged with the file's contents.
json load_config_json(const std::filesystem::path& path);
json default_config_json();

// "section.key=value"; value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(json& config, const std::string& assignment);

}  // namespace dmsr
