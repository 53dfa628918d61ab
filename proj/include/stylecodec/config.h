#pragma once

// Run configuration: every module config in one YAML document with a schema
// version. Values come from built-in defaults, then the config file, then
// `key.path=value` overrides; the resolved document is what gets persisted.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylecodec/eval.h"
#include "stylecodec/model.h"
#include "stylecodec/training.h"

namespace stylecodec {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvalSettings {
    int n = 300;
    int many_styles = 20;
    int many_samples = 8;
    uint64_t seed = 19;
};

struct RunConfig {
    ModelConfig model = ModelConfig::for_data(DatasetConfig{});
    TrainConfig train;
    EvalSettings eval;
    std::string ablation_grid = "all";  // components | noise_modes | all
    AblationConfig ablation;  // cells are filled from ablation_grid

    nlohmann::json to_json() const;
    // Throws ConfigError on unknown keys, wrong types or invalid values.
    static RunConfig from_json(const nlohmann::json& j);
    std::string to_yaml() const;
};

// `path` may be empty (defaults only). Overrides look like "train.peak_lr=1e-3".
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});

// Default data root from STYLECODEC_DATA_ROOT, falling back to "data".
std::string default_data_root();

}  // namespace stylecodec
