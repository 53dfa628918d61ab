#include "stylecodec/config.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace stylecodec {

using nlohmann::json;

namespace {

json scalar_to_json(const YAML::Node& n) {
    const std::string s = n.Scalar();
    if (n.Tag() == "!") return s;  // explicitly quoted
    if (s == "true" || s == "True") return true;
    if (s == "false" || s == "False") return false;
    if (s == "null" || s == "~" || s.empty()) return nullptr;
    char* end = nullptr;
    const long long i = std::strtoll(s.c_str(), &end, 10);
    if (end && *end == '\0') return i;
    const double d = std::strtod(s.c_str(), &end);
    if (end && *end == '\0') return d;
    return s;
}

json yaml_to_json(const YAML::Node& n) {
    switch (n.Type()) {
        case YAML::NodeType::Map: {
            json j = json::object();
            for (const auto& kv : n) j[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return j;
        }
        case YAML::NodeType::Sequence: {
            json j = json::array();
            for (const auto& e : n) j.push_back(yaml_to_json(e));
            return j;
        }
        case YAML::NodeType::Scalar: return scalar_to_json(n);
        default: return nullptr;
    }
}

void emit(YAML::Emitter& out, const json& j) {
    if (j.is_object()) {
        out << YAML::BeginMap;
        for (const auto& [k, v] : j.items()) {
            out << YAML::Key << k << YAML::Value;
            emit(out, v);
        }
        out << YAML::EndMap;
    } else if (j.is_array()) {
        out << YAML::Flow << YAML::BeginSeq;
        for (const auto& v : j) emit(out, v);
        out << YAML::EndSeq;
    } else if (j.is_string()) {
        out << YAML::DoubleQuoted << j.get<std::string>();
    } else if (j.is_boolean()) {
        out << (j.get<bool>() ? "true" : "false");
    } else if (j.is_null()) {
        out << YAML::Null;
    } else {
        out << j.dump();
    }
}

// Overlays `patch` onto `base`; every key must already exist in `base`.
void merge_into(json& base, const json& patch, const std::string& where) {
    for (const auto& [k, v] : patch.items()) {
        const std::string path = where.empty() ? k : where + "." + k;
        if (!base.contains(k)) throw ConfigError("unknown config key: " + path);
        json& slot = base[k];
        if (slot.is_object()) {
            if (!v.is_object()) throw ConfigError("config key " + path + " must be a mapping");
            merge_into(slot, v, path);
        } else {
            if (v.is_object()) throw ConfigError("config key " + path + " must be a scalar or list");
            if (slot.is_number() && !v.is_number()) throw ConfigError("config key " + path + " must be a number");
            if (slot.is_boolean() && !v.is_boolean()) throw ConfigError("config key " + path + " must be true or false");
            if (slot.is_string() && !v.is_string()) throw ConfigError("config key " + path + " must be a string");
            slot = v;
        }
    }
}

void apply_override(json& doc, const std::string& ov) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + ov);
    const std::string key = ov.substr(0, eq);
    json value = yaml_to_json(YAML::Load(ov.substr(eq + 1)));
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) parts.push_back(rest.substr(0, pos));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_into(doc, patch, "");
}

std::vector<AblationCell> grid_cells(const std::string& grid) {
    if (grid == "components") return AblationConfig::component_grid();
    if (grid == "noise_modes") return AblationConfig::noise_mode_grid();
    if (grid == "all") {
        auto cells = AblationConfig::component_grid();
        for (const auto& c : AblationConfig::noise_mode_grid()) {
            if (c.mode != NoiseMode::IsotropicAcrossClusters) cells.push_back(c);
        }
        return cells;
    }
    throw ConfigError("ablation.grid must be components, noise_modes or all (got " + grid + ")");
}

}  // namespace

json RunConfig::to_json() const {
    json j = model.to_json();
    j["schema_version"] = kConfigSchemaVersion;
    j["train"] = train.to_json();
    j["eval"] = {{"n", eval.n}, {"many_styles", eval.many_styles}, {"many_samples", eval.many_samples}, {"seed", eval.seed}};
    j["ablation"] = {{"grid", ablation_grid},
                     {"finetune_steps", ablation.finetune_steps},
                     {"n_styles", ablation.n_styles},
                     {"n_samples", ablation.n_samples},
                     {"seed", ablation.seed}};
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    try {
        if (j.at("schema_version").get<int>() != kConfigSchemaVersion) {
            throw ConfigError("unsupported config schema_version " + j.at("schema_version").dump());
        }
        RunConfig c;
        c.model = ModelConfig::from_json(j);
        c.train = TrainConfig::from_json(j.at("train"));
        const auto& e = j.at("eval");
        c.eval.n = e.at("n");
        c.eval.many_styles = e.at("many_styles");
        c.eval.many_samples = e.at("many_samples");
        c.eval.seed = e.at("seed");
        const auto& a = j.at("ablation");
        c.ablation_grid = a.at("grid");
        c.ablation.cells = grid_cells(c.ablation_grid);
        c.ablation.finetune_steps = a.at("finetune_steps");
        c.ablation.n_styles = a.at("n_styles");
        c.ablation.n_samples = a.at("n_samples");
        c.ablation.seed = a.at("seed");
        c.model.validate();
        c.train.validate();
        if (c.eval.n <= 0 || c.eval.many_styles <= 0 || c.eval.many_samples <= 0) {
            throw ConfigError("eval sample counts must be positive");
        }
        if (c.ablation.finetune_steps < 0 || c.ablation.n_styles <= 0 || c.ablation.n_samples <= 0) {
            throw ConfigError("ablation settings must be positive");
        }
        return c;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

std::string RunConfig::to_yaml() const {
    YAML::Emitter out;
    emit(out, to_json());
    return std::string(out.c_str()) + "\n";
}

RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
    json doc = RunConfig{}.to_json();
    try {
        const YAML::Node root = YAML::Load(yaml_text);
        if (root.IsDefined() && !root.IsNull()) {
            if (!root.IsMap()) throw ConfigError("config file must be a mapping");
            const json file = yaml_to_json(root);
            if (file.contains("schema_version") && file.at("schema_version") != kConfigSchemaVersion) {
                throw ConfigError("unsupported config schema_version " + file.at("schema_version").dump());
            }
            merge_into(doc, file, "");
        }
        for (const auto& ov : overrides) apply_override(doc, ov);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    return RunConfig::from_json(doc);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    if (path.empty()) return parse_run_config("", overrides);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), overrides);
}

std::string default_data_root() {
    const char* env = std::getenv("STYLECODEC_DATA_ROOT");
    return env && *env ? std::string(env) : std::string("data");
}

}  // namespace stylecodec
