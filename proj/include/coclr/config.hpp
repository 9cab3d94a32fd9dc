#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "coclr/cotrain.hpp"
#include "coclr/synthdata.hpp"

namespace coclr {

inline constexpr int kConfigSchemaVersion = 1;

/// Everything a run needs. Each seed s generates the dataset and trains the
/// plan with dataset.seed = plan.seed = s, so dataset.seed and plan.seed are
/// not part of the file.
struct ExperimentConfig {
    std::string name = "coclr";  // run tag; also the output subdirectory
    DatasetSpec dataset;
    TrainPlan plan = default_plan();
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string out_dir = "runs";

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Raised for malformed or schema-invalid configs; field() is the key path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& msg)
        : std::runtime_error(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Flat "key = value" lines, '#' comments, every schema key required exactly
/// once. See docs/FORMATS.md.
ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

/// All addressable key paths in file order.
std::vector<std::string> config_keys();
/// Typed read/write of a single key path. Unknown keys throw ConfigError.
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Full validation of the dataset spec and plan, errors carry key paths.
void validate_config(const ExperimentConfig& cfg);

/// Benchmark defaults: default dataset and default CoCLR plan with the given
/// alternation loss, tagged with `name`.
ExperimentConfig default_config(const std::string& name = "coclr", LossKind loss = LossKind::CoClr,
                                Granularity g = Granularity::Cycle);

}  // namespace coclr
