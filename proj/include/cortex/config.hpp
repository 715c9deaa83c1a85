#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cortex/simulator.hpp"
#include "cortex/vendor_json.hpp"

namespace cortex {

struct Cell {
    std::string name;
    SimConfig config;
};

/// A parsed run/compare config file. `base` is the file without its
/// `cells`; each cell is the base with the cell's keys merged on top.
struct RunConfigFile {
    SimConfig base;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    std::vector<Cell> cells;
};

/// Names accepted by the "preset" key and in place of a config path.
std::vector<std::string> preset_names();
bool is_preset(std::string_view name);
nlohmann::json preset_json(std::string_view name);

/// Parses a config document. Unknown keys are rejected with ConfigError;
/// workflow graph problems surface as WorkflowError.
RunConfigFile parse_config(const nlohmann::json& doc);

/// Loads `path`, or the preset of that name when no such file exists.
RunConfigFile load_config(const std::string& path_or_preset);

Distribution parse_distribution(const nlohmann::json& j, const std::string& where);
nlohmann::json distribution_json(const Distribution& d);

/// Parses "A..B" or "A,B,C".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace cortex
