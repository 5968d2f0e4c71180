#pragma once

#include "superenv/experiments.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace superenv {

inline constexpr const char* toolkit_version = "0.3.0";
inline constexpr const char* csv_schema_version = "1";

// Everything a run needs. Plain `section.key = value` text, '#' comments.
struct RunConfig {
    ExperimentConfig experiment;
    bool field_sampling = true;
    double sim_horizon = 2.0;      // simulate
    std::size_t sim_replicas = 4;
    double bound_p = 1.05;         // duals
    double dual_t = 1.0;
    std::size_t dual_paths = 4000;
    double dual_dt = 0.01;
    double expmoment_horizon = 1000.0;
    int threads = 1;
    bool svg = true;

    std::vector<std::string> warnings;   // not emitted
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);

// Applies one `key=value` override on top of an existing config.
void set_config_key(RunConfig& c, const std::string& key, const std::string& value);

// Full key list in a fixed order; parse_config_text(emit_config(c)) reproduces c.
std::string emit_config(const RunConfig& c);
std::vector<std::string> config_keys();

// FNV-1a 64 of the emitted text.
std::uint64_t config_hash(const RunConfig& c);

// Range checks not tied to a single key (dimension agreement, p range).
void validate(const RunConfig& c);

struct RunManifest {
    std::string command;
    std::uint64_t hash = 0;
    std::uint64_t master_seed = 0;
    std::string version = toolkit_version;
    std::string csv_version = csv_schema_version;
    int threads = 1;
    double wall_seconds = 0.0;
    bool passed = true;
    std::vector<std::string> checks;     // "name: PASS|FAIL detail"
    std::string config_echo;

    std::string text() const;
};

} // namespace superenv
