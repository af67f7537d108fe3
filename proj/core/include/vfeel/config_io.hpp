/**
 * Configuration ingestion: an INI-style key/value format with nested
 * sections, filled with the reference defaults for anything omitted, plus
 * a canonical serialization used for content hashing so runs can be
 * reproduced byte-for-byte.
 */
#ifndef VFEEL_CONFIG_IO_HPP
#define VFEEL_CONFIG_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "vfeel/convergence.hpp"
#include "vfeel/model.hpp"
#include "vfeel/optimizer.hpp"

namespace vfeel {

struct TaskConfig {
    int num_classes = 7;
    int samples = 2100;
    int feature_dim_per_device = 12;
    double class_separation = 3.0;
    double feature_scale = 0.3;
    std::uint64_t task_seed = 7;
    bool hidden = false;
    int hidden_units = 16;
};

struct LoadedConfig {
    SystemConfig system;
    ConvergenceConstants constants;
    SolveOptions solver;
    TaskConfig task;
};

namespace config {

/// Parses a config file; missing keys fall back to the defaults above.
/// Throws std::runtime_error whose message lists every offending key.
LoadedConfig load_config(const std::string& path);

/// Same, from an in-memory string.
LoadedConfig parse_config(const std::string& text);

/// Byte-stable rendering (sorted sections, fixed float formatting); parsing
/// it back yields an identical config. Basis of config_hash.
std::string canonical_serialize(const LoadedConfig& config);

/// FNV-1a 64-bit hash of the canonical serialization, in hex.
std::string config_hash(const LoadedConfig& config);

/// True if `key` (e.g. "device.energy_budget_joules") names a sweepable
/// numeric parameter.
bool is_sweepable_key(const std::string& key);

/// Applies `key = value` across the config (device.* keys apply to every
/// device). Throws on unknown keys.
void apply_override(LoadedConfig& config, const std::string& key, double value);

}  // namespace config
}  // namespace vfeel

#endif
