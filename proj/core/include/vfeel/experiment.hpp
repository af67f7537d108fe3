/**
 * Experiment orchestration: optimize / simulate / bound / sweep commands,
 * per-seed output persistence, and deterministic re-runs.
 */
#ifndef VFEEL_EXPERIMENT_HPP
#define VFEEL_EXPERIMENT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "vfeel/config_io.hpp"

namespace vfeel {

enum class Command { optimize, simulate, bound, sweep };

Command command_from_string(const std::string& name);
std::string command_name(Command command);

struct ExperimentSpec {
    std::string config_path;
    Command command = Command::optimize;
    std::string sweep_key;             // required for sweep
    std::vector<double> sweep_values;  // required for sweep
    std::string out_dir;
    std::vector<std::uint64_t> seeds = {1};
    int workers = 1;
    std::string plan_path;  // optional: reuse an existing plan for simulate/bound

    void validate() const;
};

struct SeedOutput {
    std::uint64_t seed = 0;
    std::string directory;
    double omega = 0.0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
};

struct ResultRecord {
    std::string config_hash;
    std::string command;
    std::vector<SeedOutput> per_seed;
    double wall_seconds = 0.0;

    std::string to_json_string() const;
};

namespace experiment {

/// Executes the command for every seed (and sweep value), writing plan.json
/// / trace.json / history.csv / sweep.csv under the output directory along
/// with the exact canonical config used. Aside from wall-clock fields, all
/// outputs are deterministic functions of (config, command, seeds).
ResultRecord run(const ExperimentSpec& spec);

}  // namespace experiment
}  // namespace vfeel

#endif
