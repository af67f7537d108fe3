/**
 * Command-line frontend for the training simulator and resource allocator.
 *
 * Usage:
 *   vfeel --config cfg.ini --command optimize --seeds 1,2,3 --out results/
 *   vfeel --config cfg.ini --command simulate --out results/ [--plan plan.json]
 *   vfeel --config cfg.ini --command bound    --out results/
 *   vfeel --config cfg.ini --command sweep --sweep device.energy_budget_joules=50,200,1000 \
 *         --seeds 1,2,3 --out results/ --workers 4
 */
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vfeel/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string piece = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                              : comma - pos);
        if (!piece.empty()) seeds.push_back(std::stoull(piece));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ISCC-enabled vertical federated edge learning simulator and resource allocator"};

    std::string config_path;
    std::string command = "optimize";
    std::string sweep_arg;
    std::string seeds_arg = "1";
    std::string out_dir;
    std::string plan_path;
    int workers = 1;

    app.add_option("--config", config_path, "configuration file")->required();
    app.add_option("--command", command, "optimize | simulate | bound | sweep")->required();
    app.add_option("--sweep", sweep_arg, "sweep axis, e.g. device.energy_budget_joules=50,200,1000");
    app.add_option("--seeds", seeds_arg, "comma-separated seed list (default 1)");
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--workers", workers, "parallel workers for sweeps (default 1)");
    app.add_option("--plan", plan_path, "reuse an existing plan.json (simulate/bound)");

    CLI11_PARSE(app, argc, argv);

    try {
        vfeel::ExperimentSpec spec;
        spec.config_path = config_path;
        spec.command = vfeel::command_from_string(command);
        spec.out_dir = out_dir;
        spec.seeds = parse_seed_list(seeds_arg);
        spec.workers = workers;
        spec.plan_path = plan_path;
        if (!sweep_arg.empty()) {
            const auto eq = sweep_arg.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("--sweep expects key=v1,v2,...");
            spec.sweep_key = sweep_arg.substr(0, eq);
            std::size_t pos = eq + 1;
            while (pos < sweep_arg.size()) {
                const auto comma = sweep_arg.find(',', pos);
                const std::string piece =
                    sweep_arg.substr(pos, comma == std::string::npos ? std::string::npos
                                                                     : comma - pos);
                if (!piece.empty()) spec.sweep_values.push_back(std::stod(piece));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }

        const vfeel::ResultRecord record = vfeel::experiment::run(spec);
        std::printf("%s finished: %zu seed(s), config %s, %.1f s\n", command.c_str(),
                    record.per_seed.size(), record.config_hash.c_str(), record.wall_seconds);
        for (const auto& seed : record.per_seed) {
            std::printf("  seed %llu: omega=%.6g loss=%.4g acc=%.4g -> %s\n",
                        static_cast<unsigned long long>(seed.seed), seed.omega, seed.final_loss,
                        seed.final_accuracy, seed.directory.c_str());
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
