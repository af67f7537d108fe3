#include "vfeel/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "vfeel/sim.hpp"

namespace vfeel {

namespace fs = std::filesystem;

Command command_from_string(const std::string& name) {
    if (name == "optimize") return Command::optimize;
    if (name == "simulate") return Command::simulate;
    if (name == "bound") return Command::bound;
    if (name == "sweep") return Command::sweep;
    throw std::runtime_error("unknown command: " + name);
}

std::string command_name(Command command) {
    switch (command) {
        case Command::optimize: return "optimize";
        case Command::simulate: return "simulate";
        case Command::bound: return "bound";
        case Command::sweep: return "sweep";
    }
    return "unknown";
}

void ExperimentSpec::validate() const {
    if (config_path.empty()) throw std::runtime_error("experiment: config path required");
    if (out_dir.empty()) throw std::runtime_error("experiment: output directory required");
    if (seeds.empty()) throw std::runtime_error("experiment: at least one seed required");
    if (workers < 1) throw std::runtime_error("experiment: workers must be >= 1");
    if (command == Command::sweep) {
        if (sweep_key.empty() || sweep_values.empty())
            throw std::runtime_error("experiment: sweep requires an axis and values");
        if (!config::is_sweepable_key(sweep_key))
            throw std::runtime_error("unknown sweep axis: " + sweep_key);
    }
}

std::string ResultRecord::to_json_string() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["command"] = command;
    j["wall_seconds"] = wall_seconds;
    j["per_seed"] = nlohmann::json::array();
    for (const auto& s : per_seed) {
        j["per_seed"].push_back({{"seed", s.seed},
                                 {"directory", s.directory},
                                 {"omega", s.omega},
                                 {"final_loss", s.final_loss},
                                 {"final_accuracy", s.final_accuracy}});
    }
    return j.dump(2);
}

namespace experiment {

namespace {

constexpr const char* kSchemes[] = {"proposed", "fixed_tx_power", "fixed_batch", "fixed_eta",
                                    "channel_inversion"};

void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, path);
}

std::string format_csv_double(double value) {
    if (std::isnan(value)) return "nan";
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.12g", value);
    return buffer;
}

LoadedConfig config_for_seed(const LoadedConfig& base, std::uint64_t seed) {
    LoadedConfig cfg = base;
    cfg.system.rng_seed = seed;
    return cfg;
}

sim::SyntheticTask build_task(const LoadedConfig& cfg) {
    std::vector<int> dims(cfg.system.network.num_devices, cfg.task.feature_dim_per_device);
    return sim::make_task(cfg.system.network.num_devices, dims, cfg.system.network.embedding_dim,
                          cfg.task.num_classes, cfg.task.samples, cfg.task.task_seed,
                          cfg.task.class_separation, cfg.task.feature_scale);
}

struct OptimizeOutcome {
    SolveTrace trace;
    double omega = 0.0;
    // baseline name -> (plan, omega); missing when a baseline is infeasible
    std::vector<std::tuple<std::string, AllocationPlan, double>> baselines;
    std::vector<std::string> infeasible_baselines;
};

/// Runs the full solver, then every baseline. If some baseline ends with a
/// lower objective than the solver (a worse local optimum was found), the
/// solver is warm-started from that baseline's plan and the better result
/// kept.
OptimizeOutcome optimize_with_baselines(const LoadedConfig& cfg, const ChannelState& channel,
                                        bool with_baselines) {
    OptimizeOutcome outcome;
    outcome.trace = optimizer::algorithm2(cfg.system, channel, cfg.constants, cfg.solver);
    outcome.omega = convergence::omega(outcome.trace.final_plan, channel, cfg.constants,
                                       cfg.system.devices, cfg.system.network);
    if (!with_baselines) return outcome;

    const optimizer::BaselineKind kinds[] = {
        optimizer::BaselineKind::fixed_tx_power, optimizer::BaselineKind::fixed_batch,
        optimizer::BaselineKind::fixed_eta, optimizer::BaselineKind::channel_inversion};
    for (auto kind : kinds) {
        const std::string name = optimizer::baseline_name(kind);
        try {
            AllocationPlan plan =
                optimizer::baseline_plan(kind, cfg.system, channel, cfg.constants, cfg.solver);
            const double omega = convergence::omega(plan, channel, cfg.constants,
                                                    cfg.system.devices, cfg.system.network);
            if (omega < outcome.omega) {
                SolveTrace restart = optimizer::algorithm2(cfg.system, channel, cfg.constants,
                                                           cfg.solver, plan);
                const double restarted =
                    convergence::omega(restart.final_plan, channel, cfg.constants,
                                       cfg.system.devices, cfg.system.network);
                if (restarted < outcome.omega) {
                    outcome.trace = std::move(restart);
                    outcome.omega = restarted;
                }
            }
            outcome.baselines.emplace_back(name, std::move(plan), omega);
        } catch (const std::exception&) {
            outcome.infeasible_baselines.push_back(name);
        }
    }
    return outcome;
}

std::string history_csv(const sim::TrainingState& state, const AllocationPlan& plan,
                        const ChannelState& channel, const LoadedConfig& cfg) {
    std::ostringstream out;
    out << "round,loss,test_accuracy,omega_contribution\n";
    for (std::size_t t = 0; t < state.loss_history.size(); ++t) {
        const PlanRound round = plan_round(plan, static_cast<int>(t));
        const double contribution = convergence::omega_round(
            round, channel.magnitudes.column(static_cast<int>(t)), cfg.constants,
            cfg.system.devices, cfg.system.network);
        out << t + 1 << "," << format_csv_double(state.loss_history[t]) << ","
            << format_csv_double(state.accuracy_history[t]) << ","
            << format_csv_double(contribution) << "\n";
    }
    return out.str();
}

std::string agg_stats_jsonl(const sim::TrainingState& state) {
    std::ostringstream out;
    for (const auto& stats : state.agg_stats) out << stats.to_json_string() << "\n";
    return out.str();
}

std::string plan_json_with_hash(const AllocationPlan& plan, const std::string& hash) {
    nlohmann::json j = nlohmann::json::parse(optimizer::plan_to_json_string(plan));
    j["config_hash"] = hash;
    return j.dump(2);
}

std::string trace_json_with_hash(const SolveTrace& trace, const std::string& hash) {
    nlohmann::json j = nlohmann::json::parse(trace.to_json_string());
    j["config_hash"] = hash;
    return j.dump(2);
}

AllocationPlan load_plan_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open plan file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return optimizer::plan_from_json_string(buffer.str());
}

struct TrainedResult {
    sim::TrainingState training;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
};

TrainedResult train_under_plan(const LoadedConfig& cfg, const AllocationPlan& plan,
                               const ChannelState& channel, const sim::SyntheticTask& task,
                               std::uint64_t seed) {
    sim::SimOptions options;
    options.bound_G2 = cfg.constants.embed_input_grad_G2;
    TrainedResult result;
    result.training = sim::train(cfg.system, plan, channel, task, cfg.system.network.num_rounds,
                                 cfg.constants.learning_rate_mu, derive_seed(seed, 0x747261696e),
                                 options);
    // exact training objective at the final parameters; the per-round history
    // keeps the noisy batch losses
    result.final_loss = sim::dataset_loss(result.training.model, task);
    result.final_accuracy = result.training.accuracy_history.back();
    return result;
}

}  // namespace

ResultRecord run(const ExperimentSpec& spec) {
    spec.validate();
    const auto start = std::chrono::steady_clock::now();
    const LoadedConfig base = config::load_config(spec.config_path);
    const std::string base_hash = config::config_hash(base);

    fs::create_directories(spec.out_dir);
    write_file_atomic(fs::path(spec.out_dir) / "config.ini", config::canonical_serialize(base));

    ResultRecord record;
    record.config_hash = base_hash;
    record.command = command_name(spec.command);

    if (spec.command == Command::sweep) {
        struct SweepRow {
            double axis_value;
            std::uint64_t seed;
            std::string scheme;
            double final_loss = std::nan("");
            double final_accuracy = std::nan("");
            double omega = std::nan("");
            double wall_s = 0.0;
        };
        std::vector<std::pair<double, std::uint64_t>> pairs;
        for (double value : spec.sweep_values)
            for (std::uint64_t seed : spec.seeds) pairs.emplace_back(value, seed);

        std::vector<SweepRow> rows;
        std::mutex rows_mutex;
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t index = next.fetch_add(1);
                if (index >= pairs.size()) return;
                const auto [value, seed] = pairs[index];
                LoadedConfig cfg = config_for_seed(base, seed);
                config::apply_override(cfg, spec.sweep_key, value);
                const ChannelState channel = model::sample_channels(cfg.system);
                const sim::SyntheticTask task = build_task(cfg);

                char value_buf[48];
                std::snprintf(value_buf, sizeof(value_buf), "%.8g", value);
                const fs::path pair_dir = fs::path(spec.out_dir) / ("value_" + std::string(value_buf)) /
                                          ("seed_" + std::to_string(seed));

                std::vector<SweepRow> local;
                for (const char* scheme : kSchemes) {
                    SweepRow row;
                    row.axis_value = value;
                    row.seed = seed;
                    row.scheme = scheme;
                    const auto scheme_start = std::chrono::steady_clock::now();
                    try {
                        AllocationPlan plan;
                        if (std::string(scheme) == "proposed") {
                            OptimizeOutcome outcome = optimize_with_baselines(cfg, channel, false);
                            plan = outcome.trace.final_plan;
                        } else if (std::string(scheme) == "fixed_tx_power") {
                            plan = optimizer::baseline_plan(optimizer::BaselineKind::fixed_tx_power,
                                                            cfg.system, channel, cfg.constants,
                                                            cfg.solver);
                        } else if (std::string(scheme) == "fixed_batch") {
                            plan = optimizer::baseline_plan(optimizer::BaselineKind::fixed_batch,
                                                            cfg.system, channel, cfg.constants,
                                                            cfg.solver);
                        } else if (std::string(scheme) == "fixed_eta") {
                            plan = optimizer::baseline_plan(optimizer::BaselineKind::fixed_eta,
                                                            cfg.system, channel, cfg.constants,
                                                            cfg.solver);
                        } else {
                            plan = optimizer::baseline_plan(
                                optimizer::BaselineKind::channel_inversion, cfg.system, channel,
                                cfg.constants, cfg.solver);
                        }
                        row.omega = convergence::omega(plan, channel, cfg.constants,
                                                       cfg.system.devices, cfg.system.network);
                        const TrainedResult trained =
                            train_under_plan(cfg, plan, channel, task, seed);
                        row.final_loss = trained.final_loss;
                        row.final_accuracy = trained.final_accuracy;

                        const fs::path scheme_dir = pair_dir / scheme;
                        fs::create_directories(scheme_dir);
                        write_file_atomic(scheme_dir / "plan.json",
                                          plan_json_with_hash(plan, base_hash));
                        write_file_atomic(scheme_dir / "history.csv",
                                          history_csv(trained.training, plan, channel, cfg));
                    } catch (const std::exception&) {
                        // infeasible scheme under this budget: keep the NaN row
                    }
                    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                               scheme_start)
                                     .count();
                    local.push_back(std::move(row));
                }
                std::lock_guard<std::mutex> lock(rows_mutex);
                rows.insert(rows.end(), local.begin(), local.end());
            }
        };
        std::vector<std::thread> threads;
        const int worker_count = std::min<int>(spec.workers, static_cast<int>(pairs.size()));
        threads.reserve(worker_count);
        for (int i = 0; i < worker_count; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();

        std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
            if (a.axis_value != b.axis_value) return a.axis_value < b.axis_value;
            if (a.seed != b.seed) return a.seed < b.seed;
            return a.scheme < b.scheme;
        });
        std::ostringstream csv;
        csv << "axis_value,seed,scheme,final_loss,final_accuracy,omega,wall_s\n";
        for (const auto& row : rows) {
            csv << format_csv_double(row.axis_value) << "," << row.seed << "," << row.scheme << ","
                << format_csv_double(row.final_loss) << ","
                << format_csv_double(row.final_accuracy) << "," << format_csv_double(row.omega)
                << "," << format_csv_double(row.wall_s) << "\n";
        }
        write_file_atomic(fs::path(spec.out_dir) / "sweep.csv", csv.str());
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_file_atomic(fs::path(spec.out_dir) / "record.json", record.to_json_string());
        return record;
    }

    for (std::uint64_t seed : spec.seeds) {
        LoadedConfig cfg = config_for_seed(base, seed);
        const ChannelState channel = model::sample_channels(cfg.system);
        const fs::path seed_dir = fs::path(spec.out_dir) / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);

        SeedOutput output;
        output.seed = seed;
        output.directory = seed_dir.string();

        if (spec.command == Command::optimize) {
            OptimizeOutcome outcome = optimize_with_baselines(cfg, channel, true);
            output.omega = outcome.omega;
            write_file_atomic(seed_dir / "plan.json",
                              plan_json_with_hash(outcome.trace.final_plan, base_hash));
            write_file_atomic(seed_dir / "trace.json",
                              trace_json_with_hash(outcome.trace, base_hash));
            nlohmann::json baselines;
            for (const auto& [name, plan, omega] : outcome.baselines) {
                baselines[name] = {{"omega", omega},
                                   {"plan", nlohmann::json::parse(
                                                optimizer::plan_to_json_string(plan))}};
            }
            for (const auto& name : outcome.infeasible_baselines)
                baselines[name] = {{"infeasible", true}};
            write_file_atomic(seed_dir / "baselines.json", baselines.dump(2));
        } else {
            AllocationPlan plan;
            if (!spec.plan_path.empty()) {
                plan = load_plan_file(spec.plan_path);
            } else {
                OptimizeOutcome outcome = optimize_with_baselines(cfg, channel, false);
                plan = outcome.trace.final_plan;
                write_file_atomic(seed_dir / "plan.json", plan_json_with_hash(plan, base_hash));
                write_file_atomic(seed_dir / "trace.json",
                                  trace_json_with_hash(outcome.trace, base_hash));
            }
            output.omega = convergence::omega(plan, channel, cfg.constants, cfg.system.devices,
                                              cfg.system.network);
            if (spec.command == Command::simulate) {
                const sim::SyntheticTask task = build_task(cfg);
                const TrainedResult trained = train_under_plan(cfg, plan, channel, task, seed);
                output.final_loss = trained.final_loss;
                output.final_accuracy = trained.final_accuracy;
                write_file_atomic(seed_dir / "history.csv",
                                  history_csv(trained.training, plan, channel, cfg));
                write_file_atomic(seed_dir / "agg_stats.jsonl", agg_stats_jsonl(trained.training));
            } else {  // bound
                const sim::SyntheticTask task = build_task(cfg);
                const sim::ModelState initial = sim::init_model(
                    task, derive_seed(derive_seed(seed, 0x747261696e), 0x696e6974));
                const double gap = sim::dataset_loss(initial, task);
                const BoundReport report = convergence::avg_grad_bound(
                    gap, plan, channel, cfg.constants, cfg.system.devices, cfg.system.network);
                write_file_atomic(seed_dir / "bound.json", report.to_json_string());
                output.final_loss = gap;
            }
        }
        record.per_seed.push_back(std::move(output));
    }

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file_atomic(fs::path(spec.out_dir) / "record.json", record.to_json_string());
    return record;
}

}  // namespace experiment
}  // namespace vfeel
