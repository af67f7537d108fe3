/**
 * Microbenchmarks for the hot paths: the full alternating solve, the
 * per-round MSE bound, over-the-air aggregation, and one training round.
 */
#include <benchmark/benchmark.h>

#include "vfeel/optimizer.hpp"
#include "vfeel/sim.hpp"

namespace {

using namespace vfeel;

SystemConfig reference_config(int num_devices, int num_rounds) {
    SystemConfig config;
    config.network.num_devices = num_devices;
    config.network.num_rounds = num_rounds;
    config.devices.assign(num_devices, DeviceParams{});
    config.rng_seed = 7;
    return config;
}

ConvergenceConstants reference_constants(const SystemConfig& config) {
    ConvergenceConstants constants;
    constants.num_devices_K = config.network.num_devices;
    constants.num_rounds_T = config.network.num_rounds;
    return constants;
}

void BM_Algorithm2(benchmark::State& state) {
    const SystemConfig config = reference_config(3, static_cast<int>(state.range(0)));
    const ConvergenceConstants constants = reference_constants(config);
    const ChannelState channel = model::sample_channels(config);
    SolveOptions options;
    for (auto _ : state) {
        auto trace = optimizer::algorithm2(config, channel, constants, options);
        benchmark::DoNotOptimize(trace.rounded_objective);
    }
}
BENCHMARK(BM_Algorithm2)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_MseBound(benchmark::State& state) {
    const SystemConfig config = reference_config(3, 1);
    const ChannelState channel = model::sample_channels(config);
    PlanRound round;
    round.tx_power.assign(3, 500.0);
    round.sense_power.assign(3, 0.01);
    round.batch = 150;
    round.denoise = 1.0;
    const auto col = channel.magnitudes.column(0);
    for (auto _ : state) {
        auto stats = aircomp::mse_bound(round, col, 1.0, config.network, config.devices);
        benchmark::DoNotOptimize(stats.bound_total);
    }
}
BENCHMARK(BM_MseBound);

void BM_Aggregate(benchmark::State& state) {
    const SystemConfig config = reference_config(3, 1);
    const ChannelState channel = model::sample_channels(config);
    PlanRound round;
    round.tx_power.assign(3, 500.0);
    round.sense_power.assign(3, 0.01);
    round.batch = 150;
    round.denoise = 1.0;
    std::vector<EmbeddingBatch> batches(3, EmbeddingBatch(150, 100, 0.5));
    const auto col = channel.magnitudes.column(0);
    Rng rng(1);
    for (auto _ : state) {
        auto out = aircomp::aggregate(batches, col, round, config.network, rng);
        benchmark::DoNotOptimize(out.values.data());
    }
}
BENCHMARK(BM_Aggregate)->Unit(benchmark::kMicrosecond);

void BM_TrainRound(benchmark::State& state) {
    SystemConfig config = reference_config(3, 1);
    const ChannelState channel = model::sample_channels(config);
    const std::vector<int> dims(3, 12);
    const auto task = sim::make_task(3, dims, 100, 7, 2100, 7);
    const auto model_state = sim::init_model(task, 11);
    PlanRound round;
    round.tx_power.assign(3, 500.0);
    round.sense_power.assign(3, 0.01);
    round.batch = 150;
    round.denoise = 1.0;
    const auto col = channel.magnitudes.column(0);
    std::uint64_t t = 0;
    for (auto _ : state) {
        sim::RoundRngs rngs{Rng(derive_seed(1, 3 * t)), Rng(derive_seed(1, 3 * t + 1)),
                            Rng(derive_seed(1, 3 * t + 2))};
        ++t;
        auto [loss, cache] = sim::forward_round(model_state, task, round, col, config, rngs);
        auto grads = sim::backward_round(cache, model_state);
        benchmark::DoNotOptimize(loss);
        benchmark::DoNotOptimize(grads.server_bias.data());
    }
}
BENCHMARK(BM_TrainRound)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
