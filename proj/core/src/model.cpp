#include "vfeel/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vfeel {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

}  // namespace

void DeviceParams::validate() const {
    require(energy_budget_joules > 0.0, "DeviceParams.energy_budget_joules must be > 0");
    require(per_round_latency_budget_s > 0.0, "DeviceParams.per_round_latency_budget_s must be > 0");
    require(max_power_watts > 0.0, "DeviceParams.max_power_watts must be > 0");
    require(cycles_per_sample > 0.0, "DeviceParams.cycles_per_sample must be > 0");
    require(cpu_freq_hz > 0.0, "DeviceParams.cpu_freq_hz must be > 0");
    require(capacitance_coeff > 0.0, "DeviceParams.capacitance_coeff must be > 0");
    require(sense_latency_per_sample_s > 0.0, "DeviceParams.sense_latency_per_sample_s must be > 0");
    require(clutter_variance >= 0.0, "DeviceParams.clutter_variance must be >= 0");
}

void NetworkParams::validate() const {
    require(num_devices >= 1, "NetworkParams.num_devices must be >= 1");
    require(num_rounds >= 1, "NetworkParams.num_rounds must be >= 1");
    require(embedding_dim >= 1, "NetworkParams.embedding_dim must be >= 1");
    require(symbols_per_block >= 1, "NetworkParams.symbols_per_block must be >= 1");
    require(slot_duration_s > 0.0, "NetworkParams.slot_duration_s must be > 0");
    require(channel_noise_variance >= 0.0, "NetworkParams.channel_noise_variance must be >= 0");
    require(sensing_noise_variance >= 0.0, "NetworkParams.sensing_noise_variance must be >= 0");
    require(path_loss > 0.0, "NetworkParams.path_loss must be > 0");
}

void SystemConfig::validate() const {
    network.validate();
    require(static_cast<int>(devices.size()) == network.num_devices,
            "SystemConfig.devices length must equal network.num_devices");
    for (const auto& device : devices) device.validate();
}

void AllocationPlan::validate(const NetworkParams& net) const {
    const int K = net.num_devices;
    const int T = net.num_rounds;
    require(tx_power.rows() == K && tx_power.cols() == T, "AllocationPlan.tx_power shape mismatch");
    require(sense_power.rows() == K && sense_power.cols() == T,
            "AllocationPlan.sense_power shape mismatch");
    require(static_cast<int>(batch_size.size()) == T, "AllocationPlan.batch_size length mismatch");
    require(static_cast<int>(denoise.size()) == T, "AllocationPlan.denoise length mismatch");
    for (double value : tx_power.data()) require(value >= 0.0, "AllocationPlan.tx_power must be >= 0");
    for (double value : sense_power.data())
        require(value >= 0.0, "AllocationPlan.sense_power must be >= 0");
    for (double value : denoise) require(value > 0.0, "AllocationPlan.denoise must be > 0");
    for (double value : batch_size) {
        require(value > 0.0, "AllocationPlan.batch_size must be > 0");
        if (!relaxed)
            require(value >= 1.0 && value == std::floor(value),
                    "finalized AllocationPlan.batch_size must be integral and >= 1");
    }
}

PlanRound plan_round(const AllocationPlan& plan, int t) {
    PlanRound round;
    round.tx_power = plan.tx_power.column(t);
    round.sense_power = plan.sense_power.column(t);
    round.batch = plan.batch_size[t];
    round.denoise = plan.denoise[t];
    return round;
}

std::string FeasibilityReport::to_json_string() const {
    nlohmann::json j;
    j["per_device_energy_used"] = per_device_energy_used;
    auto& latency = j["per_device_per_round_latency"];
    latency = nlohmann::json::array();
    for (int k = 0; k < per_device_per_round_latency.rows(); ++k) {
        const auto row = per_device_per_round_latency.row(k);
        latency.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["violations"] = nlohmann::json::array();
    for (const auto& v : violations) {
        j["violations"].push_back({{"constraint", v.constraint},
                                   {"device", v.device},
                                   {"round", v.round},
                                   {"slack", v.slack}});
    }
    j["feasible"] = feasible();
    return j.dump(2);
}

namespace model {

ChannelState sample_channels(const SystemConfig& config) {
    config.validate();
    const int K = config.network.num_devices;
    const int T = config.network.num_rounds;
    Rng rng(derive_seed(config.rng_seed, 0x6368616e));  // channel stream
    ChannelState state;
    state.magnitudes = Matrix(K, T);
    const double amplitude = std::sqrt(config.network.path_loss);
    for (int k = 0; k < K; ++k) {
        for (int t = 0; t < T; ++t) {
            // unit-variance complex Gaussian: re, im ~ N(0, 1/2)
            const double re = rng.gaussian() * M_SQRT1_2;
            const double im = rng.gaussian() * M_SQRT1_2;
            state.magnitudes(k, t) = amplitude * std::hypot(re, im);
        }
    }
    return state;
}

std::vector<double> sensed_sample(std::span<const double> clean, const DeviceParams& device,
                                  const NetworkParams& net, double p_sense, Rng& rng) {
    if (p_sense <= 0.0) throw std::invalid_argument("sensed_sample: p_sense must be > 0");
    const int dim = static_cast<int>(clean.size());
    std::vector<double> out(clean.begin(), clean.end());
    const double clutter_std = std::sqrt(device.clutter_variance / dim);
    const double noise_std = std::sqrt(net.sensing_noise_variance / dim) / std::sqrt(p_sense);
    for (int i = 0; i < dim; ++i) {
        out[i] += clutter_std * rng.gaussian() + noise_std * rng.gaussian();
    }
    return out;
}

double sensing_latency(double batch, const DeviceParams& device) {
    return batch * device.sense_latency_per_sample_s;
}

double sensing_energy(double p_sense, double batch, const DeviceParams& device) {
    return p_sense * batch * device.sense_latency_per_sample_s;
}

double compute_latency(double batch, const DeviceParams& device) {
    return device.cycles_per_sample * batch / device.cpu_freq_hz;
}

double compute_energy(double batch, const DeviceParams& device) {
    return device.capacitance_coeff * device.cycles_per_sample * batch * device.cpu_freq_hz *
           device.cpu_freq_hz;
}

double comm_latency(double batch, const NetworkParams& net) {
    const double symbols = static_cast<double>(net.embedding_dim) * batch;
    return std::ceil(symbols / net.symbols_per_block) * net.slot_duration_s;
}

double comm_latency_relaxed(double batch, const NetworkParams& net) {
    const double symbols = static_cast<double>(net.embedding_dim) * batch;
    return symbols / net.symbols_per_block * net.slot_duration_s;
}

double tx_energy(double p_tx, const NetworkParams& net) { return p_tx * net.slot_duration_s; }

double round_latency(double batch, const DeviceParams& device, const NetworkParams& net,
                     bool relaxed) {
    const double uplink = relaxed ? comm_latency_relaxed(batch, net) : comm_latency(batch, net);
    return sensing_latency(batch, device) + compute_latency(batch, device) + uplink;
}

FeasibilityReport check_feasibility(const AllocationPlan& plan, const SystemConfig& config,
                                    bool use_relaxed_latency) {
    config.validate();
    plan.validate(config.network);
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = net.num_rounds;

    FeasibilityReport report;
    report.per_device_energy_used.assign(K, 0.0);
    report.per_device_per_round_latency = Matrix(K, T);

    for (int k = 0; k < K; ++k) {
        const auto& device = config.devices[k];
        double energy = 0.0;
        for (int t = 0; t < T; ++t) {
            const double b = plan.batch_size[t];
            const double p_tx = plan.tx_power(k, t);
            const double p_s = plan.sense_power(k, t);

            const double latency = round_latency(b, device, net, use_relaxed_latency);
            report.per_device_per_round_latency(k, t) = latency;
            const double latency_slack = device.per_round_latency_budget_s - latency;
            if (latency_slack < 0.0)
                report.violations.push_back({"latency", k, t, latency_slack});

            const double symbol_power_slack =
                device.max_power_watts - p_tx / (net.embedding_dim * b);
            if (symbol_power_slack < 0.0)
                report.violations.push_back({"symbol_power", k, t, symbol_power_slack});

            const double sense_cap_slack = device.max_power_watts - p_s;
            if (sense_cap_slack < 0.0)
                report.violations.push_back({"sense_power_cap", k, t, sense_cap_slack});

            energy += sensing_energy(p_s, b, device) + compute_energy(b, device) +
                      tx_energy(p_tx, net);
        }
        report.per_device_energy_used[k] = energy;
        const double energy_slack = device.energy_budget_joules - energy;
        if (energy_slack < 0.0) report.violations.push_back({"energy", k, -1, energy_slack});
    }
    return report;
}

}  // namespace model
}  // namespace vfeel
