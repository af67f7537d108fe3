/**
 * System model: physical/network parameters, Rayleigh channel sampling,
 * the sensing noise model, and the per-round latency/energy cost model
 * with feasibility checking.
 *
 * Conventions used throughout the library:
 *  - Powers are in watts, energies in joules, latencies in seconds.
 *  - Noise variances are total second moments of the corresponding vector
 *    (E[n'n] = variance); per-coordinate variance is total / dimension.
 *  - Device-by-round tables are K x T matrices (row = device).
 */
#ifndef VFEEL_MODEL_HPP
#define VFEEL_MODEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vfeel/matrix.hpp"
#include "vfeel/rng.hpp"

namespace vfeel {

struct DeviceParams {
    double energy_budget_joules = 1000.0;       // total across all rounds
    double per_round_latency_budget_s = 300.0;  // per-round deadline
    double max_power_watts = 0.05;              // caps both per-symbol tx power and sensing power
    double cycles_per_sample = 1e7;
    double cpu_freq_hz = 2e9;
    double capacitance_coeff = 1e-28;           // chip energy model coefficient
    double sense_latency_per_sample_s = 0.65;
    double clutter_variance = 1e-9;             // multi-hop reflection interference, total second moment

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct NetworkParams {
    int num_devices = 3;
    int num_rounds = 200;
    int embedding_dim = 100;
    int symbols_per_block = 14;        // analog symbols per resource block
    double slot_duration_s = 1e-3;     // resource-block duration
    double channel_noise_variance = 1e-9;
    double sensing_noise_variance = 1e-9;
    double path_loss = 1e-3;           // scalar multiplier on channel power

    void validate() const;
};

struct SystemConfig {
    NetworkParams network;
    std::vector<DeviceParams> devices;  // length num_devices
    std::uint64_t rng_seed = 1;

    void validate() const;
};

/// Per-device per-round channel magnitudes.
struct ChannelState {
    Matrix magnitudes;  // K x T, nonnegative
};

/**
 * The decision variables of the resource allocator: per-device transmit
 * power scaling and sensing power (K x T), plus per-round batch size and
 * denoising factor. `relaxed` marks a continuous batch-size relaxation;
 * finalized plans carry integral batch sizes >= 1.
 */
struct AllocationPlan {
    Matrix tx_power;                 // K x T, >= 0
    Matrix sense_power;              // K x T, >= 0
    std::vector<double> batch_size;  // length T, > 0
    std::vector<double> denoise;     // length T, > 0
    bool relaxed = false;

    void validate(const NetworkParams& net) const;
};

/// One round of an AllocationPlan, copied out for per-round operations.
struct PlanRound {
    std::vector<double> tx_power;     // length K
    std::vector<double> sense_power;  // length K
    double batch = 0.0;
    double denoise = 1.0;
};

PlanRound plan_round(const AllocationPlan& plan, int t);

struct Violation {
    std::string constraint;  // "latency", "symbol_power", "sense_power_cap", "energy"
    int device = 0;
    int round = 0;           // -1 for whole-horizon (energy) constraints
    double slack = 0.0;      // limit minus usage; negative = violated
};

struct FeasibilityReport {
    std::vector<double> per_device_energy_used;  // length K, joules
    Matrix per_device_per_round_latency;         // K x T, seconds
    std::vector<Violation> violations;

    bool feasible() const { return violations.empty(); }
    std::string to_json_string() const;
};

namespace model {

/// i.i.d. Rayleigh magnitudes: h = sqrt(path_loss) * |g|, g unit-variance
/// complex Gaussian. Deterministic given config.rng_seed.
ChannelState sample_channels(const SystemConfig& config);

/// Applies the sensing perturbation to one clean sample: clutter plus
/// additive sensing noise scaled by 1/sqrt(p_sense). Noise vectors are
/// real Gaussian with total variance equal to the configured second
/// moments. Throws on p_sense <= 0.
std::vector<double> sensed_sample(std::span<const double> clean, const DeviceParams& device,
                                  const NetworkParams& net, double p_sense, Rng& rng);

double sensing_latency(double batch, const DeviceParams& device);
double sensing_energy(double p_sense, double batch, const DeviceParams& device);
double compute_latency(double batch, const DeviceParams& device);
double compute_energy(double batch, const DeviceParams& device);

/// Uplink latency for one round: ceil(d*b / M) resource blocks.
double comm_latency(double batch, const NetworkParams& net);
/// Ceiling dropped; never exceeds comm_latency. Used by the relaxed solver.
double comm_latency_relaxed(double batch, const NetworkParams& net);
double tx_energy(double p_tx, const NetworkParams& net);

/// Total per-round latency of one device (sensing + compute + uplink).
double round_latency(double batch, const DeviceParams& device, const NetworkParams& net,
                     bool relaxed = false);

/**
 * Evaluates every constraint of the allocation problem: per-round latency
 * (ceiling form unless use_relaxed_latency), average-per-symbol transmit
 * power p/(d*b) <= P_max, sensing power cap, and per-device total energy.
 * Every violated constraint is reported with its signed slack.
 */
FeasibilityReport check_feasibility(const AllocationPlan& plan, const SystemConfig& config,
                                    bool use_relaxed_latency = false);

}  // namespace model
}  // namespace vfeel

#endif
