#include "vfeel/aircomp.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace vfeel {

std::string AggregationErrorStats::to_json_string() const {
    nlohmann::json j;
    j["empirical_bias"] = empirical_bias;
    j["empirical_mse"] = empirical_mse;
    j["bound_misalignment"] = bound_misalignment;
    j["bound_sensing"] = bound_sensing;
    j["bound_channel_noise"] = bound_channel_noise;
    j["bound_total"] = bound_total;
    return j.dump();
}

namespace aircomp {

EmbeddingBatch aggregate(std::span<const EmbeddingBatch> per_device_embeddings,
                         std::span<const double> channel_col, const PlanRound& round,
                         const NetworkParams& net, Rng& rng) {
    if (round.denoise <= 0.0) throw std::invalid_argument("aggregate: denoise factor must be > 0");
    const int K = static_cast<int>(per_device_embeddings.size());
    if (K == 0 || static_cast<int>(channel_col.size()) != K ||
        static_cast<int>(round.tx_power.size()) != K)
        throw std::invalid_argument("aggregate: device count mismatch");

    const int b = per_device_embeddings[0].batch;
    const int d = per_device_embeddings[0].dim;
    for (const auto& batch : per_device_embeddings)
        if (batch.batch != b || batch.dim != d)
            throw std::invalid_argument("aggregate: all devices must share the batch shape");

    const double inv_sqrt_eta = 1.0 / std::sqrt(round.denoise);
    EmbeddingBatch out(b, d);
    for (int k = 0; k < K; ++k) {
        const double gain = channel_col[k] * std::sqrt(round.tx_power[k]) * inv_sqrt_eta;
        if (gain == 0.0) continue;
        const auto& values = per_device_embeddings[k].values;
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] += gain * values[i];
    }
    const double noise_std = std::sqrt(net.channel_noise_variance) * inv_sqrt_eta;
    if (noise_std > 0.0) {
        for (auto& value : out.values) value += noise_std * rng.gaussian();
    }
    return out;
}

EmbeddingBatch error_realization(const EmbeddingBatch& estimate, const EmbeddingBatch& truth) {
    if (estimate.batch != truth.batch || estimate.dim != truth.dim)
        throw std::invalid_argument("error_realization: shape mismatch");
    EmbeddingBatch diff(estimate.batch, estimate.dim);
    for (std::size_t i = 0; i < diff.values.size(); ++i)
        diff.values[i] = estimate.values[i] - truth.values[i];
    return diff;
}

AggregationErrorStats mse_bound(const PlanRound& round, std::span<const double> channel_col,
                                double embed_input_grad_G2, const NetworkParams& net,
                                std::span<const DeviceParams> devices) {
    if (round.denoise <= 0.0) throw std::invalid_argument("mse_bound: denoise factor must be > 0");
    const int K = static_cast<int>(channel_col.size());
    if (static_cast<int>(round.tx_power.size()) != K ||
        static_cast<int>(round.sense_power.size()) != K || static_cast<int>(devices.size()) != K)
        throw std::invalid_argument("mse_bound: device count mismatch");

    const double eta = round.denoise;
    const double g2_sq = embed_input_grad_G2 * embed_input_grad_G2;
    AggregationErrorStats stats;
    for (int k = 0; k < K; ++k) {
        const double h = channel_col[k];
        const double p = round.tx_power[k];
        const double received_power = h * h * p;  // h^2 p
        const double coeff = h * std::sqrt(p) / std::sqrt(eta);
        stats.bound_misalignment += (coeff - 1.0) * (coeff - 1.0);
        if (received_power == 0.0) continue;  // nothing transmitted, no noise propagates
        const double p_s = round.sense_power[k];
        if (p_s <= 0.0)
            throw std::domain_error("mse_bound: zero sensing power with nonzero transmit power");
        const double sample_noise =
            devices[k].clutter_variance + net.sensing_noise_variance / p_s;
        stats.bound_sensing += received_power / eta * sample_noise * g2_sq;
    }
    stats.bound_channel_noise = net.channel_noise_variance / eta;
    stats.bound_total = stats.bound_misalignment + stats.bound_sensing + stats.bound_channel_noise;
    return stats;
}

}  // namespace aircomp
}  // namespace vfeel
