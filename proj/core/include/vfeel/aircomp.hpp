/**
 * Over-the-air embedding aggregation and its error statistics.
 *
 * Devices transmit their embedding batches simultaneously; the channel sums
 * h_k*sqrt(p_k)*psi_k, white noise is added, and the server scales by
 * 1/sqrt(eta). All signals are real-valued: perfect phase pre-compensation
 * reduces the complex baseband to channel magnitudes.
 */
#ifndef VFEEL_AIRCOMP_HPP
#define VFEEL_AIRCOMP_HPP

#include <span>
#include <string>
#include <vector>

#include "vfeel/model.hpp"
#include "vfeel/rng.hpp"

namespace vfeel {

/// A batch of embeddings: `batch` rows of `dim` coordinates, row-major.
struct EmbeddingBatch {
    int batch = 0;
    int dim = 0;
    std::vector<double> values;

    EmbeddingBatch() = default;
    EmbeddingBatch(int b, int d, double fill = 0.0)
        : batch(b), dim(d), values(static_cast<std::size_t>(b) * d, fill) {}

    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * dim + j]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * dim + j]; }
    std::span<double> sample(int i) { return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)}; }
    std::span<const double> sample(int i) const { return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)}; }
};

/**
 * Aggregation error statistics for one round. The analytic bound splits
 * into the misalignment, sensing-noise, and channel-noise parts; the
 * empirical fields hold Monte-Carlo estimates when available.
 */
struct AggregationErrorStats {
    std::vector<double> empirical_bias;  // d-vector, mean of realized errors
    double empirical_mse = 0.0;          // mean squared error norm per sample
    double bound_misalignment = 0.0;
    double bound_sensing = 0.0;
    double bound_channel_noise = 0.0;
    double bound_total = 0.0;

    std::string to_json_string() const;
};

namespace aircomp {

/**
 * Simulates the over-the-air sum for one round:
 *   (sum_k h_k sqrt(p_k) psi_k + Z) / sqrt(eta),
 * Z i.i.d. Gaussian with per-entry variance channel_noise_variance.
 * All device batches must share the same shape; eta must be positive.
 */
EmbeddingBatch aggregate(std::span<const EmbeddingBatch> per_device_embeddings,
                         std::span<const double> channel_col, const PlanRound& round,
                         const NetworkParams& net, Rng& rng);

/// Elementwise estimate - truth; shapes must match.
EmbeddingBatch error_realization(const EmbeddingBatch& estimate, const EmbeddingBatch& truth);

/**
 * Analytic per-sample MSE bound of the aggregation error:
 *   sum_k (h sqrt(p)/sqrt(eta) - 1)^2
 * + sum_k (h^2 p / eta)(clutter_var + sensing_var/p_sense) G2^2
 * + channel_var / eta.
 * A device with h^2 p = 0 contributes nothing (it transmits nothing), so
 * its sensing power may be zero; otherwise zero sensing power is a domain
 * error.
 */
AggregationErrorStats mse_bound(const PlanRound& round, std::span<const double> channel_col,
                                double embed_input_grad_G2, const NetworkParams& net,
                                std::span<const DeviceParams> devices);

}  // namespace aircomp
}  // namespace vfeel

#endif
