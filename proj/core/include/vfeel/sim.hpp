/**
 * End-to-end training simulator on a synthetic feature-partitioned task.
 *
 * Each device holds a disjoint block of features and a small embedding
 * model; the server holds a softmax classifier over the summed embeddings.
 * Every round: sense a batch (noisy samples), embed locally, aggregate
 * over the air, take one SGD step on all parameter blocks. Sensing noise
 * and aggregation distortion propagate into the updates exactly as
 * received.
 */
#ifndef VFEEL_SIM_HPP
#define VFEEL_SIM_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "vfeel/aircomp.hpp"
#include "vfeel/convergence.hpp"
#include "vfeel/model.hpp"

namespace vfeel {
namespace sim {

/// Class-conditional Gaussian data, vertically partitioned across devices.
/// The Bayes classifier is linear, so the zero-noise task is exactly
/// learnable by the linear embedding models.
struct SyntheticTask {
    int num_classes = 0;
    std::vector<int> feature_dims;     // per device
    std::vector<int> feature_offsets;  // prefix sums into the full feature vector
    int total_features = 0;
    int embedding_dim = 0;

    Matrix train_features;  // N_train x total_features
    std::vector<int> train_labels;
    Matrix test_features;   // 20% held out
    std::vector<int> test_labels;
    std::uint64_t generator_seed = 0;

    int device_of_feature_block(int k) const { return feature_offsets[k]; }
};

SyntheticTask make_task(int num_devices, std::span<const int> feature_dims, int embedding_dim,
                        int num_classes, int total_samples, std::uint64_t seed,
                        double class_separation = 3.0, double feature_scale = 1.0);

/// One device's embedding map: linear by default, optionally one hidden
/// tanh layer for nonlinearity stress tests.
struct DeviceModel {
    Matrix weight;             // d x m (linear) or hidden x m
    std::vector<double> bias;  // d (linear) or hidden
    Matrix out_weight;         // d x hidden, empty when linear
    std::vector<double> out_bias;
    bool has_hidden = false;

    int input_dim() const { return weight.cols(); }
};

struct ModelState {
    Matrix server_weight;             // num_classes x d
    std::vector<double> server_bias;  // num_classes
    std::vector<DeviceModel> devices;
    int embedding_dim = 0;
    int num_classes = 0;
};

ModelState init_model(const SyntheticTask& task, std::uint64_t seed, bool hidden = false,
                      int hidden_units = 16);

struct Gradients {
    Matrix server_weight;
    std::vector<double> server_bias;
    std::vector<DeviceModel> devices;  // same shapes as the model, holding gradients
};

/// Independent RNG streams for one round. Copyable, so a round can be
/// replayed with frozen noise (finite-difference checks rely on this).
struct RoundRngs {
    Rng data;
    Rng sensing;
    Rng channel;
};

struct ForwardCache {
    std::vector<int> sample_indices;            // batch draw (without replacement)
    std::vector<Matrix> sensed_inputs;          // per device, b x m_k
    std::vector<EmbeddingBatch> embeddings;     // per device, noisy inputs
    EmbeddingBatch clean_sum;                   // exact sum of clean-input embeddings
    EmbeddingBatch aggregated;                  // distorted aggregate as received
    Matrix probabilities;                       // b x num_classes, softmax outputs
    std::vector<int> labels;
    std::vector<double> align_coeff;            // per device, h sqrt(p) / sqrt(eta)
    AggregationErrorStats agg_stats;            // realized + bound statistics
};

struct SimOptions {
    bool fresh_sensing_noise = true;  // resample sensing noise each round on cycled data
    bool collect_agg_stats = true;
    double bound_G2 = 1.0;            // input-gradient constant used in the recorded MSE bounds
};

/// Runs sensing, local embedding, over-the-air aggregation, and the server
/// forward pass for one round. Returns the mean sample loss and everything
/// the backward pass needs.
std::pair<double, ForwardCache> forward_round(const ModelState& state, const SyntheticTask& task,
                                              const PlanRound& round,
                                              std::span<const double> channel_col,
                                              const SystemConfig& config, RoundRngs& rngs,
                                              const SimOptions& options = {});

/// Server gradient from the distorted aggregate; device gradients by the
/// chain rule through the aggregate exactly as received (the alignment
/// coefficient scales each device's backward signal).
Gradients backward_round(const ForwardCache& cache, const ModelState& state);

struct TrainingState {
    ModelState model;
    int round = 0;
    std::vector<double> loss_history;
    std::vector<double> accuracy_history;  // measured every 10 rounds, carried in between
    std::vector<AggregationErrorStats> agg_stats;
};

/// T rounds of forward/backward/update with a fixed learning rate. Aborts
/// with a diagnostic if the loss diverges to NaN.
TrainingState train(const SystemConfig& config, const AllocationPlan& plan,
                    const ChannelState& channel, const SyntheticTask& task, int rounds,
                    double learning_rate, std::uint64_t seed, const SimOptions& options = {},
                    std::uint64_t model_seed = 0);

double test_accuracy(const ModelState& state, const SyntheticTask& task);

/// Mean loss of the exact (zero-distortion, perfectly aggregated) model over
/// the training split.
double dataset_loss(const ModelState& state, const SyntheticTask& task);

/// Measures the convergence constants on the task: embedding-Jacobian norms
/// (exact for the linear maps), the loss-Hessian norm w.r.t. the aggregate,
/// the per-sample gradient variance, and the monolithic-loss smoothness via
/// power iteration on Hessian-vector products.
ConvergenceConstants estimate_constants(const SyntheticTask& task, const ModelState& state,
                                        int samples, const NetworkParams& net);

}  // namespace sim
}  // namespace vfeel

#endif
