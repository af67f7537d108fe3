#include "vfeel/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace vfeel {
namespace sim {

namespace {

void softmax_row(std::span<const double> logits, std::span<double> probs) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        probs[c] = std::exp(logits[c] - peak);
        total += probs[c];
    }
    for (auto& p : probs) p /= total;
}

/// Embedding of one input block. `hidden_out`, when non-null, receives the
/// tanh activations (needed by the backward pass).
void embed(const DeviceModel& dev, std::span<const double> input, std::span<double> out,
           std::vector<double>* hidden_out = nullptr) {
    if (!dev.has_hidden) {
        for (int j = 0; j < dev.weight.rows(); ++j) {
            double acc = dev.bias[j];
            const auto row = dev.weight.row(j);
            for (int i = 0; i < dev.weight.cols(); ++i) acc += row[i] * input[i];
            out[j] = acc;
        }
        return;
    }
    std::vector<double> hidden(dev.weight.rows());
    for (int j = 0; j < dev.weight.rows(); ++j) {
        double acc = dev.bias[j];
        const auto row = dev.weight.row(j);
        for (int i = 0; i < dev.weight.cols(); ++i) acc += row[i] * input[i];
        hidden[j] = std::tanh(acc);
    }
    for (int j = 0; j < dev.out_weight.rows(); ++j) {
        double acc = dev.out_bias[j];
        const auto row = dev.out_weight.row(j);
        for (int i = 0; i < dev.out_weight.cols(); ++i) acc += row[i] * hidden[i];
        out[j] = acc;
    }
    if (hidden_out) *hidden_out = std::move(hidden);
}

DeviceModel zero_like(const DeviceModel& dev) {
    DeviceModel g;
    g.weight = Matrix(dev.weight.rows(), dev.weight.cols());
    g.bias.assign(dev.bias.size(), 0.0);
    g.has_hidden = dev.has_hidden;
    if (dev.has_hidden) {
        g.out_weight = Matrix(dev.out_weight.rows(), dev.out_weight.cols());
        g.out_bias.assign(dev.out_bias.size(), 0.0);
    }
    return g;
}

}  // namespace

SyntheticTask make_task(int num_devices, std::span<const int> feature_dims, int embedding_dim,
                        int num_classes, int total_samples, std::uint64_t seed,
                        double class_separation, double feature_scale) {
    if (num_devices < 1 || num_classes < 1 || total_samples < num_classes || embedding_dim < 1)
        throw std::invalid_argument("make_task: dimensions must be positive");
    if (static_cast<int>(feature_dims.size()) != num_devices)
        throw std::invalid_argument("make_task: feature_dims length must equal num_devices");
    for (int m : feature_dims)
        if (m < 1) throw std::invalid_argument("make_task: every feature block must be non-empty");

    SyntheticTask task;
    task.num_classes = num_classes;
    task.feature_dims.assign(feature_dims.begin(), feature_dims.end());
    task.feature_offsets.resize(num_devices + 1, 0);
    for (int k = 0; k < num_devices; ++k)
        task.feature_offsets[k + 1] = task.feature_offsets[k] + feature_dims[k];
    task.total_features = task.feature_offsets[num_devices];
    task.embedding_dim = embedding_dim;
    task.generator_seed = seed;

    Rng rng(derive_seed(seed, 0x7461736b));

    // class-conditional Gaussians: mean on a random direction of norm
    // class_separation, identity covariance
    Matrix means(num_classes, task.total_features);
    for (int c = 0; c < num_classes; ++c) {
        double norm_sq = 0.0;
        for (int i = 0; i < task.total_features; ++i) {
            means(c, i) = rng.gaussian();
            norm_sq += means(c, i) * means(c, i);
        }
        const double scale =
            class_separation * feature_scale / std::sqrt(std::max(norm_sq, 1e-30));
        for (int i = 0; i < task.total_features; ++i) means(c, i) *= scale;
    }

    // balanced labels, then a shuffled 80/20 split
    std::vector<int> labels(total_samples);
    for (int i = 0; i < total_samples; ++i) labels[i] = i % num_classes;
    Matrix features(total_samples, task.total_features);
    for (int i = 0; i < total_samples; ++i) {
        for (int j = 0; j < task.total_features; ++j)
            features(i, j) = means(labels[i], j) + feature_scale * rng.gaussian();
    }
    std::vector<int> order(total_samples);
    std::iota(order.begin(), order.end(), 0);
    for (int i = total_samples - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_index(i + 1));
        std::swap(order[i], order[j]);
    }
    const int test_count = total_samples / 5;
    const int train_count = total_samples - test_count;
    task.train_features = Matrix(train_count, task.total_features);
    task.train_labels.resize(train_count);
    task.test_features = Matrix(test_count, task.total_features);
    task.test_labels.resize(test_count);
    for (int i = 0; i < train_count; ++i) {
        const int src = order[i];
        task.train_labels[i] = labels[src];
        for (int j = 0; j < task.total_features; ++j)
            task.train_features(i, j) = features(src, j);
    }
    for (int i = 0; i < test_count; ++i) {
        const int src = order[train_count + i];
        task.test_labels[i] = labels[src];
        for (int j = 0; j < task.total_features; ++j) task.test_features(i, j) = features(src, j);
    }
    return task;
}

ModelState init_model(const SyntheticTask& task, std::uint64_t seed, bool hidden,
                      int hidden_units) {
    ModelState state;
    state.embedding_dim = task.embedding_dim;
    state.num_classes = task.num_classes;
    state.server_weight = Matrix(task.num_classes, task.embedding_dim);
    state.server_bias.assign(task.num_classes, 0.0);
    Rng rng(derive_seed(seed, 0x6d6f64656c));
    const double server_scale = 0.02;
    for (auto& w : state.server_weight.data()) w = server_scale * rng.gaussian();

    const int num_devices = static_cast<int>(task.feature_dims.size());
    state.devices.resize(num_devices);
    for (int k = 0; k < num_devices; ++k) {
        DeviceModel& dev = state.devices[k];
        dev.has_hidden = hidden;
        const int m = task.feature_dims[k];
        if (!hidden) {
            dev.weight = Matrix(task.embedding_dim, m);
            dev.bias.assign(task.embedding_dim, 0.0);
            const double scale = 0.4 / std::sqrt(static_cast<double>(m));
            for (auto& w : dev.weight.data()) w = scale * rng.gaussian();
        } else {
            dev.weight = Matrix(hidden_units, m);
            dev.bias.assign(hidden_units, 0.0);
            dev.out_weight = Matrix(task.embedding_dim, hidden_units);
            dev.out_bias.assign(task.embedding_dim, 0.0);
            const double in_scale = 1.0 / std::sqrt(static_cast<double>(m));
            const double out_scale = 1.0 / std::sqrt(static_cast<double>(hidden_units));
            for (auto& w : dev.weight.data()) w = in_scale * rng.gaussian();
            for (auto& w : dev.out_weight.data()) w = out_scale * rng.gaussian();
        }
    }
    return state;
}

std::pair<double, ForwardCache> forward_round(const ModelState& state, const SyntheticTask& task,
                                              const PlanRound& round,
                                              std::span<const double> channel_col,
                                              const SystemConfig& config, RoundRngs& rngs,
                                              const SimOptions& options) {
    const auto& net = config.network;
    const int K = net.num_devices;
    const int d = state.embedding_dim;
    const int b = static_cast<int>(round.batch);
    const int train_count = task.train_features.rows();
    if (b < 1 || round.batch != std::floor(round.batch))
        throw std::invalid_argument("forward_round: batch size must be a positive integer");
    if (b > train_count)
        throw std::invalid_argument("forward_round: batch size exceeds the dataset");

    ForwardCache cache;
    // fresh permutation each round, batch drawn without replacement
    std::vector<int> order(train_count);
    std::iota(order.begin(), order.end(), 0);
    for (int i = train_count - 1; i > 0; --i) {
        const int j = static_cast<int>(rngs.data.uniform_index(i + 1));
        std::swap(order[i], order[j]);
    }
    cache.sample_indices.assign(order.begin(), order.begin() + b);
    cache.labels.resize(b);
    for (int i = 0; i < b; ++i) cache.labels[i] = task.train_labels[cache.sample_indices[i]];

    cache.sensed_inputs.resize(K);
    cache.embeddings.assign(K, EmbeddingBatch(b, d));
    cache.clean_sum = EmbeddingBatch(b, d);
    std::vector<double> clean_embedding(d);
    // one seed per round; per-(device, slot) streams keep the realizations
    // independent of the batch size, so runs differing only in b share the
    // noise on their common samples
    const std::uint64_t sensing_round_seed = rngs.sensing.next_u64();
    for (int k = 0; k < K; ++k) {
        const int m = task.feature_dims[k];
        const int offset = task.feature_offsets[k];
        cache.sensed_inputs[k] = Matrix(b, m);
        for (int i = 0; i < b; ++i) {
            const int idx = cache.sample_indices[i];
            const auto full_row = task.train_features.row(idx);
            const std::span<const double> clean = full_row.subspan(offset, m);
            std::vector<double> sensed;
            if (options.fresh_sensing_noise) {
                Rng slot(derive_seed(sensing_round_seed,
                                     static_cast<std::uint64_t>(k) * 0x10000ULL + i));
                sensed = model::sensed_sample(clean, config.devices[k], net,
                                              round.sense_power[k], slot);
            } else {
                // re-observation mode: a sample keeps the same noise
                // realization every time it is drawn
                Rng fixed(derive_seed(task.generator_seed ^ 0x5e6e5eULL,
                                      static_cast<std::uint64_t>(idx) * K + k));
                sensed = model::sensed_sample(clean, config.devices[k], net,
                                              round.sense_power[k], fixed);
            }
            for (int j = 0; j < m; ++j) cache.sensed_inputs[k](i, j) = sensed[j];
            embed(state.devices[k], sensed, cache.embeddings[k].sample(i));
            embed(state.devices[k], clean, clean_embedding);
            auto sum_row = cache.clean_sum.sample(i);
            for (int j = 0; j < d; ++j) sum_row[j] += clean_embedding[j];
        }
    }

    cache.aggregated = aircomp::aggregate(cache.embeddings, channel_col, round, net, rngs.channel);
    cache.align_coeff.resize(K);
    for (int k = 0; k < K; ++k)
        cache.align_coeff[k] =
            channel_col[k] * std::sqrt(round.tx_power[k]) / std::sqrt(round.denoise);

    if (options.collect_agg_stats) {
        const EmbeddingBatch diff = aircomp::error_realization(cache.aggregated, cache.clean_sum);
        cache.agg_stats = aircomp::mse_bound(round, channel_col, options.bound_G2, net,
                                             config.devices);
        cache.agg_stats.empirical_bias.assign(d, 0.0);
        double mse = 0.0;
        for (int i = 0; i < b; ++i) {
            const auto row = diff.sample(i);
            double norm_sq = 0.0;
            for (int j = 0; j < d; ++j) {
                cache.agg_stats.empirical_bias[j] += row[j] / b;
                norm_sq += row[j] * row[j];
            }
            mse += norm_sq / b;
        }
        cache.agg_stats.empirical_mse = mse;
    }

    // server softmax over the distorted aggregate
    cache.probabilities = Matrix(b, state.num_classes);
    std::vector<double> logits(state.num_classes);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const auto psi = cache.aggregated.sample(i);
        for (int c = 0; c < state.num_classes; ++c) {
            double acc = state.server_bias[c];
            const auto row = state.server_weight.row(c);
            for (int j = 0; j < d; ++j) acc += row[j] * psi[j];
            logits[c] = acc;
        }
        softmax_row(logits, cache.probabilities.row(i));
        loss -= std::log(std::max(cache.probabilities(i, cache.labels[i]), 1e-300));
    }
    loss /= b;
    return {loss, std::move(cache)};
}

Gradients backward_round(const ForwardCache& cache, const ModelState& state) {
    const int b = cache.aggregated.batch;
    const int d = state.embedding_dim;
    const int C = state.num_classes;
    const int K = static_cast<int>(state.devices.size());

    Gradients grads;
    grads.server_weight = Matrix(C, d);
    grads.server_bias.assign(C, 0.0);
    grads.devices.reserve(K);
    for (int k = 0; k < K; ++k) grads.devices.push_back(zero_like(state.devices[k]));

    std::vector<double> backward_signal(d);  // d loss / d aggregate, per sample
    std::vector<double> delta(C);
    for (int i = 0; i < b; ++i) {
        for (int c = 0; c < C; ++c)
            delta[c] = (cache.probabilities(i, c) - (c == cache.labels[i] ? 1.0 : 0.0)) / b;
        const auto psi = cache.aggregated.sample(i);
        for (int c = 0; c < C; ++c) {
            grads.server_bias[c] += delta[c];
            auto row = grads.server_weight.row(c);
            for (int j = 0; j < d; ++j) row[j] += delta[c] * psi[j];
        }
        std::fill(backward_signal.begin(), backward_signal.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const auto row = state.server_weight.row(c);
            for (int j = 0; j < d; ++j) backward_signal[j] += delta[c] * row[j];
        }
        // each device sees the server signal scaled by its alignment
        // coefficient (its embedding enters the aggregate with that gain)
        for (int k = 0; k < K; ++k) {
            const double gain = cache.align_coeff[k];
            if (gain == 0.0) continue;
            const DeviceModel& dev = state.devices[k];
            DeviceModel& grad = grads.devices[k];
            const auto input = cache.sensed_inputs[k].row(i);
            if (!dev.has_hidden) {
                for (int j = 0; j < d; ++j) {
                    const double gj = gain * backward_signal[j];
                    grad.bias[j] += gj;
                    auto wrow = grad.weight.row(j);
                    for (int m = 0; m < dev.weight.cols(); ++m) wrow[m] += gj * input[m];
                }
            } else {
                const int hidden_units = dev.weight.rows();
                // recompute activations for the backward pass
                std::vector<double> hidden;
                std::vector<double> out(d);
                embed(dev, input, out, &hidden);
                std::vector<double> dhidden(hidden_units, 0.0);
                for (int j = 0; j < d; ++j) {
                    const double gj = gain * backward_signal[j];
                    grad.out_bias[j] += gj;
                    auto orow = grad.out_weight.row(j);
                    const auto wrow = dev.out_weight.row(j);
                    for (int u = 0; u < hidden_units; ++u) {
                        orow[u] += gj * hidden[u];
                        dhidden[u] += gj * wrow[u];
                    }
                }
                for (int u = 0; u < hidden_units; ++u) {
                    const double du = dhidden[u] * (1.0 - hidden[u] * hidden[u]);
                    grad.bias[u] += du;
                    auto wrow = grad.weight.row(u);
                    for (int m = 0; m < dev.weight.cols(); ++m) wrow[m] += du * input[m];
                }
            }
        }
    }
    return grads;
}

namespace {

void apply_update(ModelState& state, const Gradients& grads, double learning_rate) {
    auto& sw = state.server_weight.data();
    const auto& gw = grads.server_weight.data();
    for (std::size_t i = 0; i < sw.size(); ++i) sw[i] -= learning_rate * gw[i];
    for (std::size_t c = 0; c < state.server_bias.size(); ++c)
        state.server_bias[c] -= learning_rate * grads.server_bias[c];
    for (std::size_t k = 0; k < state.devices.size(); ++k) {
        DeviceModel& dev = state.devices[k];
        const DeviceModel& g = grads.devices[k];
        for (std::size_t i = 0; i < dev.weight.data().size(); ++i)
            dev.weight.data()[i] -= learning_rate * g.weight.data()[i];
        for (std::size_t i = 0; i < dev.bias.size(); ++i)
            dev.bias[i] -= learning_rate * g.bias[i];
        if (dev.has_hidden) {
            for (std::size_t i = 0; i < dev.out_weight.data().size(); ++i)
                dev.out_weight.data()[i] -= learning_rate * g.out_weight.data()[i];
            for (std::size_t i = 0; i < dev.out_bias.size(); ++i)
                dev.out_bias[i] -= learning_rate * g.out_bias[i];
        }
    }
}

}  // namespace

double test_accuracy(const ModelState& state, const SyntheticTask& task) {
    const int n = task.test_features.rows();
    if (n == 0) return 0.0;
    const int d = state.embedding_dim;
    std::vector<double> aggregate(d);
    std::vector<double> embedding(d);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        std::fill(aggregate.begin(), aggregate.end(), 0.0);
        const auto row = task.test_features.row(i);
        for (std::size_t k = 0; k < state.devices.size(); ++k) {
            const std::span<const double> block =
                row.subspan(task.feature_offsets[k], task.feature_dims[k]);
            embed(state.devices[k], block, embedding);
            for (int j = 0; j < d; ++j) aggregate[j] += embedding[j];
        }
        int best = 0;
        double best_score = -1e300;
        for (int c = 0; c < state.num_classes; ++c) {
            double acc = state.server_bias[c];
            const auto wrow = state.server_weight.row(c);
            for (int j = 0; j < d; ++j) acc += wrow[j] * aggregate[j];
            if (acc > best_score) {
                best_score = acc;
                best = c;
            }
        }
        if (best == task.test_labels[i]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

TrainingState train(const SystemConfig& config, const AllocationPlan& plan,
                    const ChannelState& channel, const SyntheticTask& task, int rounds,
                    double learning_rate, std::uint64_t seed, const SimOptions& options,
                    std::uint64_t model_seed) {
    plan.validate(config.network);
    if (rounds > static_cast<int>(plan.batch_size.size()))
        throw std::invalid_argument("train: more rounds than the plan covers");

    TrainingState state;
    state.model = init_model(task, model_seed == 0 ? derive_seed(seed, 0x696e6974) : model_seed,
                             false, 0);
    double last_accuracy = test_accuracy(state.model, task);

    for (int t = 0; t < rounds; ++t) {
        RoundRngs rngs{Rng(derive_seed(seed, 3 * static_cast<std::uint64_t>(t))),
                       Rng(derive_seed(seed, 3 * static_cast<std::uint64_t>(t) + 1)),
                       Rng(derive_seed(seed, 3 * static_cast<std::uint64_t>(t) + 2))};
        const PlanRound round = plan_round(plan, t);
        auto [loss, cache] = forward_round(state.model, task, round,
                                           channel.magnitudes.column(t), config, rngs, options);
        if (!std::isfinite(loss))
            throw std::runtime_error("train: loss diverged at round " + std::to_string(t));
        const Gradients grads = backward_round(cache, state.model);
        apply_update(state.model, grads, learning_rate);

        state.loss_history.push_back(loss);
        if ((t + 1) % 10 == 0 || t + 1 == rounds)
            last_accuracy = test_accuracy(state.model, task);
        state.accuracy_history.push_back(last_accuracy);
        if (options.collect_agg_stats) state.agg_stats.push_back(cache.agg_stats);
        state.round = t + 1;
    }
    return state;
}

// ---------------------------------------------------------------------------
// Empirical estimation of the convergence constants
// ---------------------------------------------------------------------------

namespace {

struct FlatModel {
    std::vector<double> values;
};

FlatModel flatten(const ModelState& state) {
    FlatModel flat;
    auto push = [&](const std::vector<double>& v) {
        flat.values.insert(flat.values.end(), v.begin(), v.end());
    };
    push(state.server_weight.data());
    push(state.server_bias);
    for (const auto& dev : state.devices) {
        push(dev.weight.data());
        push(dev.bias);
        if (dev.has_hidden) {
            push(dev.out_weight.data());
            push(dev.out_bias);
        }
    }
    return flat;
}

void unflatten(const FlatModel& flat, ModelState& state) {
    std::size_t pos = 0;
    auto pull = [&](std::vector<double>& v) {
        std::copy(flat.values.begin() + pos, flat.values.begin() + pos + v.size(), v.begin());
        pos += v.size();
    };
    pull(state.server_weight.data());
    pull(state.server_bias);
    for (auto& dev : state.devices) {
        pull(dev.weight.data());
        pull(dev.bias);
        if (dev.has_hidden) {
            pull(dev.out_weight.data());
            pull(dev.out_bias);
        }
    }
}

/// Loss and flattened gradient of the exact (noise-free, perfectly
/// aggregated) model over the given samples.
std::pair<double, std::vector<double>> monolithic_loss_grad(const ModelState& state,
                                                            const SyntheticTask& task,
                                                            std::span<const int> indices) {
    const int d = state.embedding_dim;
    const int C = state.num_classes;
    const int K = static_cast<int>(state.devices.size());
    Gradients grads;
    grads.server_weight = Matrix(C, d);
    grads.server_bias.assign(C, 0.0);
    for (int k = 0; k < K; ++k) grads.devices.push_back(zero_like(state.devices[k]));

    const double inv_n = 1.0 / static_cast<double>(indices.size());
    std::vector<double> aggregate(d), embedding(d), probs(C), logits(C), signal(d);
    double loss = 0.0;
    for (int idx : indices) {
        const auto row = task.train_features.row(idx);
        std::fill(aggregate.begin(), aggregate.end(), 0.0);
        std::vector<std::vector<double>> hiddens(K);
        for (int k = 0; k < K; ++k) {
            const std::span<const double> block =
                row.subspan(task.feature_offsets[k], task.feature_dims[k]);
            if (state.devices[k].has_hidden) {
                embed(state.devices[k], block, embedding, &hiddens[k]);
            } else {
                embed(state.devices[k], block, embedding);
            }
            for (int j = 0; j < d; ++j) aggregate[j] += embedding[j];
        }
        for (int c = 0; c < C; ++c) {
            double acc = state.server_bias[c];
            const auto wrow = state.server_weight.row(c);
            for (int j = 0; j < d; ++j) acc += wrow[j] * aggregate[j];
            logits[c] = acc;
        }
        softmax_row(logits, probs);
        const int label = task.train_labels[idx];
        loss -= std::log(std::max(probs[label], 1e-300)) * inv_n;

        std::fill(signal.begin(), signal.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const double delta = (probs[c] - (c == label ? 1.0 : 0.0)) * inv_n;
            grads.server_bias[c] += delta;
            auto grow = grads.server_weight.row(c);
            const auto wrow = state.server_weight.row(c);
            for (int j = 0; j < d; ++j) {
                grow[j] += delta * aggregate[j];
                signal[j] += delta * wrow[j];
            }
        }
        for (int k = 0; k < K; ++k) {
            const DeviceModel& dev = state.devices[k];
            DeviceModel& grad = grads.devices[k];
            const std::span<const double> block =
                row.subspan(task.feature_offsets[k], task.feature_dims[k]);
            if (!dev.has_hidden) {
                for (int j = 0; j < d; ++j) {
                    grad.bias[j] += signal[j];
                    auto wrow = grad.weight.row(j);
                    for (int m = 0; m < dev.weight.cols(); ++m) wrow[m] += signal[j] * block[m];
                }
            } else {
                const int hidden_units = dev.weight.rows();
                std::vector<double> dhidden(hidden_units, 0.0);
                for (int j = 0; j < d; ++j) {
                    grad.out_bias[j] += signal[j];
                    auto orow = grad.out_weight.row(j);
                    const auto wrow = dev.out_weight.row(j);
                    for (int u = 0; u < hidden_units; ++u) {
                        orow[u] += signal[j] * hiddens[k][u];
                        dhidden[u] += signal[j] * wrow[u];
                    }
                }
                for (int u = 0; u < hidden_units; ++u) {
                    const double du = dhidden[u] * (1.0 - hiddens[k][u] * hiddens[k][u]);
                    grad.bias[u] += du;
                    auto wrow = grad.weight.row(u);
                    for (int m = 0; m < dev.weight.cols(); ++m) wrow[m] += du * block[m];
                }
            }
        }
    }
    ModelState shell = state;  // reuse flatten() layout for the gradient
    shell.server_weight = grads.server_weight;
    shell.server_bias = grads.server_bias;
    shell.devices = grads.devices;
    return {loss, flatten(shell).values};
}

double frobenius_norm(std::span<const double> values) {
    double acc = 0.0;
    for (double v : values) acc += v * v;
    return std::sqrt(acc);
}

}  // namespace

double dataset_loss(const ModelState& state, const SyntheticTask& task) {
    std::vector<int> indices(task.train_features.rows());
    std::iota(indices.begin(), indices.end(), 0);
    return monolithic_loss_grad(state, task, indices).first;
}

ConvergenceConstants estimate_constants(const SyntheticTask& task, const ModelState& state,
                                        int samples, const NetworkParams& net) {
    if (samples < 100) throw std::invalid_argument("estimate_constants: need at least 100 samples");
    const int n = std::min(samples, task.train_features.rows());
    const int d = state.embedding_dim;
    const int C = state.num_classes;
    const int K = static_cast<int>(state.devices.size());

    ConvergenceConstants constants;
    constants.num_devices_K = K;
    constants.num_rounds_T = net.num_rounds;

    // G1: embedding Jacobian w.r.t. the device parameters, G2: w.r.t. the
    // input block. Exact closed forms for the linear maps.
    double g1_sq = 0.0;
    double g2 = 0.0;
    for (int k = 0; k < K; ++k) {
        const DeviceModel& dev = state.devices[k];
        if (!dev.has_hidden) {
            g2 = std::max(g2, frobenius_norm(dev.weight.data()));
            for (int i = 0; i < n; ++i) {
                const auto row = task.train_features.row(i);
                const auto block = row.subspan(task.feature_offsets[k], task.feature_dims[k]);
                double norm_sq = 1.0;  // bias Jacobian contributes d * 1
                for (double x : block) norm_sq += x * x;
                g1_sq = std::max(g1_sq, d * norm_sq);
            }
        } else {
            for (int i = 0; i < n; ++i) {
                const auto row = task.train_features.row(i);
                const auto block = row.subspan(task.feature_offsets[k], task.feature_dims[k]);
                std::vector<double> hidden;
                std::vector<double> out(d);
                embed(dev, block, out, &hidden);
                const int hidden_units = dev.weight.rows();
                // input Jacobian: out_weight * diag(1 - tanh^2) * weight
                double jac_sq = 0.0;
                for (int j = 0; j < d; ++j) {
                    for (int m = 0; m < dev.weight.cols(); ++m) {
                        double acc = 0.0;
                        for (int u = 0; u < hidden_units; ++u)
                            acc += dev.out_weight(j, u) * (1.0 - hidden[u] * hidden[u]) *
                                   dev.weight(u, m);
                        jac_sq += acc * acc;
                    }
                }
                g2 = std::max(g2, std::sqrt(jac_sq));
                double param_sq = static_cast<double>(d) * (1.0 + 0.0);
                for (int u = 0; u < hidden_units; ++u) {
                    const double dsq = (1.0 - hidden[u] * hidden[u]) * (1.0 - hidden[u] * hidden[u]);
                    double w_out_sq = 0.0;
                    for (int j = 0; j < d; ++j) w_out_sq += dev.out_weight(j, u) * dev.out_weight(j, u);
                    double in_sq = 1.0;
                    for (double x : block) in_sq += x * x;
                    param_sq += dsq * w_out_sq * in_sq;
                }
                for (double hu : hidden) param_sq += d * hu * hu;
                g1_sq = std::max(g1_sq, param_sq);
            }
        }
    }
    constants.embed_param_grad_G1 = std::sqrt(g1_sq);
    constants.embed_input_grad_G2 = g2;

    // Psi: Frobenius norm of the loss Hessian w.r.t. the aggregated
    // embedding, A' (diag(s) - s s') A for the softmax server.
    double psi = 0.0;
    {
        std::vector<double> aggregate(d), embedding(d), logits(C), probs(C);
        Matrix scaled(C, d);
        for (int i = 0; i < n; ++i) {
            const auto row = task.train_features.row(i);
            std::fill(aggregate.begin(), aggregate.end(), 0.0);
            for (int k = 0; k < K; ++k) {
                const auto block = row.subspan(task.feature_offsets[k], task.feature_dims[k]);
                embed(state.devices[k], block, embedding);
                for (int j = 0; j < d; ++j) aggregate[j] += embedding[j];
            }
            for (int c = 0; c < C; ++c) {
                double acc = state.server_bias[c];
                const auto wrow = state.server_weight.row(c);
                for (int j = 0; j < d; ++j) acc += wrow[j] * aggregate[j];
                logits[c] = acc;
            }
            softmax_row(logits, probs);
            // B = (diag(s) - s s') A, then |A' B|_F = |B' A|_F
            for (int c = 0; c < C; ++c) {
                for (int j = 0; j < d; ++j) {
                    double acc = probs[c] * state.server_weight(c, j);
                    for (int c2 = 0; c2 < C; ++c2)
                        acc -= probs[c] * probs[c2] * state.server_weight(c2, j);
                    scaled(c, j) = acc;
                }
            }
            double h_sq = 0.0;
            for (int j1 = 0; j1 < d; ++j1) {
                for (int j2 = 0; j2 < d; ++j2) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c) acc += state.server_weight(c, j1) * scaled(c, j2);
                    h_sq += acc * acc;
                }
            }
            psi = std::max(psi, std::sqrt(h_sq));
        }
    }
    constants.hessian_bound_Psi = psi;

    // sigma^2: worst per-block per-sample gradient variance around the
    // full-sample gradient (clean data, exact aggregation).
    {
        std::vector<int> indices(n);
        std::iota(indices.begin(), indices.end(), 0);
        auto [full_loss, full_grad] = monolithic_loss_grad(state, task, indices);
        (void)full_loss;
        // block boundaries mirror flatten(): server first, then devices
        std::vector<std::size_t> block_sizes;
        block_sizes.push_back(state.server_weight.data().size() + state.server_bias.size());
        for (const auto& dev : state.devices) {
            std::size_t size = dev.weight.data().size() + dev.bias.size();
            if (dev.has_hidden) size += dev.out_weight.data().size() + dev.out_bias.size();
            block_sizes.push_back(size);
        }
        std::vector<double> block_var(block_sizes.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            const int index_array[1] = {indices[i]};
            auto [li, gi] = monolithic_loss_grad(state, task, index_array);
            (void)li;
            std::size_t pos = 0;
            for (std::size_t blk = 0; blk < block_sizes.size(); ++blk) {
                double acc = 0.0;
                for (std::size_t j = 0; j < block_sizes[blk]; ++j) {
                    const double diff = gi[pos + j] - full_grad[pos + j];
                    acc += diff * diff;
                }
                block_var[blk] += acc / n;
                pos += block_sizes[blk];
            }
        }
        constants.grad_variance_sigma2 = *std::max_element(block_var.begin(), block_var.end());
    }

    // L: power iteration on the monolithic-loss Hessian via central
    // finite-difference Hessian-vector products.
    {
        std::vector<int> indices(n);
        std::iota(indices.begin(), indices.end(), 0);
        ModelState work = state;
        const FlatModel base = flatten(state);
        const std::size_t dim = base.values.size();
        Rng rng(derive_seed(task.generator_seed, 0x4c657374));
        std::vector<double> direction(dim);
        for (auto& v : direction) v = rng.gaussian();
        double eigen = 0.0;
        const double base_norm = frobenius_norm(base.values);
        for (int iter = 0; iter < 25; ++iter) {
            const double dir_norm = frobenius_norm(direction);
            for (auto& v : direction) v /= dir_norm;
            const double eps = 1e-5 * (1.0 + base_norm);
            FlatModel shifted = base;
            for (std::size_t i = 0; i < dim; ++i) shifted.values[i] += eps * direction[i];
            unflatten(shifted, work);
            auto [lp, gp] = monolithic_loss_grad(work, task, indices);
            for (std::size_t i = 0; i < dim; ++i) shifted.values[i] = base.values[i] - eps * direction[i];
            unflatten(shifted, work);
            auto [lm, gm] = monolithic_loss_grad(work, task, indices);
            (void)lp;
            (void)lm;
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                direction[i] = (gp[i] - gm[i]) / (2.0 * eps);
                dot += direction[i] * direction[i];
            }
            eigen = std::sqrt(dot);
            if (eigen <= 0.0) break;
        }
        constants.lipschitz_L = std::max(eigen, 1e-12);
    }
    constants.learning_rate_mu = std::min(0.1, 1.0 / constants.lipschitz_L);
    return constants;
}

}  // namespace sim
}  // namespace vfeel
