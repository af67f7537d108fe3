#include "vfeel/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace vfeel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxDualIters = 4000;
constexpr int kMaxBisectIters = 200;
// Returned plans sit this far (relatively) inside every cap and budget, so
// the exact feasibility check cannot flip on summation-order rounding.
constexpr double kBudgetBackoff = 1e-11;

double clip(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

}  // namespace

void SolveOptions::validate() const {
    if (outer_tol <= 0.0 || inner_tol <= 0.0 || dual_tol <= 0.0)
        throw std::invalid_argument("SolveOptions tolerances must be > 0");
    if (max_outer_iters < 1 || max_inner_iters < 1)
        throw std::invalid_argument("SolveOptions iteration caps must be >= 1");
}

std::string SolveTrace::to_json_string() const {
    nlohmann::json j;
    j["objective_per_iteration"] = objective_per_iteration;
    j["subproblem_tags"] = subproblem_tags;
    j["rounded_objective"] = rounded_objective;
    j["dual_state"] = {{"lambda", dual_state.lambda},
                       {"alpha", dual_state.alpha},
                       {"iterations", dual_state.iterations},
                       {"converged", dual_state.converged}};
    j["final_plan"] = nlohmann::json::parse(optimizer::plan_to_json_string(final_plan));
    return j.dump(2);
}

namespace optimizer {

namespace {

double effective_sample_noise(const DeviceParams& device, const NetworkParams& net, double p_sense,
                              double g2) {
    return (device.clutter_variance + net.sensing_noise_variance / p_sense) * g2 * g2;
}

double scaled_c1(const ConvergenceConstants& constants) {
    return convergence::c1(constants) * (constants.num_devices_K + 1);
}

void check_constants_match(const SystemConfig& config, const ConvergenceConstants& constants) {
    if (constants.num_devices_K != config.network.num_devices ||
        constants.num_rounds_T != config.network.num_rounds)
        throw std::invalid_argument("ConvergenceConstants K/T must match the system configuration");
}

/// Objective of the joint problem evaluated from the pieces the alternating
/// solvers carry around. Equals convergence::omega of the assembled plan.
double objective_value(const std::vector<double>& batch, const Matrix& sense_power,
                       const Matrix& tx_power, const std::vector<double>& denoise,
                       const ChannelState& channel, const SystemConfig& config,
                       const ConvergenceConstants& constants) {
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = static_cast<int>(batch.size());
    const double c1k = scaled_c1(constants);
    const double g2 = constants.embed_input_grad_G2;
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        const double eta = denoise[t];
        double bracket = net.channel_noise_variance / eta;
        for (int k = 0; k < K; ++k) {
            const double h = channel.magnitudes(k, t);
            const double p = tx_power(k, t);
            const double coeff = h * std::sqrt(p) / std::sqrt(eta);
            bracket += (coeff - 1.0) * (coeff - 1.0);
            if (h * h * p == 0.0) continue;
            const double p_s = sense_power(k, t);
            if (p_s <= 0.0) return kInf;
            bracket += h * h * p / eta * effective_sample_noise(config.devices[k], net, p_s, g2);
        }
        total += c1k / batch[t] * bracket;
    }
    return total;
}

/// Relaxed-latency upper bound on the batch size for one device.
double latency_batch_bound(const DeviceParams& device, const NetworkParams& net) {
    const double per_sample = device.sense_latency_per_sample_s +
                              device.cycles_per_sample / device.cpu_freq_hz +
                              static_cast<double>(net.embedding_dim) / net.symbols_per_block *
                                  net.slot_duration_s;
    return device.per_round_latency_budget_s / per_sample;
}

}  // namespace

double a1_coefficient(const PlanRound& round, std::span<const double> channel_col,
                      double embed_input_grad_G2, const NetworkParams& net,
                      std::span<const DeviceParams> devices) {
    if (round.denoise <= 0.0) throw std::invalid_argument("a1_coefficient: denoise must be > 0");
    const int K = static_cast<int>(channel_col.size());
    const double eta = round.denoise;
    const double g2_sq = embed_input_grad_G2 * embed_input_grad_G2;
    double value = net.channel_noise_variance / eta;
    for (int k = 0; k < K; ++k) {
        const double h = channel_col[k];
        const double p = round.tx_power[k];
        const double coeff = h * std::sqrt(p) / std::sqrt(eta);
        value += (coeff - 1.0) * (coeff - 1.0);
        value += g2_sq * h * h * p * devices[k].clutter_variance / eta;
    }
    return value;
}

namespace {

// ---------------------------------------------------------------------------
// Sensing energy + batch size subproblem (dual decomposition)
// ---------------------------------------------------------------------------

struct P11Workspace {
    int K = 0;
    int T = 0;
    double c1k = 0.0;
    std::vector<double> a1;            // per round
    Matrix e_coef;                     // K x T, objective term e_coef / e
    std::vector<double> compute_cost;  // kappa C zeta^2 per device
    std::vector<double> tau_sense;
    std::vector<double> fixed_tx;      // total tx energy, fixed in this subproblem
    std::vector<double> budget;
    std::vector<double> e_cap;         // budget / tau: loose per-entry box on e
    std::vector<double> b_lo, b_hi;
    const Matrix* tx_power = nullptr;
    std::optional<double> fixed_batch;
};

struct P11Point {
    std::vector<double> batch;  // length T
    Matrix energy;              // K x T
    double dual_value = 0.0;
    std::vector<double> subgrad;  // per device: energy residual
};

P11Workspace build_p11_workspace(const Matrix& tx_power, const std::vector<double>& denoise,
                                 const ChannelState& channel, const SystemConfig& config,
                                 const ConvergenceConstants& constants,
                                 std::optional<double> fixed_batch) {
    const auto& net = config.network;
    P11Workspace ws;
    ws.K = net.num_devices;
    ws.T = net.num_rounds;
    ws.c1k = scaled_c1(constants);
    ws.fixed_batch = fixed_batch;
    ws.tx_power = &tx_power;
    ws.a1.resize(ws.T);
    ws.e_coef = Matrix(ws.K, ws.T);
    ws.compute_cost.resize(ws.K);
    ws.tau_sense.resize(ws.K);
    ws.fixed_tx.assign(ws.K, 0.0);
    ws.budget.resize(ws.K);
    ws.e_cap.resize(ws.K);
    ws.b_lo.assign(ws.T, 0.0);
    ws.b_hi.assign(ws.T, kInf);

    const double g2 = constants.embed_input_grad_G2;
    for (int k = 0; k < ws.K; ++k) {
        const auto& device = config.devices[k];
        ws.compute_cost[k] = device.capacitance_coeff * device.cycles_per_sample *
                             device.cpu_freq_hz * device.cpu_freq_hz;
        ws.tau_sense[k] = device.sense_latency_per_sample_s;
        ws.budget[k] = device.energy_budget_joules;
        for (int t = 0; t < ws.T; ++t) ws.fixed_tx[k] += tx_power(k, t) * net.slot_duration_s;
        if (ws.budget[k] - ws.fixed_tx[k] <= 0.0)
            throw std::runtime_error(
                "solve_p11_continuous: transmit energy exhausts the budget of device " +
                std::to_string(k));
        ws.e_cap[k] = ws.budget[k] / ws.tau_sense[k];
        const double delta_bound = latency_batch_bound(device, net);
        for (int t = 0; t < ws.T; ++t) {
            ws.b_hi[t] = std::min(ws.b_hi[t], delta_bound);
            ws.b_lo[t] = std::max(ws.b_lo[t],
                                  tx_power(k, t) / (net.embedding_dim * device.max_power_watts));
        }
    }
    for (int t = 0; t < ws.T; ++t) {
        if (denoise[t] <= 0.0)
            throw std::invalid_argument("solve_p11_continuous: denoise must be > 0");
        if (ws.b_lo[t] > ws.b_hi[t] * (1.0 + 1e-12))
            throw std::runtime_error("solve_p11_continuous: infeasible batch box at round " +
                                     std::to_string(t));
        PlanRound round;
        round.tx_power = tx_power.column(t);
        round.sense_power.assign(ws.K, 1.0);  // a1 does not touch sensing power
        round.denoise = denoise[t];
        round.batch = 1.0;
        ws.a1[t] = a1_coefficient(round, channel.magnitudes.column(t), g2, net, config.devices);
        for (int k = 0; k < ws.K; ++k) {
            const double h = channel.magnitudes(k, t);
            ws.e_coef(k, t) = ws.c1k * g2 * g2 * h * h * tx_power(k, t) *
                              net.sensing_noise_variance / denoise[t];
        }
        if (ws.fixed_batch) {
            const double b = *ws.fixed_batch;
            if (b < ws.b_lo[t] - 1e-9 || b > ws.b_hi[t] + 1e-9)
                throw std::runtime_error("solve_p11_continuous: fixed batch size infeasible");
        }
    }
    return ws;
}

/// Lagrangian minimizer and dual value at a given multiplier vector.
P11Point evaluate_dual(const P11Workspace& ws, const std::vector<double>& lambda) {
    P11Point point;
    point.batch.resize(ws.T);
    point.energy = Matrix(ws.K, ws.T);
    point.subgrad.assign(ws.K, 0.0);

    double weighted_compute = 0.0;
    for (int k = 0; k < ws.K; ++k) weighted_compute += lambda[k] * ws.compute_cost[k];

    double value = 0.0;
    for (int t = 0; t < ws.T; ++t) {
        double b = 0.0;
        if (ws.fixed_batch) {
            b = *ws.fixed_batch;
        } else if (weighted_compute <= 0.0) {
            b = ws.b_hi[t];
        } else {
            b = clip(std::sqrt(ws.c1k * ws.a1[t] / weighted_compute), ws.b_lo[t], ws.b_hi[t]);
        }
        b = std::max(b, 1e-12);
        point.batch[t] = b;
        value += ws.c1k * ws.a1[t] / b;
        for (int k = 0; k < ws.K; ++k) {
            const double coef = ws.e_coef(k, t);
            double e = 0.0;
            if (coef > 0.0) {
                const double denom = lambda[k] * ws.tau_sense[k];
                e = denom > 0.0 ? std::min(std::sqrt(coef / denom), ws.e_cap[k]) : ws.e_cap[k];
                value += coef / e;
            }
            point.energy(k, t) = e;
            point.subgrad[k] += e * ws.tau_sense[k] + ws.compute_cost[k] * b;
        }
    }
    for (int k = 0; k < ws.K; ++k) {
        point.subgrad[k] += ws.fixed_tx[k] - ws.budget[k];
        value += lambda[k] * point.subgrad[k];
    }
    point.dual_value = value;
    return point;
}

struct P11Primal {
    std::vector<double> batch;
    Matrix energy;
    double objective = kInf;
    bool feasible = false;
};

double p11_objective(const P11Workspace& ws, const std::vector<double>& batch, const Matrix& energy) {
    double value = 0.0;
    for (int t = 0; t < ws.T; ++t) {
        value += ws.c1k * ws.a1[t] / batch[t];
        for (int k = 0; k < ws.K; ++k) {
            const double coef = ws.e_coef(k, t);
            if (coef <= 0.0) continue;
            const double e = energy(k, t);
            if (e <= 0.0) return kInf;
            value += coef / e;
        }
    }
    return value;
}

/// Projects a dual point's minimizer onto the feasible set: batch sizes are
/// already inside their box, so only per-device energy needs rescaling (and,
/// if the compute load alone overruns, the batch shrinks toward its lower
/// bound).
P11Primal recover_primal(const P11Workspace& ws, const P11Point& point) {
    P11Primal primal;
    primal.batch = point.batch;
    primal.energy = point.energy;

    for (int k = 0; k < ws.K; ++k) {
        double fixed = ws.fixed_tx[k];
        for (int t = 0; t < ws.T; ++t) fixed += ws.compute_cost[k] * primal.batch[t];
        double head = ws.budget[k] - fixed;
        if (head < 0.0) {
            if (ws.fixed_batch) return primal;  // pinned batch cannot shrink
            // shrink every round toward the lower box edge until compute fits
            double lo_cost = ws.fixed_tx[k];
            for (int t = 0; t < ws.T; ++t)
                lo_cost += ws.compute_cost[k] * std::max(ws.b_lo[t], 1e-12);
            if (lo_cost > ws.budget[k] * (1.0 - kBudgetBackoff)) return primal;  // infeasible at the box edge
            double shrink_lo = 0.0, shrink_hi = 1.0;
            for (int iter = 0; iter < 60; ++iter) {
                const double s = 0.5 * (shrink_lo + shrink_hi);
                double cost = ws.fixed_tx[k];
                for (int t = 0; t < ws.T; ++t) {
                    const double lo = std::max(ws.b_lo[t], 1e-12);
                    cost += ws.compute_cost[k] * (lo + s * (point.batch[t] - lo));
                }
                (cost <= ws.budget[k] * (1.0 - kBudgetBackoff) ? shrink_lo : shrink_hi) = s;
            }
            for (int t = 0; t < ws.T; ++t) {
                const double lo = std::max(ws.b_lo[t], 1e-12);
                primal.batch[t] = lo + shrink_lo * (point.batch[t] - lo);
            }
            fixed = ws.fixed_tx[k];
            for (int t = 0; t < ws.T; ++t) fixed += ws.compute_cost[k] * primal.batch[t];
            head = std::max(0.0, ws.budget[k] - fixed);
        }
        double sense_cost = 0.0;
        for (int t = 0; t < ws.T; ++t) sense_cost += primal.energy(k, t) * ws.tau_sense[k];
        const double sense_budget = head * (1.0 - kBudgetBackoff);
        if (sense_cost > sense_budget && sense_cost > 0.0) {
            const double scale = sense_budget / sense_cost;
            for (int t = 0; t < ws.T; ++t) primal.energy(k, t) *= scale;
        }
    }
    primal.objective = p11_objective(ws, primal.batch, primal.energy);
    primal.feasible = std::isfinite(primal.objective);
    return primal;
}

std::vector<double> initial_lambda(const P11Workspace& ws) {
    std::vector<double> lambda(ws.K, 0.0);
    for (int k = 0; k < ws.K; ++k) {
        // multiplier that would exhaust the budget with sensing alone
        double root_sum = 0.0;
        for (int t = 0; t < ws.T; ++t)
            root_sum += std::sqrt(std::max(0.0, ws.e_coef(k, t)) * ws.tau_sense[k]);
        const double from_sensing = root_sum / std::max(ws.budget[k], 1e-300);
        lambda[k] = from_sensing * from_sensing;
        // and a compute-balance fallback so b* starts near the box
        double mean_a1 = 0.0;
        for (double a : ws.a1) mean_a1 += a;
        mean_a1 /= ws.T;
        const double b_mid = 0.5 * (ws.b_lo[0] + std::min(ws.b_hi[0], 4.0 * ws.b_lo[0] + 1e4));
        const double from_compute =
            ws.c1k * mean_a1 / (std::max(b_mid, 1.0) * std::max(b_mid, 1.0) *
                                ws.compute_cost[k] * ws.K);
        lambda[k] = std::max(lambda[k], from_compute * 1e-3);
        if (!(lambda[k] > 0.0) || !std::isfinite(lambda[k])) lambda[k] = 1e-12;
    }
    return lambda;
}

struct DualSolveResult {
    std::vector<double> lambda;
    P11Primal best;
    int iterations = 0;
    bool converged = false;
};

bool kkt_satisfied(const P11Workspace& ws, const std::vector<double>& lambda,
                   const P11Point& point, double tol) {
    for (int k = 0; k < ws.K; ++k) {
        const double scale = std::max(ws.budget[k], 1e-12);
        if (point.subgrad[k] / scale > tol) return false;                  // primal feasibility
        if (std::abs(lambda[k] * point.subgrad[k]) / scale > tol) return false;  // compl. slackness
    }
    return true;
}

DualSolveResult solve_dual_subgradient(const P11Workspace& ws, double tol) {
    DualSolveResult result;
    result.lambda = initial_lambda(ws);
    double best_dual = -kInf;
    for (int iter = 1; iter <= kMaxDualIters; ++iter) {
        result.iterations = iter;
        const P11Point point = evaluate_dual(ws, result.lambda);
        best_dual = std::max(best_dual, point.dual_value);
        const P11Primal primal = recover_primal(ws, point);
        if (primal.feasible && primal.objective < result.best.objective) result.best = primal;

        if (kkt_satisfied(ws, result.lambda, point, tol) &&
            result.best.feasible) {
            result.converged = true;
            break;
        }
        double grad_norm_sq = 0.0;
        for (double g : point.subgrad) grad_norm_sq += g * g;
        if (grad_norm_sq <= 0.0) {
            result.converged = true;
            break;
        }
        // Polyak step toward the best primal value (an upper bound on the
        // dual optimum), with a decaying floor to keep early steps alive.
        double target = result.best.feasible ? result.best.objective : point.dual_value * 2.0 + 1.0;
        double gap = target - point.dual_value;
        const double floor_step = std::abs(target) * 1e-3 / iter + 1e-18;
        if (!(gap > floor_step)) gap = floor_step;
        const double step = gap / grad_norm_sq;
        for (int k = 0; k < ws.K; ++k)
            result.lambda[k] = std::max(0.0, result.lambda[k] + step * point.subgrad[k]);
    }
    return result;
}

DualSolveResult solve_dual_ellipsoid(const P11Workspace& ws, double tol) {
    DualSolveResult result;
    const int n = ws.K;
    std::vector<double> center = initial_lambda(ws);
    double radius = 1.0;
    for (double l : center) radius = std::max(radius, l);
    radius *= 1e6;

    // shape matrix P = radius^2 * I
    Matrix shape(n, n, 0.0);
    for (int i = 0; i < n; ++i) shape(i, i) = radius * radius;

    const int max_iters = std::max(2000, 400 * n * n);
    for (int iter = 1; iter <= max_iters; ++iter) {
        result.iterations = iter;
        std::vector<double> cut(n, 0.0);
        bool feasibility_cut = false;
        for (int i = 0; i < n; ++i) {
            if (center[i] < 0.0) {
                cut[i] = -1.0;  // cut away lambda_i < 0
                feasibility_cut = true;
                break;
            }
        }
        if (!feasibility_cut) {
            const P11Point point = evaluate_dual(ws, center);
            const P11Primal primal = recover_primal(ws, point);
            if (primal.feasible && primal.objective < result.best.objective) result.best = primal;
            if (kkt_satisfied(ws, center, point, tol) && result.best.feasible) {
                result.lambda = center;
                result.converged = true;
                return result;
            }
            for (int i = 0; i < n; ++i) cut[i] = -point.subgrad[i];  // minimizing -W
        }
        // ellipsoid update
        std::vector<double> shape_cut(n, 0.0);
        double quad = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) shape_cut[i] += shape(i, j) * cut[j];
        }
        for (int i = 0; i < n; ++i) quad += cut[i] * shape_cut[i];
        if (quad <= 0.0 || !std::isfinite(quad)) break;
        const double norm = std::sqrt(quad);
        if (!feasibility_cut && norm <= tol * std::abs(result.best.objective))
            break;  // remaining objective range inside the ellipsoid is negligible
        if (n == 1) {
            // degenerate ellipsoid update: halve the interval
            center[0] -= shape_cut[0] / norm / 2.0;
            shape(0, 0) *= 0.25;
            continue;
        }
        const double nd = static_cast<double>(n);
        for (int i = 0; i < n; ++i) center[i] -= shape_cut[i] / norm / (nd + 1.0);
        const double scale = nd * nd / (nd * nd - 1.0);
        const double downdate = 2.0 / (nd + 1.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                shape(i, j) = scale * (shape(i, j) - downdate * shape_cut[i] * shape_cut[j] / quad);
            }
        }
    }
    for (auto& l : center) l = std::max(l, 0.0);
    result.lambda = center;
    if (!result.best.feasible) {
        const P11Point point = evaluate_dual(ws, result.lambda);
        result.best = recover_primal(ws, point);
    }
    return result;
}

}  // namespace

P11Result solve_p11_continuous(const Matrix& tx_power, const std::vector<double>& denoise,
                               const ChannelState& channel, const SystemConfig& config,
                               const ConvergenceConstants& constants, const SolveOptions& options,
                               std::optional<double> fixed_batch) {
    config.validate();
    options.validate();
    check_constants_match(config, constants);
    const P11Workspace ws =
        build_p11_workspace(tx_power, denoise, channel, config, constants, fixed_batch);

    DualSolveResult dual = options.dual_method == DualMethod::ellipsoid
                               ? solve_dual_ellipsoid(ws, options.dual_tol)
                               : solve_dual_subgradient(ws, options.dual_tol);
    if (!dual.best.feasible)
        throw std::runtime_error("solve_p11_continuous: no feasible point recovered");

    P11Result result;
    result.sense_energy = dual.best.energy;
    result.batch = dual.best.batch;
    result.objective = dual.best.objective;
    result.duals.lambda = dual.lambda;
    result.duals.alpha.assign(ws.K, 0.0);
    result.duals.iterations = dual.iterations;
    result.duals.converged = dual.converged;
    return result;
}

RoundedBatchPlan round_batch_and_recover_sensing(const P11Result& continuous,
                                                 const Matrix& tx_power,
                                                 const SystemConfig& config,
                                                 const SolveOptions& options) {
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = static_cast<int>(continuous.batch.size());
    RoundedBatchPlan out;
    out.batch.resize(T);
    out.sense_power = Matrix(K, T);

    auto exact_latency_ok = [&](double b) {
        for (int k = 0; k < K; ++k) {
            if (model::round_latency(b, config.devices[k], net, false) >
                config.devices[k].per_round_latency_budget_s)
                return false;
        }
        return true;
    };

    for (int t = 0; t < T; ++t) {
        double b = options.rounding == Rounding::floor ? std::floor(continuous.batch[t])
                                                       : std::round(continuous.batch[t]);
        b = std::max(1.0, b);
        if (options.rounding == Rounding::nearest_feasible) {
            // honor the per-symbol power floor for the current transmit powers
            double lo = 1.0;
            for (int k = 0; k < K; ++k)
                lo = std::max(lo, std::ceil(tx_power(k, t) /
                                                (net.embedding_dim *
                                                 config.devices[k].max_power_watts) -
                                            1e-9));
            b = std::max(b, lo);
        }
        while (b >= 1.0 && !exact_latency_ok(b)) b -= 1.0;
        if (b < 1.0)
            throw std::runtime_error("round_batch_and_recover_sensing: no feasible batch at round " +
                                     std::to_string(t));
        out.batch[t] = b;
        for (int k = 0; k < K; ++k) {
            const double e = continuous.sense_energy(k, t);
            out.sense_power(k, t) = std::min(e / b, config.devices[k].max_power_watts);
        }
    }
    return out;
}

double optimal_eta(std::span<const double> tx_col, std::span<const double> sense_col,
                   std::span<const double> channel_col, double embed_input_grad_G2,
                   const NetworkParams& net, std::span<const DeviceParams> devices) {
    const int K = static_cast<int>(channel_col.size());
    double numerator = net.channel_noise_variance;
    double denominator = 0.0;
    for (int k = 0; k < K; ++k) {
        const double h = channel_col[k];
        const double p = tx_col[k];
        const double received = h * h * p;
        if (received == 0.0) continue;
        const double p_s = sense_col[k];
        if (p_s <= 0.0)
            throw std::domain_error("optimal_eta: zero sensing power with nonzero transmit power");
        const double noise = effective_sample_noise(devices[k], net, p_s, embed_input_grad_G2);
        numerator += received * (noise + 1.0);
        denominator += h * std::sqrt(p);
    }
    if (denominator <= 0.0)
        throw std::domain_error("optimal_eta: all transmit powers are zero");
    const double root = numerator / denominator;
    return root * root;
}

TxPowerResult optimal_tx_power(const std::vector<double>& denoise, const std::vector<double>& batch,
                               const Matrix& sense_power, const ChannelState& channel,
                               const SystemConfig& config, const ConvergenceConstants& constants,
                               const SolveOptions& options) {
    config.validate();
    options.validate();
    check_constants_match(config, constants);
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = static_cast<int>(batch.size());
    const double c1k = scaled_c1(constants);
    const double g2 = constants.embed_input_grad_G2;

    TxPowerResult result;
    result.tx_power = Matrix(K, T);
    result.alpha.assign(K, 0.0);

    for (int k = 0; k < K; ++k) {
        const auto& device = config.devices[k];
        double residual = device.energy_budget_joules;
        for (int t = 0; t < T; ++t) {
            residual -= model::sensing_energy(sense_power(k, t), batch[t], device) +
                        model::compute_energy(batch[t], device);
        }
        if (residual <= 0.0)
            throw std::runtime_error(
                "optimal_tx_power: sensing and compute exhaust the budget of device " +
                std::to_string(k));

        auto power_at = [&](double alpha, int t) {
            const double h = channel.magnitudes(k, t);
            if (h <= 0.0) return 0.0;
            const double eta = denoise[t];
            const double p_s = sense_power(k, t);
            if (p_s <= 0.0) return 0.0;  // infinitely noisy samples: do not transmit
            const double noise = effective_sample_noise(device, net, p_s, g2);
            const double cap =
                net.embedding_dim * batch[t] * device.max_power_watts * (1.0 - kBudgetBackoff);
            const double amplitude = c1k * h * std::sqrt(eta) /
                                     (c1k * h * h * (noise + 1.0) +
                                      alpha * batch[t] * eta * net.slot_duration_s);
            return std::min(amplitude * amplitude, cap);
        };
        auto energy_at = [&](double alpha) {
            double used = 0.0;
            for (int t = 0; t < T; ++t) used += power_at(alpha, t) * net.slot_duration_s;
            return used;
        };

        const double target = residual * (1.0 - kBudgetBackoff);
        double alpha = 0.0;
        if (energy_at(0.0) > target) {
            double hi = 1.0;
            int doublings = 0;
            while (energy_at(hi) > target) {
                hi *= 2.0;
                if (++doublings > 300)
                    throw std::runtime_error("optimal_tx_power: bisection bracket failed");
            }
            double lo = hi / 2.0;
            if (doublings == 1) lo = 0.0;
            for (int iter = 0; iter < kMaxBisectIters; ++iter) {
                const double mid = 0.5 * (lo + hi);
                const double used = energy_at(mid);
                if (used > target) {
                    lo = mid;
                } else {
                    hi = mid;
                    if (target - used <= options.dual_tol * target) break;
                }
            }
            alpha = hi;  // feasible side of the bracket
        }
        result.alpha[k] = alpha;
        for (int t = 0; t < T; ++t) result.tx_power(k, t) = power_at(alpha, t);
    }
    return result;
}

SolveTrace algorithm1(const std::vector<double>& batch, const Matrix& sense_power,
                      const Matrix& initial_tx_power, std::vector<double> denoise,
                      const ChannelState& channel, const SystemConfig& config,
                      const ConvergenceConstants& constants, const SolveOptions& options) {
    options.validate();
    check_constants_match(config, constants);
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = static_cast<int>(batch.size());

    SolveTrace trace;
    Matrix tx = initial_tx_power;
    std::vector<double> alpha(K, 0.0);
    double objective = objective_value(batch, sense_power, tx, denoise, channel, config, constants);
    trace.objective_per_iteration.push_back(objective);
    trace.subproblem_tags.push_back("init");

    for (int iter = 1; iter <= options.max_inner_iters; ++iter) {
        // denoising step: exact per-round minimizer given the powers
        std::vector<double> denoise_next = denoise;
        for (int t = 0; t < T; ++t) {
            const auto h_col = channel.magnitudes.column(t);
            double received = 0.0;
            for (int k = 0; k < K; ++k) received += h_col[k] * h_col[k] * tx(k, t);
            if (received <= 0.0) continue;  // dead round, keep the previous factor
            denoise_next[t] =
                optimal_eta(tx.column(t), sense_power.column(t), h_col,
                            constants.embed_input_grad_G2, net, config.devices);
        }
        double after_eta =
            objective_value(batch, sense_power, tx, denoise_next, channel, config, constants);
        if (after_eta <= objective) {
            denoise = denoise_next;
        } else {
            after_eta = objective;  // numerical guard; keep previous factors
        }

        // power step: exact given the denoising factors (up to bisection slop)
        TxPowerResult powers =
            optimal_tx_power(denoise, batch, sense_power, channel, config, constants, options);
        const double after_power = objective_value(batch, sense_power, powers.tx_power, denoise,
                                                   channel, config, constants);
        double next = after_eta;
        if (after_power <= after_eta) {
            tx = powers.tx_power;
            alpha = powers.alpha;
            next = after_power;
        }

        trace.objective_per_iteration.push_back(next);
        trace.subproblem_tags.push_back("alt");
        const double change = objective - next;
        objective = next;
        if (change <= options.inner_tol * std::abs(objective)) break;
    }

    trace.final_plan.tx_power = tx;
    trace.final_plan.sense_power = sense_power;
    trace.final_plan.batch_size = batch;
    trace.final_plan.denoise = denoise;
    bool integral = true;
    for (double b : batch) integral = integral && b == std::floor(b) && b >= 1.0;
    trace.final_plan.relaxed = !integral;
    trace.dual_state.alpha = alpha;
    trace.dual_state.lambda.assign(K, 0.0);
    trace.dual_state.iterations = static_cast<int>(trace.objective_per_iteration.size()) - 1;
    trace.dual_state.converged = true;
    trace.rounded_objective = objective;
    return trace;
}

namespace {

/// Starting point for the alternating solve: channel-inversion-flavoured
/// transmit powers at a denoising level every device can reach under its
/// power cap, spending about half the energy budget on transmission.
struct InitialPoint {
    Matrix tx_power;
    std::vector<double> denoise;
    double batch_guess = 1.0;
};

InitialPoint default_initial_point(const SystemConfig& config, const ChannelState& channel,
                                   std::optional<double> forced_batch = std::nullopt) {
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = net.num_rounds;
    InitialPoint init;
    init.tx_power = Matrix(K, T);
    init.denoise.assign(T, 1.0);

    double b_guess = kInf;
    for (int k = 0; k < K; ++k) {
        const auto& device = config.devices[k];
        const double compute_cost = device.capacitance_coeff * device.cycles_per_sample *
                                    device.cpu_freq_hz * device.cpu_freq_hz;
        b_guess = std::min(b_guess, 0.5 * device.energy_budget_joules / (T * compute_cost));
        b_guess = std::min(b_guess, latency_batch_bound(device, net));
    }
    init.batch_guess = std::max(1.0, b_guess);
    if (forced_batch) init.batch_guess = *forced_batch;

    // denoising level well inside the weakest device's energy-rate cap (and
    // independent of the batch guess), so every starting point is aligned
    // with headroom to spare
    constexpr double kDenoiseMargin = 0.15;
    for (int t = 0; t < T; ++t) {
        double eta = kInf;
        for (int k = 0; k < K; ++k) {
            const auto& device = config.devices[k];
            const double h = channel.magnitudes(k, t);
            if (h <= 0.0) continue;
            const double energy_cap =
                0.5 * device.energy_budget_joules / (T * net.slot_duration_s);
            const double power_cap =
                net.embedding_dim * std::min(init.batch_guess, 64.0) * device.max_power_watts;
            eta = std::min(eta, h * h * std::min(power_cap, energy_cap) * kDenoiseMargin);
        }
        if (!std::isfinite(eta) || eta <= 0.0) eta = 1.0;
        init.denoise[t] = eta;
        for (int k = 0; k < K; ++k) {
            const double h = channel.magnitudes(k, t);
            init.tx_power(k, t) = h > 0.0 ? eta / (h * h) : 0.0;
        }
    }
    return init;
}

void require_feasible_start(const SystemConfig& config) {
    const auto& net = config.network;
    for (int k = 0; k < net.num_devices; ++k) {
        const auto& device = config.devices[k];
        if (model::round_latency(1.0, device, net, false) > device.per_round_latency_budget_s)
            throw std::runtime_error("algorithm2: no feasible starting point (latency at b=1)");
        if (model::compute_energy(1.0, device) * net.num_rounds > device.energy_budget_joules)
            throw std::runtime_error("algorithm2: no feasible starting point (energy at b=1)");
    }
}

}  // namespace

namespace {

/// One full alternating solve from a given starting point. The trace is
/// monotone on the continuous relaxation; the final plan is integral and
/// passes the exact feasibility check.
SolveTrace run_alternation(const SystemConfig& config, const ChannelState& channel,
                           const ConvergenceConstants& constants, const SolveOptions& options,
                           Matrix tx, std::vector<double> denoise, std::vector<double> batch,
                           Matrix sense_energy, Matrix sense_power) {
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = net.num_rounds;

    SolveTrace trace;
    DualState last_duals;
    double objective = kInf;
    for (int outer = 1; outer <= options.max_outer_iters; ++outer) {
        P11Result p11 =
            solve_p11_continuous(tx, denoise, channel, config, constants, options);
        Matrix sense_power_cand(K, T);
        for (int k = 0; k < K; ++k) {
            for (int t = 0; t < T; ++t) {
                sense_power_cand(k, t) = std::min(p11.sense_energy(k, t) / p11.batch[t],
                                                  config.devices[k].max_power_watts);
            }
        }
        const double cand =
            objective_value(p11.batch, sense_power_cand, tx, denoise, channel, config, constants);
        if (cand <= objective) {
            batch = p11.batch;
            sense_energy = p11.sense_energy;
            sense_power = sense_power_cand;
            last_duals.lambda = p11.duals.lambda;
            last_duals.iterations += p11.duals.iterations;
            last_duals.converged = p11.duals.converged;
            objective = cand;
        }
        trace.objective_per_iteration.push_back(objective);
        trace.subproblem_tags.push_back("p11");

        SolveTrace inner = algorithm1(batch, sense_power, tx, denoise, channel, config, constants,
                                      options);
        const double after_inner = inner.objective_per_iteration.back();
        if (after_inner <= objective) {
            tx = inner.final_plan.tx_power;
            denoise = inner.final_plan.denoise;
            last_duals.alpha = inner.dual_state.alpha;
            objective = after_inner;
        }
        trace.objective_per_iteration.push_back(objective);
        trace.subproblem_tags.push_back("p12");

        const int n = static_cast<int>(trace.objective_per_iteration.size());
        if (n >= 4) {
            const double prev = trace.objective_per_iteration[n - 3];
            if (prev - objective <= options.outer_tol * std::abs(prev)) break;
        }
    }

    // integer reconstruction: round down, rebuild sensing powers, polish the
    // transmit/denoise pair once more on the rounded plan
    P11Result cont;
    cont.sense_energy = sense_energy;
    cont.batch = batch;
    RoundedBatchPlan rounded = round_batch_and_recover_sensing(cont, tx, config, options);
    // flooring the batch tightens the per-symbol power cap; clamp before polishing
    for (int k = 0; k < K; ++k) {
        for (int t = 0; t < T; ++t) {
            const double cap = net.embedding_dim * rounded.batch[t] *
                               config.devices[k].max_power_watts * (1.0 - kBudgetBackoff);
            tx(k, t) = std::min(tx(k, t), cap);
        }
    }
    SolveTrace polish = algorithm1(rounded.batch, rounded.sense_power, tx, denoise, channel, config,
                                   constants, options);

    trace.final_plan = polish.final_plan;
    trace.final_plan.relaxed = false;
    trace.dual_state = last_duals;
    trace.dual_state.alpha = polish.dual_state.alpha;
    trace.rounded_objective = polish.objective_per_iteration.back();

    const auto report = model::check_feasibility(trace.final_plan, config, false);
    if (!report.feasible()) {
        std::string detail;
        for (const auto& v : report.violations) {
            detail += " [" + v.constraint + " device=" + std::to_string(v.device) +
                      " round=" + std::to_string(v.round) + " slack=" + std::to_string(v.slack) +
                      "]";
            if (detail.size() > 300) break;
        }
        throw std::runtime_error("algorithm2: rounded plan failed the exact feasibility check:" +
                                 detail);
    }
    return trace;
}

}  // namespace

SolveTrace algorithm2(const SystemConfig& config, const ChannelState& channel,
                      const ConvergenceConstants& constants, const SolveOptions& options,
                      const std::optional<AllocationPlan>& initial_plan) {
    config.validate();
    options.validate();
    check_constants_match(config, constants);
    require_feasible_start(config);
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = net.num_rounds;

    if (initial_plan) {
        initial_plan->validate(net);
        Matrix sense_energy(K, T);
        for (int k = 0; k < K; ++k)
            for (int t = 0; t < T; ++t)
                sense_energy(k, t) = initial_plan->sense_power(k, t) * initial_plan->batch_size[t];
        SolveTrace trace = run_alternation(config, channel, constants, options,
                                           initial_plan->tx_power, initial_plan->denoise,
                                           initial_plan->batch_size, sense_energy,
                                           initial_plan->sense_power);
        // never return a worse point than an integral, feasible warm start
        // (rounding after the alternation can cost more than it gained)
        bool integral = !initial_plan->relaxed;
        if (integral) {
            const double initial_objective =
                objective_value(initial_plan->batch_size, initial_plan->sense_power,
                                initial_plan->tx_power, initial_plan->denoise, channel, config,
                                constants);
            if (initial_objective < trace.rounded_objective) {
                SolveTrace kept;
                kept.objective_per_iteration = {initial_objective};
                kept.subproblem_tags = {"warm_start"};
                kept.final_plan = *initial_plan;
                kept.rounded_objective = initial_objective;
                kept.dual_state.lambda.assign(K, 0.0);
                kept.dual_state.alpha.assign(K, 0.0);
                kept.dual_state.converged = true;
                return kept;
            }
        }
        return trace;
    }

    // The per-symbol power cap ties the batch lower bound to the starting
    // transmit powers, so each start largely commits to its batch scale.
    // Several scales are tried and the best rounded objective kept.
    const double full_guess = default_initial_point(config, channel).batch_guess;
    const double scales[] = {1.0, 0.7, 0.5, 0.35, 0.2};
    std::optional<SolveTrace> best;
    std::exception_ptr last_error;
    for (double scale : scales) {
        const double guess = std::max(1.0, std::floor(full_guess * scale));
        InitialPoint init = default_initial_point(config, channel, guess);
        try {
            SolveTrace trace = run_alternation(config, channel, constants, options, init.tx_power,
                                               init.denoise, std::vector<double>(T, guess),
                                               Matrix(K, T, 0.0), Matrix(K, T, 0.0));
            if (!best || trace.rounded_objective < best->rounded_objective)
                best = std::move(trace);
        } catch (...) {
            last_error = std::current_exception();
        }
        if (guess <= 1.0) break;
    }
    if (!best) {
        if (last_error) std::rethrow_exception(last_error);
        throw std::runtime_error("algorithm2: no feasible starting point");
    }
    return *best;
}

namespace {

Matrix fixed_power_matrix(const SystemConfig& config, const std::vector<double>& batch,
                          bool per_symbol_units) {
    const auto& net = config.network;
    Matrix tx(net.num_devices, net.num_rounds);
    for (int k = 0; k < net.num_devices; ++k) {
        for (int t = 0; t < net.num_rounds; ++t) {
            tx(k, t) = per_symbol_units
                           ? 0.5 * net.embedding_dim * batch[t] * config.devices[k].max_power_watts
                           : 0.5 * config.devices[k].max_power_watts;
        }
    }
    return tx;
}

Matrix inversion_power_matrix(const SystemConfig& config, const ChannelState& channel,
                              const std::vector<double>& batch, double eta) {
    const auto& net = config.network;
    Matrix tx(net.num_devices, net.num_rounds);
    for (int k = 0; k < net.num_devices; ++k) {
        const auto& device = config.devices[k];
        const double energy_cap =
            0.5 * device.energy_budget_joules / (net.num_rounds * net.slot_duration_s);
        for (int t = 0; t < net.num_rounds; ++t) {
            const double h = channel.magnitudes(k, t);
            if (h <= 0.0) {
                tx(k, t) = 0.0;
                continue;
            }
            const double cap =
                net.embedding_dim * batch[t] * device.max_power_watts * (1.0 - kBudgetBackoff);
            tx(k, t) = std::min({eta / (h * h), cap, energy_cap});
        }
    }
    return tx;
}

/// Shrinks the rounded batch until the exact energy/latency checks pass for
/// baselines whose transmit powers are recomputed from the batch itself.
void enforce_exact_feasibility(std::vector<double>& batch, Matrix& tx, Matrix& sense_power,
                               const Matrix& sense_energy, const SystemConfig& config,
                               const std::function<Matrix(const std::vector<double>&)>& power_rule) {
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = net.num_rounds;
    for (int guard = 0; guard < 4096; ++guard) {
        tx = power_rule(batch);
        for (int k = 0; k < K; ++k)
            for (int t = 0; t < T; ++t)
                sense_power(k, t) =
                    std::min(sense_energy(k, t) / batch[t], config.devices[k].max_power_watts);
        int worst_device = -1;
        double worst_overrun = 0.0;
        for (int k = 0; k < K; ++k) {
            const auto& device = config.devices[k];
            double energy = 0.0;
            for (int t = 0; t < T; ++t) {
                energy += model::sensing_energy(sense_power(k, t), batch[t], device) +
                          model::compute_energy(batch[t], device) +
                          model::tx_energy(tx(k, t), net);
            }
            const double overrun = energy - device.energy_budget_joules;
            if (overrun > worst_overrun) {
                worst_overrun = overrun;
                worst_device = k;
            }
        }
        if (worst_device < 0) return;
        // drop the largest batch by one sample and retry
        int t_max = 0;
        for (int t = 1; t < T; ++t)
            if (batch[t] > batch[t_max]) t_max = t;
        if (batch[t_max] <= 1.0)
            throw std::runtime_error("baseline_plan: cannot satisfy the energy budget");
        batch[t_max] -= 1.0;
    }
    throw std::runtime_error("baseline_plan: energy adjustment did not converge");
}

}  // namespace

std::string baseline_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::fixed_tx_power: return "fixed_tx_power";
        case BaselineKind::fixed_batch: return "fixed_batch";
        case BaselineKind::fixed_eta: return "fixed_eta";
        case BaselineKind::channel_inversion: return "channel_inversion";
    }
    return "unknown";
}

AllocationPlan baseline_plan(BaselineKind kind, const SystemConfig& config,
                             const ChannelState& channel, const ConvergenceConstants& constants,
                             const SolveOptions& options) {
    config.validate();
    options.validate();
    check_constants_match(config, constants);
    const auto& net = config.network;
    const int K = net.num_devices;
    const int T = net.num_rounds;

    if (kind == BaselineKind::fixed_batch) {
        const double pinned = 400.0;
        for (int k = 0; k < K; ++k) {
            if (model::round_latency(pinned, config.devices[k], net, false) >
                config.devices[k].per_round_latency_budget_s)
                throw std::runtime_error("baseline_plan: fixed batch size violates the latency budget");
        }
        std::vector<double> batch(T, pinned);
        InitialPoint init = default_initial_point(config, channel, pinned);
        Matrix tx = init.tx_power;
        std::vector<double> denoise = init.denoise;
        Matrix sense_power(K, T, 0.0);
        double objective = kInf;
        for (int outer = 0; outer < options.max_outer_iters; ++outer) {
            P11Result p11 = solve_p11_continuous(tx, denoise, channel, config, constants, options,
                                                 pinned);
            for (int k = 0; k < K; ++k)
                for (int t = 0; t < T; ++t)
                    sense_power(k, t) = std::min(p11.sense_energy(k, t) / pinned,
                                                 config.devices[k].max_power_watts);
            SolveTrace inner = algorithm1(batch, sense_power, tx, denoise, channel, config,
                                          constants, options);
            tx = inner.final_plan.tx_power;
            denoise = inner.final_plan.denoise;
            const double next = inner.objective_per_iteration.back();
            if (std::isfinite(objective) &&
                objective - next <= options.outer_tol * std::abs(objective)) {
                objective = next;
                break;
            }
            objective = next;
        }
        AllocationPlan plan;
        plan.tx_power = tx;
        plan.sense_power = sense_power;
        plan.batch_size = batch;
        plan.denoise = denoise;
        plan.relaxed = false;
        const auto report = model::check_feasibility(plan, config, false);
        if (!report.feasible())
            throw std::runtime_error("baseline_plan: fixed-batch plan infeasible");
        return plan;
    }

    if (kind == BaselineKind::fixed_eta) {
        const double pinned_eta = 0.5;
        InitialPoint init = default_initial_point(config, channel);
        std::vector<double> denoise(T, pinned_eta);
        Matrix tx(K, T);
        for (int k = 0; k < K; ++k) {
            const auto& device = config.devices[k];
            const double energy_cap =
                0.5 * device.energy_budget_joules / (T * net.slot_duration_s);
            for (int t = 0; t < T; ++t) {
                const double h = channel.magnitudes(k, t);
                const double cap = net.embedding_dim * init.batch_guess * device.max_power_watts;
                tx(k, t) = h > 0.0 ? std::min({pinned_eta / (h * h), cap, energy_cap}) : 0.0;
            }
        }
        std::vector<double> batch;
        Matrix sense_energy(K, T, 0.0);
        Matrix sense_power(K, T, 0.0);
        double objective = kInf;
        P11Result p11;
        for (int outer = 0; outer < options.max_outer_iters; ++outer) {
            p11 = solve_p11_continuous(tx, denoise, channel, config, constants, options);
            batch = p11.batch;
            sense_energy = p11.sense_energy;
            for (int k = 0; k < K; ++k)
                for (int t = 0; t < T; ++t)
                    sense_power(k, t) = std::min(sense_energy(k, t) / batch[t],
                                                 config.devices[k].max_power_watts);
            TxPowerResult powers = optimal_tx_power(denoise, batch, sense_power, channel, config,
                                                    constants, options);
            tx = powers.tx_power;
            const double next =
                objective_value(batch, sense_power, tx, denoise, channel, config, constants);
            if (std::isfinite(objective) &&
                objective - next <= options.outer_tol * std::abs(objective)) {
                objective = next;
                break;
            }
            objective = next;
        }
        P11Result cont;
        cont.sense_energy = sense_energy;
        cont.batch = batch;
        RoundedBatchPlan rounded = round_batch_and_recover_sensing(cont, tx, config, options);
        TxPowerResult powers = optimal_tx_power(denoise, rounded.batch, rounded.sense_power,
                                                channel, config, constants, options);
        AllocationPlan plan;
        plan.tx_power = powers.tx_power;
        plan.sense_power = rounded.sense_power;
        plan.batch_size = rounded.batch;
        plan.denoise = denoise;
        plan.relaxed = false;
        const auto report = model::check_feasibility(plan, config, false);
        if (!report.feasible())
            throw std::runtime_error("baseline_plan: fixed-denoise plan infeasible");
        return plan;
    }

    // fixed_tx_power and channel_inversion pin the transmit powers to a rule
    // of the batch size and optimize the rest.
    const bool inversion = kind == BaselineKind::channel_inversion;
    const double inversion_eta = 1.0;
    auto power_rule = [&](const std::vector<double>& b) {
        return inversion ? inversion_power_matrix(config, channel, b, inversion_eta)
                         : fixed_power_matrix(config, b, options.fixed_power_per_symbol_units);
    };

    InitialPoint init = default_initial_point(config, channel);
    std::vector<double> batch(T, init.batch_guess);
    Matrix tx = power_rule(batch);
    std::vector<double> denoise(T, inversion ? inversion_eta : 1.0);
    if (!inversion) {
        for (int t = 0; t < T; ++t) {
            std::vector<double> ones(K, 1.0);
            denoise[t] = optimal_eta(tx.column(t), ones, channel.magnitudes.column(t),
                                     constants.embed_input_grad_G2, net, config.devices);
        }
    }
    Matrix sense_energy(K, T, 0.0);
    Matrix sense_power(K, T, 0.0);
    double objective = kInf;
    for (int outer = 0; outer < options.max_outer_iters; ++outer) {
        P11Result p11 = solve_p11_continuous(tx, denoise, channel, config, constants, options);
        batch = p11.batch;
        sense_energy = p11.sense_energy;
        tx = power_rule(batch);
        for (int k = 0; k < K; ++k)
            for (int t = 0; t < T; ++t)
                sense_power(k, t) =
                    std::min(sense_energy(k, t) / batch[t], config.devices[k].max_power_watts);
        if (!inversion) {
            for (int t = 0; t < T; ++t) {
                denoise[t] = optimal_eta(tx.column(t), sense_power.column(t),
                                         channel.magnitudes.column(t),
                                         constants.embed_input_grad_G2, net, config.devices);
            }
        }
        const double next =
            objective_value(batch, sense_power, tx, denoise, channel, config, constants);
        if (std::isfinite(objective) &&
            std::abs(objective - next) <= options.outer_tol * std::abs(objective)) {
            objective = next;
            break;
        }
        objective = next;
    }
    P11Result cont;
    cont.sense_energy = sense_energy;
    cont.batch = batch;
    RoundedBatchPlan rounded = round_batch_and_recover_sensing(cont, tx, config, options);
    std::vector<double> batch_int = rounded.batch;
    Matrix sense_power_int = rounded.sense_power;
    Matrix tx_int;
    enforce_exact_feasibility(batch_int, tx_int, sense_power_int, sense_energy, config, power_rule);
    if (!inversion) {
        for (int t = 0; t < T; ++t) {
            denoise[t] = optimal_eta(tx_int.column(t), sense_power_int.column(t),
                                     channel.magnitudes.column(t), constants.embed_input_grad_G2,
                                     net, config.devices);
        }
    }
    AllocationPlan plan;
    plan.tx_power = tx_int;
    plan.sense_power = sense_power_int;
    plan.batch_size = batch_int;
    plan.denoise = denoise;
    plan.relaxed = false;
    const auto report = model::check_feasibility(plan, config, false);
    if (!report.feasible())
        throw std::runtime_error("baseline_plan: " + baseline_name(kind) + " plan infeasible");
    return plan;
}

std::string plan_to_json_string(const AllocationPlan& plan) {
    nlohmann::json j;
    auto matrix_to_json = [](const Matrix& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (int k = 0; k < m.rows(); ++k) {
            const auto row = m.row(k);
            rows.push_back(std::vector<double>(row.begin(), row.end()));
        }
        return rows;
    };
    j["tx_power"] = matrix_to_json(plan.tx_power);
    j["sense_power"] = matrix_to_json(plan.sense_power);
    if (plan.relaxed) {
        j["batch_size"] = plan.batch_size;
    } else {
        std::vector<std::int64_t> batch;
        batch.reserve(plan.batch_size.size());
        for (double b : plan.batch_size) batch.push_back(static_cast<std::int64_t>(b));
        j["batch_size"] = batch;
    }
    j["denoise"] = plan.denoise;
    j["relaxed"] = plan.relaxed;
    return j.dump(2);
}

AllocationPlan plan_from_json_string(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    AllocationPlan plan;
    auto matrix_from_json = [](const nlohmann::json& rows) {
        const int K = static_cast<int>(rows.size());
        const int T = K > 0 ? static_cast<int>(rows[0].size()) : 0;
        Matrix m(K, T);
        for (int k = 0; k < K; ++k)
            for (int t = 0; t < T; ++t) m(k, t) = rows[k][t].get<double>();
        return m;
    };
    plan.tx_power = matrix_from_json(j.at("tx_power"));
    plan.sense_power = matrix_from_json(j.at("sense_power"));
    plan.batch_size = j.at("batch_size").get<std::vector<double>>();
    plan.denoise = j.at("denoise").get<std::vector<double>>();
    plan.relaxed = j.at("relaxed").get<bool>();
    return plan;
}

}  // namespace optimizer
}  // namespace vfeel
