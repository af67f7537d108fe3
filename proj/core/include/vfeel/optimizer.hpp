/**
 * Joint batch-size / sensing-power / transmit-power / denoising-factor
 * allocator. The non-convex problem is split into two subproblems solved
 * alternately:
 *
 *  - sensing energy + batch size (convex after the e = p_s * b substitution
 *    and continuous relaxation of b), solved in closed form per dual point
 *    with the energy duals found by projected subgradient or the ellipsoid
 *    method;
 *  - denoising factor + transmit power, solved by alternating two closed
 *    forms (a per-round scalar quadratic for eta, a regularized channel
 *    inversion with per-device energy duals located by bisection).
 *
 * The outer alternation is monotone on the continuous relaxation; the final
 * plan is produced by rounding the batch sizes down, reconstructing sensing
 * powers, and one last transmit/denoise polish.
 */
#ifndef VFEEL_OPTIMIZER_HPP
#define VFEEL_OPTIMIZER_HPP

#include <optional>
#include <string>
#include <vector>

#include "vfeel/convergence.hpp"
#include "vfeel/model.hpp"

namespace vfeel {

enum class DualMethod { subgradient, ellipsoid };
enum class Rounding { floor, nearest_feasible };

struct SolveOptions {
    double outer_tol = 1e-5;   // relative objective change across outer iterations
    double inner_tol = 1e-7;   // relative objective change within the power/denoise loop
    double dual_tol = 1e-9;    // KKT / energy residual tolerance (relative)
    int max_outer_iters = 30;
    int max_inner_iters = 100;
    DualMethod dual_method = DualMethod::subgradient;
    Rounding rounding = Rounding::floor;
    // The fixed-power baseline is stated against the per-symbol power cap;
    // false reads the fixed value as raw watts instead.
    bool fixed_power_per_symbol_units = true;

    void validate() const;
};

struct DualState {
    std::vector<double> lambda;  // energy duals of the sensing/batch subproblem
    std::vector<double> alpha;   // energy duals of the transmit-power subproblem
    int iterations = 0;
    bool converged = false;
};

struct SolveTrace {
    std::vector<double> objective_per_iteration;  // non-increasing (continuous relaxation)
    std::vector<std::string> subproblem_tags;     // parallel to the objectives
    AllocationPlan final_plan;
    DualState dual_state;
    double rounded_objective = 0.0;  // objective of the final integer plan

    std::string to_json_string() const;
};

namespace optimizer {

/// Round coefficient gathering the misalignment, clutter, and channel-noise
/// parts of the aggregation MSE (everything except the sensing-power term).
double a1_coefficient(const PlanRound& round, std::span<const double> channel_col,
                      double embed_input_grad_G2, const NetworkParams& net,
                      std::span<const DeviceParams> devices);

struct P11Result {
    Matrix sense_energy;        // K x T, e = p_s * b
    std::vector<double> batch;  // length T, continuous
    DualState duals;
    double objective = 0.0;     // continuous objective at the returned point
};

/**
 * Solves the continuous sensing-energy / batch-size subproblem for fixed
 * transmit powers and denoising factors. The returned primal point is
 * feasible; duals satisfy the KKT residual tolerance when `converged`.
 * If `fixed_batch` is set the batch sizes are pinned and only the sensing
 * energies are optimized.
 */
P11Result solve_p11_continuous(const Matrix& tx_power, const std::vector<double>& denoise,
                               const ChannelState& channel, const SystemConfig& config,
                               const ConvergenceConstants& constants, const SolveOptions& options,
                               std::optional<double> fixed_batch = std::nullopt);

struct RoundedBatchPlan {
    std::vector<double> batch;  // integral values >= 1
    Matrix sense_power;         // K x T, min(e/b, P_max)
};

/// Rounds the continuous batch sizes (floor by default, decrementing while
/// the exact ceiling-form latency is violated) and reconstructs per-round
/// sensing powers from the sensing energies.
RoundedBatchPlan round_batch_and_recover_sensing(const P11Result& continuous,
                                                 const Matrix& tx_power,
                                                 const SystemConfig& config,
                                                 const SolveOptions& options);

/// Closed-form denoising factor minimizing the per-round aggregation MSE for
/// fixed transmit and sensing powers. Throws if no device transmits.
double optimal_eta(std::span<const double> tx_col, std::span<const double> sense_col,
                   std::span<const double> channel_col, double embed_input_grad_G2,
                   const NetworkParams& net, std::span<const DeviceParams> devices);

struct TxPowerResult {
    Matrix tx_power;            // K x T
    std::vector<double> alpha;  // length K, energy duals
};

/**
 * Optimal transmit powers for fixed denoising factors, batch sizes, and
 * sensing powers: regularized channel inversion, with each device's energy
 * dual found by bisection on its total transmit energy. alpha_k = 0 when
 * the unconstrained powers fit the residual energy budget; otherwise the
 * budget is tight to within dual_tol (relative).
 */
TxPowerResult optimal_tx_power(const std::vector<double>& denoise,
                               const std::vector<double>& batch, const Matrix& sense_power,
                               const ChannelState& channel, const SystemConfig& config,
                               const ConvergenceConstants& constants, const SolveOptions& options);

/// Alternates optimal_eta and optimal_tx_power until the objective settles.
/// `denoise` and `tx_power` give the starting point; batch and sensing
/// powers stay fixed.
SolveTrace algorithm1(const std::vector<double>& batch, const Matrix& sense_power,
                      const Matrix& initial_tx_power, std::vector<double> denoise,
                      const ChannelState& channel, const SystemConfig& config,
                      const ConvergenceConstants& constants, const SolveOptions& options);

/**
 * Full alternating solve of the joint problem. The trace records the
 * continuous-relaxation objective after every subproblem; the returned
 * final_plan carries integral batch sizes and passes the exact (ceiling
 * latency) feasibility check. An optional initial plan warm-starts the
 * alternation.
 */
SolveTrace algorithm2(const SystemConfig& config, const ChannelState& channel,
                      const ConvergenceConstants& constants, const SolveOptions& options,
                      const std::optional<AllocationPlan>& initial_plan = std::nullopt);

enum class BaselineKind { fixed_tx_power, fixed_batch, fixed_eta, channel_inversion };

/// Benchmark schemes: one component pinned to its reference value
/// (p = 0.5 P_max per-symbol, b = 400, eta = 0.5, or unit-gain channel
/// inversion capped at the power limits), the rest optimized with the same
/// machinery. Throws if the pinned component is infeasible.
AllocationPlan baseline_plan(BaselineKind kind, const SystemConfig& config,
                             const ChannelState& channel, const ConvergenceConstants& constants,
                             const SolveOptions& options);

std::string baseline_name(BaselineKind kind);

std::string plan_to_json_string(const AllocationPlan& plan);
AllocationPlan plan_from_json_string(const std::string& text);

}  // namespace optimizer
}  // namespace vfeel

#endif
