/**
 * Convergence machinery: the per-round gradient-variance bound, the
 * per-round expected loss descent, and the average-gradient-norm bound
 * whose resource-dependent term Omega is what the optimizer minimizes.
 *
 * Two printed forms of the variance constant disagree in the source
 * analysis: the proof of the variance lemma yields sigma^2/b additively
 * while the descent/average bounds as printed multiply (sigma^2 + G1^2
 * Psi^2) by the aggregation MSE. lemma1_variance_bound and
 * per_round_descent_bound implement the proof-consistent additive form;
 * omega implements the average-bound term verbatim since that is the
 * objective the allocator minimizes. Positive-constant scaling does not
 * change any argmin.
 */
#ifndef VFEEL_CONVERGENCE_HPP
#define VFEEL_CONVERGENCE_HPP

#include <string>
#include <vector>

#include "vfeel/aircomp.hpp"
#include "vfeel/model.hpp"

namespace vfeel {

struct ConvergenceConstants {
    double lipschitz_L = 1.0;
    double learning_rate_mu = 0.1;    // must satisfy 0 <= mu < 2/L
    double grad_variance_sigma2 = 1.0;
    double embed_param_grad_G1 = 1.0;
    double embed_input_grad_G2 = 0.1;
    double hessian_bound_Psi = 1.0;
    int num_devices_K = 3;
    int num_rounds_T = 200;

    void validate() const;
};

struct BoundReport {
    double c1 = 0.0;
    double omega = 0.0;
    std::vector<double> per_round_descent;  // per-round Omega contributions
    double avg_grad_bound = 0.0;
    double optimization_gap_term = 0.0;

    std::string to_json_string() const;
};

namespace convergence {

/// c1 = L mu (K+1) (sigma^2 + G1^2 Psi^2) / ((2 - L mu) T). Throws if mu >= 2/L.
double c1(const ConvergenceConstants& constants);

/// Per-round Omega contribution: c1 (K+1) / b * mse_bound_total at round t.
double omega_round(const PlanRound& round, std::span<const double> channel_col,
                   const ConvergenceConstants& constants, std::span<const DeviceParams> devices,
                   const NetworkParams& net);

/// Omega: the resource-dependent term of the average-gradient bound, summed
/// over all rounds of the plan.
double omega(const AllocationPlan& plan, const ChannelState& channel,
             const ConvergenceConstants& constants, const std::vector<DeviceParams>& devices,
             const NetworkParams& net);

/// Expected per-round loss change bound:
///   -mu (1 - L mu / 2) ||grad||^2 + L mu^2 (K+1) / (2b) (sigma^2 + G1^2 Psi^2 mse).
double per_round_descent_bound(double grad_norm_sq, double batch, double mse_bound_total,
                               const ConvergenceConstants& constants);

/// Gradient-variance bound of the averaged stochastic gradient:
///   sigma^2 / b + (G1^2 Psi^2 / b) * mse_bound_total.
double lemma1_variance_bound(double batch, double mse_bound_total,
                             const ConvergenceConstants& constants);

/// Average-gradient-norm bound: 2 gap / (mu (2 - L mu) T) + Omega.
BoundReport avg_grad_bound(double initial_loss_gap, const AllocationPlan& plan,
                           const ChannelState& channel, const ConvergenceConstants& constants,
                           const std::vector<DeviceParams>& devices, const NetworkParams& net);

}  // namespace convergence
}  // namespace vfeel

#endif
