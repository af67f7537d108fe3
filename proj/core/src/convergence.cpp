#include "vfeel/convergence.hpp"

#include <stdexcept>

#include "json.hpp"

namespace vfeel {

void ConvergenceConstants::validate() const {
    if (lipschitz_L <= 0.0) throw std::invalid_argument("ConvergenceConstants.lipschitz_L must be > 0");
    if (learning_rate_mu < 0.0 || learning_rate_mu >= 2.0 / lipschitz_L)
        throw std::invalid_argument("ConvergenceConstants.learning_rate_mu must lie in [0, 2/L)");
    if (grad_variance_sigma2 < 0.0)
        throw std::invalid_argument("ConvergenceConstants.grad_variance_sigma2 must be >= 0");
    if (embed_param_grad_G1 < 0.0)
        throw std::invalid_argument("ConvergenceConstants.embed_param_grad_G1 must be >= 0");
    if (embed_input_grad_G2 < 0.0)
        throw std::invalid_argument("ConvergenceConstants.embed_input_grad_G2 must be >= 0");
    if (hessian_bound_Psi < 0.0)
        throw std::invalid_argument("ConvergenceConstants.hessian_bound_Psi must be >= 0");
    if (num_devices_K < 1) throw std::invalid_argument("ConvergenceConstants.num_devices_K must be >= 1");
    if (num_rounds_T < 1) throw std::invalid_argument("ConvergenceConstants.num_rounds_T must be >= 1");
}

std::string BoundReport::to_json_string() const {
    nlohmann::json j;
    j["c1"] = c1;
    j["omega"] = omega;
    j["per_round_descent"] = per_round_descent;
    j["avg_grad_bound"] = avg_grad_bound;
    j["optimization_gap_term"] = optimization_gap_term;
    return j.dump(2);
}

namespace convergence {

double c1(const ConvergenceConstants& constants) {
    constants.validate();
    const double L = constants.lipschitz_L;
    const double mu = constants.learning_rate_mu;
    const double variance_scale =
        constants.grad_variance_sigma2 + constants.embed_param_grad_G1 *
                                             constants.embed_param_grad_G1 *
                                             constants.hessian_bound_Psi * constants.hessian_bound_Psi;
    return L * mu * (constants.num_devices_K + 1) * variance_scale /
           ((2.0 - L * mu) * constants.num_rounds_T);
}

double omega_round(const PlanRound& round, std::span<const double> channel_col,
                   const ConvergenceConstants& constants, std::span<const DeviceParams> devices,
                   const NetworkParams& net) {
    const auto stats = aircomp::mse_bound(round, channel_col, constants.embed_input_grad_G2, net,
                                          devices);
    return c1(constants) * (constants.num_devices_K + 1) / round.batch * stats.bound_total;
}

double omega(const AllocationPlan& plan, const ChannelState& channel,
             const ConvergenceConstants& constants, const std::vector<DeviceParams>& devices,
             const NetworkParams& net) {
    const int T = static_cast<int>(plan.batch_size.size());
    const double scale = c1(constants) * (constants.num_devices_K + 1);
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        const PlanRound round = plan_round(plan, t);
        const auto stats = aircomp::mse_bound(round, channel.magnitudes.column(t),
                                              constants.embed_input_grad_G2, net, devices);
        total += scale / round.batch * stats.bound_total;
    }
    return total;
}

double per_round_descent_bound(double grad_norm_sq, double batch, double mse_bound_total,
                               const ConvergenceConstants& constants) {
    constants.validate();
    if (batch < 1.0) throw std::invalid_argument("per_round_descent_bound: batch must be >= 1");
    const double L = constants.lipschitz_L;
    const double mu = constants.learning_rate_mu;
    const double g1_psi_sq = constants.embed_param_grad_G1 * constants.embed_param_grad_G1 *
                             constants.hessian_bound_Psi * constants.hessian_bound_Psi;
    const double descent = -mu * (1.0 - L * mu / 2.0) * grad_norm_sq;
    const double noise = L * mu * mu * (constants.num_devices_K + 1) / (2.0 * batch) *
                         (constants.grad_variance_sigma2 + g1_psi_sq * mse_bound_total);
    return descent + noise;
}

double lemma1_variance_bound(double batch, double mse_bound_total,
                             const ConvergenceConstants& constants) {
    constants.validate();
    if (batch < 1.0) throw std::invalid_argument("lemma1_variance_bound: batch must be >= 1");
    const double g1_psi_sq = constants.embed_param_grad_G1 * constants.embed_param_grad_G1 *
                             constants.hessian_bound_Psi * constants.hessian_bound_Psi;
    return constants.grad_variance_sigma2 / batch + g1_psi_sq / batch * mse_bound_total;
}

BoundReport avg_grad_bound(double initial_loss_gap, const AllocationPlan& plan,
                           const ChannelState& channel, const ConvergenceConstants& constants,
                           const std::vector<DeviceParams>& devices, const NetworkParams& net) {
    if (initial_loss_gap < 0.0)
        throw std::invalid_argument("avg_grad_bound: initial_loss_gap must be >= 0");
    constants.validate();
    const double L = constants.lipschitz_L;
    const double mu = constants.learning_rate_mu;
    if (mu <= 0.0) throw std::invalid_argument("avg_grad_bound: learning rate must be > 0");

    BoundReport report;
    report.c1 = c1(constants);
    const int T = static_cast<int>(plan.batch_size.size());
    report.per_round_descent.resize(T);
    const double scale = report.c1 * (constants.num_devices_K + 1);
    double omega_total = 0.0;
    for (int t = 0; t < T; ++t) {
        const PlanRound round = plan_round(plan, t);
        const auto stats = aircomp::mse_bound(round, channel.magnitudes.column(t),
                                              constants.embed_input_grad_G2, net, devices);
        report.per_round_descent[t] = scale / round.batch * stats.bound_total;
        omega_total += report.per_round_descent[t];
    }
    report.omega = omega_total;
    report.optimization_gap_term =
        2.0 * initial_loss_gap / (mu * (2.0 - L * mu) * constants.num_rounds_T);
    report.avg_grad_bound = report.optimization_gap_term + report.omega;
    return report;
}

}  // namespace convergence
}  // namespace vfeel
