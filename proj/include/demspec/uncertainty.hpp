#pragma once

namespace demspec {

// Learned log-variances of the two specialization tasks. Each task loss L_t
// enters the objective as 0.5 * (exp(-eta_t) * L_t + eta_t).
struct UncertaintyState {
    double eta_mlm = 0.0;
    double eta_dem = 0.0;
};

struct WeightedLoss {
    double value;
    double d_loss;  // d value / d L
    double d_eta;   // d value / d eta
};

WeightedLoss weighted_loss(double loss, double eta);

struct CombinedLoss {
    double value;
    double d_mlm, d_dem;          // effective task weights
    double d_eta_mlm, d_eta_dem;  // gradients w.r.t. the log-variances
};

CombinedLoss combined_loss(double mlm_loss, double dem_loss, const UncertaintyState& state);

// Effective weight 0.5 * exp(-eta) a task loss receives; strictly decreasing in eta.
double task_weight(double eta);

}  // namespace demspec
