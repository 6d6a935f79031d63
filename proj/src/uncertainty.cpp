#include "demspec/uncertainty.hpp"

#include <cmath>

#include "demspec/error.hpp"

namespace demspec {

WeightedLoss weighted_loss(double loss, double eta) {
    if (!std::isfinite(loss) || !std::isfinite(eta))
        fail(ErrorCode::non_finite, "weighted_loss needs finite inputs");
    if (loss < 0.0) fail(ErrorCode::invalid_argument, "task loss must be non-negative");
    const double w = std::exp(-eta);
    return {0.5 * (w * loss + eta), 0.5 * w, 0.5 * (1.0 - w * loss)};
}

CombinedLoss combined_loss(double mlm_loss, double dem_loss, const UncertaintyState& state) {
    const WeightedLoss m = weighted_loss(mlm_loss, state.eta_mlm);
    const WeightedLoss d = weighted_loss(dem_loss, state.eta_dem);
    return {m.value + d.value, m.d_loss, d.d_loss, m.d_eta, d.d_eta};
}

double task_weight(double eta) { return 0.5 * std::exp(-eta); }

}  // namespace demspec
