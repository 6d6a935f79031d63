#pragma once

#include <vector>

#include "demspec/params.hpp"

namespace demspec {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW); only for slots with decay set
};

// One optimisable matrix and its gradient.
struct ParamSlot {
    Matrix* value;
    const Matrix* grad;
    bool decay;
};

class Adam {
public:
    explicit Adam(AdamOptions options) : options_(options) {}

    void step(const std::vector<ParamSlot>& slots);
    long steps() const { return steps_; }
    const AdamOptions& options() const { return options_; }

private:
    AdamOptions options_;
    std::vector<Matrix> m_, v_;
    long steps_ = 0;
};

std::vector<ParamSlot> slots_for(ParamSet& params, const ParamSet& grads);

// Rescales the gradients in place so their joint L2 norm is at most max_norm;
// returns the norm before clipping.
double clip_grad_norm(ParamSet& grads, double max_norm);

}  // namespace demspec
