#include "demspec/optim.hpp"

#include <cmath>

#include "demspec/error.hpp"

namespace demspec {

void Adam::step(const std::vector<ParamSlot>& slots) {
    if (m_.empty()) {
        for (const auto& s : slots) {
            m_.push_back(Matrix::Zero(s.value->rows(), s.value->cols()));
            v_.push_back(Matrix::Zero(s.value->rows(), s.value->cols()));
        }
    }
    if (m_.size() != slots.size()) fail(ErrorCode::invalid_argument, "optimizer slot layout changed");
    ++steps_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double step = options_.lr / c1;
    const double root_c2 = std::sqrt(c2);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        Matrix& w = *slots[i].value;
        const Matrix& g = *slots[i].grad;
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
        if (slots[i].decay && options_.weight_decay > 0.0) w *= 1.0 - options_.lr * options_.weight_decay;
        w.array() -= step * m_[i].array() / (v_[i].array().sqrt() / root_c2 + options_.eps);
    }
}

std::vector<ParamSlot> slots_for(ParamSet& params, const ParamSet& grads) {
    std::vector<ParamSlot> out;
    for (std::size_t i = 0; i < params.size(); ++i)
        out.push_back({&params[i], &grads[i], params.tensors()[i].decay});
    return out;
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& t : grads.tensors()) sq += t.value.squaredNorm();
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& t : grads.tensors()) t.value *= s;
    }
    return norm;
}

}  // namespace demspec
