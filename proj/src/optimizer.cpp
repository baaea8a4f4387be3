#include "lsm/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "lsm/error.hpp"

namespace lsm {

CosineSchedule::CosineSchedule(double base_lr, long total_steps) : base_(base_lr), total_(total_steps) {
    require(base_lr > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
    require(total_steps >= 1, ErrorCode::InvalidArgument, "schedule needs at least one step");
}

double CosineSchedule::lr(long step) const {
    if (step >= total_) return 0.0;
    return base_ * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_)));
}

AdamW::AdamW(const AdamWConfig& cfg, long total_steps) : cfg_(cfg), schedule_(cfg.lr, total_steps) {
    require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, ErrorCode::InvalidArgument,
            "betas must be in [0, 1)");
    require(cfg.eps > 0.0 && cfg.weight_decay >= 0.0, ErrorCode::InvalidArgument, "eps / weight decay");
}

void AdamW::step(const ParameterList& params) {
    for (const Parameter* p : params) {
        if (p->frozen) continue;
        require(p->grad.same_shape(p->value), ErrorCode::ShapeMismatch, p->name + ": gradient shape");
        if (!all_finite(p->grad.values())) throw Error(ErrorCode::NonFiniteGradient, p->name);
    }
    ++step_;
    last_lr_ = schedule_.lr(step_);
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (Parameter* p : params) {
        if (p->frozen) continue;
        Tensor& m = m_.try_emplace(p->name, Tensor::zeros_like(p->value)).first->second;
        Tensor& v = v_.try_emplace(p->name, Tensor::zeros_like(p->value)).first->second;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            p->value[i] -= last_lr_ * cfg_.weight_decay * p->value[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p->value[i] -= last_lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

} // namespace lsm
