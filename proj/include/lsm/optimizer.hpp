#pragma once

#include <map>
#include <string>

#include "lsm/autodiff.hpp"

namespace lsm {

/// lr_t = base * 0.5 * (1 + cos(pi * t / T)) for steps t = 1..T; the last step gets 0.
class CosineSchedule {
public:
    CosineSchedule() = default;
    CosineSchedule(double base_lr, long total_steps);

    double lr(long step) const;
    double base_lr() const { return base_; }
    long total_steps() const { return total_; }

private:
    double base_ = 0.0;
    long total_ = 1;
};

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Frozen parameters are never touched and
/// keep no state.
class AdamW {
public:
    AdamW() = default;
    AdamW(const AdamWConfig& cfg, long total_steps);

    /// Throws NonFiniteGradient (before any update) when a gradient is not finite.
    void step(const ParameterList& params);

    long steps() const { return step_; }
    double current_lr() const { return last_lr_; }
    const AdamWConfig& config() const { return cfg_; }
    const CosineSchedule& schedule() const { return schedule_; }

    std::map<std::string, Tensor>& first_moments() { return m_; }
    std::map<std::string, Tensor>& second_moments() { return v_; }
    const std::map<std::string, Tensor>& first_moments() const { return m_; }
    const std::map<std::string, Tensor>& second_moments() const { return v_; }
    void set_steps(long s) { step_ = s; }

private:
    AdamWConfig cfg_;
    CosineSchedule schedule_;
    long step_ = 0;
    double last_lr_ = 0.0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

} // namespace lsm
