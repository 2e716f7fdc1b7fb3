// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "motionlm/tensor.hpp"

namespace motionlm {

// Adam with decoupled weight decay.
class AdamW {
public:
    struct Options {
        Real lr = 1e-3;
        Real beta1 = 0.9;
        Real beta2 = 0.999;
        Real eps = 1e-8;
        Real weight_decay = 0.0;
    };

    AdamW(std::vector<Tensor> params, Options opts) : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_)
            states_.push_back({Array::Zero(p.size()), Array::Zero(p.size())});
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step(Real lr_scale = 1.0) {
        ++t_;
        const Real lr = opts_.lr * lr_scale;
        const Real bc1 = 1.0 - std::pow(opts_.beta1, t_);
        const Real bc2 = 1.0 - std::pow(opts_.beta2, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            const Array g = p.grad();
            State& s = states_[i];
            s.m = opts_.beta1 * s.m + (1.0 - opts_.beta1) * g;
            s.v = opts_.beta2 * s.v + (1.0 - opts_.beta2) * g * g;
            const Array mhat = s.m / bc1;
            const Array vhat = s.v / bc2;
            if (opts_.weight_decay > 0.0) p.value() -= lr * opts_.weight_decay * p.value();
            p.value() -= lr * mhat / (vhat.sqrt() + opts_.eps);
        }
    }

    const std::vector<Tensor>& params() const { return params_; }

private:
    struct State {
        Array m, v;
    };
    std::vector<Tensor> params_;
    std::vector<State> states_;
    Options opts_;
    int t_ = 0;
};

// Linear warmup into cosine annealing toward zero.
inline Real cosine_lr_scale(int step, int total_steps, int warmup) {
    if (warmup > 0 && step < warmup) return static_cast<Real>(step + 1) / warmup;
    if (total_steps <= warmup) return 1.0;
    const Real progress = static_cast<Real>(step - warmup) / (total_steps - warmup);
    return 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(1.0, progress)));
}

}  // namespace motionlm
