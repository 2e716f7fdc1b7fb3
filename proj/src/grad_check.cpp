// SPDX-License-Identifier: Apache-2.0
#include "motionlm/grad_check.hpp"

#include <cmath>

namespace motionlm {

namespace {

Real rel_err(Real a, Real b) {
    const Real denom = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) / denom;
}

Real eval_scalar(const std::function<Tensor()>& f) {
    // No tape active: values only.
    Tensor y = f();
    if (y.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    return y.item();
}

}  // namespace

Real grad_check_multi(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                      Real eps) {
    if (eps <= 0) throw ConfigError("grad_check: eps must be positive");
    std::vector<Array> analytic;
    {
        for (auto& x : inputs) const_cast<Tensor&>(x).zero_grad();
        Tape tape;
        Tensor y = f();
        if (y.size() != 1) throw ShapeError("grad_check: function must return a scalar");
        tape.backward(y);
        for (const auto& x : inputs) analytic.push_back(x.grad());
    }
    Real worst = 0.0;
    for (size_t xi = 0; xi < inputs.size(); ++xi) {
        Tensor x = inputs[xi];
        if (!x.requires_grad()) continue;
        for (Eigen::Index i = 0; i < x.value().size(); ++i) {
            const Real saved = x.value()(i);
            x.value()(i) = saved + eps;
            const Real fp = eval_scalar(f);
            x.value()(i) = saved - eps;
            const Real fm = eval_scalar(f);
            x.value()(i) = saved;
            const Real g_fd = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, rel_err(analytic[xi](i), g_fd));
        }
    }
    return worst;
}

Real grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, Real eps) {
    return grad_check_multi([&]() { return f(x); }, {x}, eps);
}

}  // namespace motionlm
