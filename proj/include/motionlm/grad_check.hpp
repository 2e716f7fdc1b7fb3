// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "motionlm/ops.hpp"

namespace motionlm {

// Compares the reverse-mode gradient of a scalar-valued function against
// central finite differences, element by element. Returns the maximum
// relative error max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
Real grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, Real eps = 1e-5);

// Same, for a function of several tensors; perturbs every element of every
// input that requires gradients.
Real grad_check_multi(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                      Real eps = 1e-5);

}  // namespace motionlm
