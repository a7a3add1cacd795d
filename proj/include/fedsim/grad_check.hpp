#pragma once

#include <functional>

#include "fedsim/tensor.hpp"

namespace fedsim {

using TensorFn = std::function<Tensor(const Tensor&)>;

// Central-difference check of a scalar-valued tensor function. Returns the
// max over coordinates of |analytic - numeric| / max(1, |analytic|).
double grad_check(const TensorFn& f, const Tensor& point, double h = 1e-5);

}  // namespace fedsim
