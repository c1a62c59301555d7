#pragma once

#include "xvpr/tensor.hpp"

#include <functional>

namespace xvpr {

/// A scalar-valued map with an analytic gradient, the unit under test for
/// finite-difference validation.
struct ScalarField {
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> gradient;
};

/// Central-difference check: returns
///   max_i |analytic_i - cd_i| / max(1, |cd_i|)
/// where cd_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Throws on non-finite evaluations.
double grad_check(const ScalarField& f, const Tensor& point, double eps);

}  // namespace xvpr
