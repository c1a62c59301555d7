#include "xvpr/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace xvpr {

double grad_check(const ScalarField& f, const Tensor& point, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  const Tensor analytic = f.gradient(point);
  if (!same_shape(analytic, point))
    throw std::invalid_argument("grad_check: gradient shape does not match point");
  if (!analytic.all_finite()) throw std::invalid_argument("grad_check: non-finite analytic gradient");

  Tensor x = point;
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f.value(x);
    x[i] = orig - eps;
    const double fm = f.value(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::invalid_argument("grad_check: non-finite evaluation at perturbed point");
    const double cd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - cd) / std::max(1.0, std::abs(cd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace xvpr
