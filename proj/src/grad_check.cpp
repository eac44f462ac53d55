#include "ldsr/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ldsr {

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h) {
  Tensor<double> g(x.shape());
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("finite_diff_grad: non-finite function value at coordinate " +
                           std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric,
                          double floor) {
  require_same_shape(analytic.shape(), numeric.shape(), "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace ldsr
