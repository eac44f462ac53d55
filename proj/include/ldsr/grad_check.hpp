#pragma once

#include <functional>

#include "ldsr/tensor.hpp"

namespace ldsr {

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: (f(x + h e_i) - f(x - h e_i)) / 2h. Throws NonFiniteError if f
/// returns a non-finite value.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h = 1e-5);

/// Max over elements of |a - b| / max(|a|, |b|, floor).
double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric,
                          double floor = 1e-6);

}  // namespace ldsr
