#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ftso {

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central-difference estimate of the gradient of f at point, one coordinate
// at a time: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
std::vector<double> finite_diff_gradient(const ScalarFunction& f,
                                         std::span<const double> point,
                                         double epsilon = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace ftso
