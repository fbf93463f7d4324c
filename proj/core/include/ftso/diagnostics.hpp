#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ftso {

// Gradient of a scalar loss at a parameter vector.
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

struct EigenResult {
  double value = 0.0;  // dominant eigenvalue, absolute value
  int iterations = 0;
  bool converged = false;
};

// (grad(theta + eps v) - grad(theta - eps v)) / (2 eps)
std::vector<double> hessian_vector_product(const GradientFn& grad, std::span<const double> theta,
                                           std::span<const double> v, double eps);

// Power iteration on finite-difference Hessian-vector products with
// eps = 1e-3 * max(1, |theta|). Stops when successive Rayleigh quotients
// differ by less than tol or the residual |Hv - lambda v| drops below tol.
EigenResult hessian_max_eigenvalue(const GradientFn& grad, std::span<const double> theta,
                                   int iters = 100, double tol = 1e-6, std::uint64_t seed = 0);

// Product-moment correlation coefficient.
double pearson(std::span<const double> xs, std::span<const double> ys);

}  // namespace ftso
