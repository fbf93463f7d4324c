#include "ftso/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ftso/error.hpp"

namespace ftso {

std::vector<double> finite_diff_gradient(const ScalarFunction& f,
                                         std::span<const double> point,
                                         double epsilon) {
  if (!(epsilon > 0.0)) throw DataError("finite_diff_gradient: epsilon must be > 0");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + epsilon;
    const double up = f(x);
    x[i] = orig - epsilon;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor) {
  if (a.size() != b.size()) {
    throw ShapeError("max_relative_error: lengths " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace ftso
