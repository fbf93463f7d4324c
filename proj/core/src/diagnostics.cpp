#include "ftso/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ftso/error.hpp"

namespace ftso {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

std::vector<double> hessian_vector_product(const GradientFn& grad, std::span<const double> theta,
                                           std::span<const double> v, double eps) {
  if (theta.size() != v.size()) throw ShapeError("hessian_vector_product: length mismatch");
  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    plus[i] += eps * v[i];
    minus[i] -= eps * v[i];
  }
  const auto gp = grad(plus);
  const auto gm = grad(minus);
  if (gp.size() != theta.size() || gm.size() != theta.size()) {
    throw ShapeError("hessian_vector_product: gradient length differs from parameter count");
  }
  std::vector<double> hv(theta.size());
  for (std::size_t i = 0; i < hv.size(); ++i) {
    hv[i] = (gp[i] - gm[i]) / (2.0 * eps);
    if (!std::isfinite(hv[i])) throw NumericalError("non-finite Hessian-vector product");
  }
  return hv;
}

EigenResult hessian_max_eigenvalue(const GradientFn& grad, std::span<const double> theta,
                                   int iters, double tol, std::uint64_t seed) {
  if (theta.empty()) throw DataError("hessian_max_eigenvalue: no parameters");
  if (iters < 1) throw DataError("hessian_max_eigenvalue: iters must be >= 1");
  const double eps = 1e-3 * std::max(1.0, norm(theta));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(theta.size());
  for (auto& x : v) x = normal(rng);
  const double n0 = norm(v);
  for (auto& x : v) x /= n0;

  EigenResult r;
  double previous = 0.0;
  for (int it = 1; it <= iters; ++it) {
    const auto hv = hessian_vector_product(grad, theta, v, eps);
    const double lambda = dot(v, hv);
    double residual = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = hv[i] - lambda * v[i];
      residual += d * d;
    }
    residual = std::sqrt(residual);
    r.value = std::abs(lambda);
    r.iterations = it;
    const double hn = norm(hv);
    if (hn == 0.0 || residual < tol || (it > 1 && std::abs(lambda - previous) < tol)) {
      r.converged = true;
      return r;
    }
    previous = lambda;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = hv[i] / hn;
  }
  return r;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw DataError("pearson: series lengths differ (" + std::to_string(xs.size()) + " vs " +
                    std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 2) throw DataError("pearson: need at least 2 points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw DataError("pearson: first series has zero variance");
  if (syy == 0.0) throw DataError("pearson: second series has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace ftso
