#include "ftso/optim.hpp"

#include <cmath>
#include <numbers>

#include "ftso/error.hpp"

namespace ftso {

void sgd_momentum_update(std::span<double> param, std::span<const double> grad,
                         std::span<double> velocity, double lr, double momentum,
                         double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ShapeError("sgd update: parameter/gradient/velocity lengths differ (" +
                     std::to_string(param.size()) + "/" +
                     std::to_string(grad.size()) + "/" +
                     std::to_string(velocity.size()) + ")");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

Optimizer::Optimizer(std::vector<Parameter*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr >= 0.0)) throw DataError("optimizer: learning rate must be >= 0");
  for (Parameter* p : params_) {
    first_.emplace_back(p->value().shape());
    if (cfg_.kind == OptimizerKind::Adam) second_.emplace_back(p->value().shape());
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Optimizer::step() {
  ++steps_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad().shape() != p.value().shape()) {
      throw ShapeError("optimizer: gradient shape " + shape_str(p.grad().shape()) +
                       " for parameter '" + p.name() + "' of shape " +
                       shape_str(p.value().shape()));
    }
    switch (cfg_.kind) {
      case OptimizerKind::Sgd:
        sgd_momentum_update(p.value().data(), p.grad().data(), first_[k].data(),
                            cfg_.lr, 0.0, cfg_.weight_decay);
        break;
      case OptimizerKind::Momentum:
        sgd_momentum_update(p.value().data(), p.grad().data(), first_[k].data(),
                            cfg_.lr, cfg_.momentum, cfg_.weight_decay);
        break;
      case OptimizerKind::Adam: {
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        auto w = p.value().data();
        auto g = p.grad().data();
        auto m = first_[k].data();
        auto v = second_[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = g[i] + cfg_.weight_decay * w[i];
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
          w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
        break;
      }
    }
  }
}

double cosine_lr(double base_lr, double min_lr, std::int64_t step,
                 std::int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  const double frac = static_cast<double>(std::min(step, total_steps)) /
                      static_cast<double>(total_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace ftso
