#pragma once

#include <cstdint>
#include <vector>

#include "ftso/tensor.hpp"

namespace ftso {

enum class OptimizerKind { Sgd, Momentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Momentum;
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter auxiliary buffers plus the shared step counter.
//
// Momentum:  v <- mu*v + g + wd*p;  p <- p - lr*v   (mu = 0 gives plain SGD)
// Adam:      g' = g + wd*p; standard bias-corrected moments.
class Optimizer {
 public:
  Optimizer(std::vector<Parameter*> params, OptimizerConfig cfg);

  // Applies one update using each parameter's current grad().
  void step();
  void zero_grad();

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::int64_t steps_ = 0;
};

// Functional form of a single update for one parameter tensor; used by the
// optimizer and exposed for tests.
void sgd_momentum_update(std::span<double> param, std::span<const double> grad,
                         std::span<double> velocity, double lr, double momentum,
                         double weight_decay);

// Cosine annealing from base_lr down to min_lr over total_steps.
double cosine_lr(double base_lr, double min_lr, std::int64_t step,
                 std::int64_t total_steps);

}  // namespace ftso
