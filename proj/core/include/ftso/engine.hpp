#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ftso/dataset.hpp"
#include "ftso/genotype.hpp"
#include "ftso/network.hpp"
#include "ftso/optim.hpp"
#include "ftso/supernet.hpp"

namespace ftso {

enum class BudgetUnit { Iterations, Epochs };

struct SearchBudget {
  BudgetUnit unit = BudgetUnit::Epochs;
  int amount = 1;
  int batch_size = 64;

  void validate() const;
  // Bilevel steps for a training split of n_train samples.
  std::int64_t total_steps(std::int64_t n_train) const;
};

struct SearchHyper {
  OptimizerConfig arch{OptimizerKind::Adam, 3e-4, 0.9, 1e-3, 0.5, 0.999, 1e-8};
  OptimizerConfig weight{OptimizerKind::Momentum, 0.025, 0.9, 3e-4, 0.9, 0.999, 1e-8};
  double weight_lr_min = 0.001;
  // Stem, preprocessing and classifier are trained only when set.
  bool train_scaffold = false;
  // Hessian eigenvalue of the validation loss every k steps (0 = off).
  int hessian_every = 0;
  int hessian_iters = 20;
  double hessian_tol = 1e-4;
};

// JSON-lines output. trace receives only deterministic fields; wall-clock
// numbers go to timings.
struct TraceSink {
  std::string run_id;
  std::ostream* trace = nullptr;
  std::ostream* timings = nullptr;

  void record(const std::string& json_line) const;
  void timing(const std::string& phase, double seconds) const;
};

struct StepReport {
  double val_loss = 0.0;
  double train_loss = 0.0;  // NaN when there were no weights to update
  bool arch_updated = false;
  bool weight_updated = false;
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based
  std::int64_t epoch = 0;
  double val_loss = 0.0;
  double train_loss = 0.0;
  double weight_lr = 0.0;
};

struct EigenRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct PhaseResult {
  std::string phase;
  Genotype genotype;
  double seconds = 0.0;
  std::vector<StepRecord> trace;
  std::vector<EigenRecord> eigen;
  ArchParams arch;
  std::int64_t arch_steps = 0;
  std::int64_t weight_steps = 0;
  std::int64_t weight_scalars = 0;  // scalars the w-step updates
  std::int64_t operator_instances = 0;  // per normal cell
};

// One first-order alternation: architecture parameters on the validation
// batch, then weights on the training batch. The weight half is skipped when
// weight_opt holds no parameters. Throws NumericalError on a non-finite loss.
StepReport bilevel_step(SuperNet& net, Optimizer& arch_opt, Optimizer& weight_opt,
                        const Batch& train, const Batch& val);

// Super-net whose edges carry only ops (default skip_connect); returns the
// top-2 pruned topology.
PhaseResult topology_search(const Dataset& data, const SpaceConfig& space,
                            const std::vector<OperatorKind>& ops, const SearchBudget& budget,
                            const SearchHyper& hyper, std::uint64_t seed,
                            const TraceSink* sink = nullptr);

// Mixed operators on the retained edges only.
PhaseResult operator_search(const Genotype& topology, const Dataset& data,
                            const SpaceConfig& space, const std::vector<OperatorKind>& ops,
                            const SearchBudget& budget, const SearchHyper& hyper,
                            std::uint64_t seed, const TraceSink* sink = nullptr);

// Every retained edge relabelled with op.
Genotype direct_replace(const Genotype& topology, OperatorKind op);

// Joint alpha/beta/w search over the full cell space.
PhaseResult darts_baseline_search(const Dataset& data, const SpaceConfig& space,
                                  const std::vector<OperatorKind>& ops,
                                  const SearchBudget& budget, const SearchHyper& hyper,
                                  std::uint64_t seed, const TraceSink* sink = nullptr);

struct EvalConfig {
  int epochs = 20;
  int batch_size = 64;
  OptimizerConfig opt{OptimizerKind::Momentum, 0.025, 0.9, 3e-4, 0.9, 0.999, 1e-8};
  double lr_min = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 0 = before training
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct EvalReport {
  std::vector<EpochRecord> epochs;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  std::int64_t parameters = 0;
  double seconds = 0.0;
};

// Trains the discrete network from scratch on eval-train; val is the
// search-val split, test the held-out split.
EvalReport evaluate_architecture(const Genotype& g, const Dataset& data, const SpaceConfig& space,
                                 const EvalConfig& cfg, std::uint64_t seed,
                                 const TraceSink* sink = nullptr);

// Fraction of correctly classified samples among indices (inference mode).
double accuracy(Network& net, const Dataset& data, std::span<const int> indices,
                int batch_size = 256);

// Dominant Hessian eigenvalue of the validation loss with respect to the
// super-net's trainable architecture parameters.
EigenRecord arch_hessian_eigenvalue(SuperNet& net, const Batch& val, int iters, double tol,
                                    std::uint64_t seed);

}  // namespace ftso
