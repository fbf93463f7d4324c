#include "ftso/engine.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "ftso/diagnostics.hpp"
#include "ftso/error.hpp"
#include "ftso/seed.hpp"

namespace ftso {

using nlohmann::json;

void SearchBudget::validate() const {
  if (amount < 1) throw DataError("search budget must be >= 1");
  if (batch_size < 1) throw DataError("batch size must be >= 1");
}

std::int64_t SearchBudget::total_steps(std::int64_t n_train) const {
  validate();
  if (unit == BudgetUnit::Iterations) return amount;
  const std::int64_t per_epoch = (n_train + batch_size - 1) / batch_size;
  return per_epoch * amount;
}

void TraceSink::record(const std::string& json_line) const {
  if (trace) *trace << json_line << '\n';
}

void TraceSink::timing(const std::string& phase, double seconds) const {
  if (!timings) return;
  json j{{"run", run_id}, {"phase", phase}, {"seconds", seconds}};
  *timings << j.dump() << '\n';
}

namespace {

// Marks parameters frozen for the guard's lifetime, restoring prior flags.
class FreezeGuard {
 public:
  explicit FreezeGuard(const std::vector<Parameter*>& params) {
    for (auto* p : params) {
      saved_.emplace_back(p, p->frozen());
      p->set_frozen(true);
    }
  }
  ~FreezeGuard() {
    for (auto& [p, f] : saved_) p->set_frozen(f);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<Parameter*, bool>> saved_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_data(const Dataset& data, const SpaceConfig& space) {
  if (data.num_classes != space.num_classes) {
    throw DataError("dataset has " + std::to_string(data.num_classes) +
                    " classes, network classifier has " + std::to_string(space.num_classes));
  }
  if (data.channels() != space.in_channels) {
    throw DataError("dataset images have " + std::to_string(data.channels()) +
                    " channels, network expects " + std::to_string(space.in_channels));
  }
}

double loss_value(Var loss, const char* what) {
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " loss diverged (non-finite)");
  return v;
}

std::vector<int> take(const std::vector<int>& order, std::size_t start, std::size_t count) {
  const std::size_t end = std::min(order.size(), start + count);
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(end)};
}

// Next batch from a cyclic walk over a fixed permutation.
std::vector<int> take_cyclic(const std::vector<int>& order, std::size_t& pos, std::size_t count) {
  std::vector<int> out;
  out.reserve(count);
  for (std::size_t i = 0; i < std::min(count, order.size()); ++i) {
    out.push_back(order[pos]);
    pos = (pos + 1) % order.size();
  }
  return out;
}

PhaseResult run_search(SuperNet& net, const std::string& phase, const Dataset& data,
                       const SearchBudget& budget, const SearchHyper& hyper, std::uint64_t seed,
                       const TraceSink* sink, std::chrono::steady_clock::time_point t0) {
  budget.validate();
  if (data.search_train.empty() || data.search_val.empty()) {
    throw DataError(phase + " search: empty search-train or search-val split");
  }
  check_data(data, net.config());
  net.set_scaffold_frozen(!hyper.train_scaffold);
  Optimizer arch_opt(net.arch_parameters(), hyper.arch);
  Optimizer weight_opt(net.weight_parameters(), hyper.weight);

  const auto n_train = static_cast<std::int64_t>(data.search_train.size());
  const std::int64_t per_epoch = (n_train + budget.batch_size - 1) / budget.batch_size;
  const std::int64_t total = budget.total_steps(n_train);
  const auto bs = static_cast<std::size_t>(budget.batch_size);

  const std::vector<int> val_order = shuffled(data.search_val, derive_seed(seed, 2));
  std::size_t val_pos = 0;
  std::vector<int> train_order;
  Batch eigen_batch;
  if (hyper.hessian_every > 0) {
    std::size_t p = 0;
    eigen_batch = make_batch(data, take_cyclic(val_order, p, bs));
  }

  PhaseResult r;
  r.phase = phase;
  r.weight_scalars = 0;
  for (auto* p : weight_opt.params()) r.weight_scalars += static_cast<std::int64_t>(p->numel());
  r.operator_instances = net.operator_instances_per_cell(false);

  for (std::int64_t step = 0; step < total; ++step) {
    const std::int64_t epoch = step / per_epoch;
    const std::int64_t within = step % per_epoch;
    if (within == 0) {
      train_order = shuffled(data.search_train, derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
    }
    const Batch train = make_batch(data, take(train_order, static_cast<std::size_t>(within) * bs, bs));
    const Batch val = make_batch(data, take_cyclic(val_order, val_pos, bs));
    const double lr = cosine_lr(hyper.weight.lr, hyper.weight_lr_min, step, total);
    weight_opt.set_lr(lr);

    StepReport rep;
    try {
      rep = bilevel_step(net, arch_opt, weight_opt, train, val);
    } catch (const NumericalError& e) {
      if (sink) {
        sink->record(json{{"run", sink->run_id}, {"phase", phase}, {"event", "abort"},
                          {"step", step + 1}, {"error", e.what()}}
                         .dump());
      }
      throw;
    }
    r.arch_steps += rep.arch_updated ? 1 : 0;
    r.weight_steps += rep.weight_updated ? 1 : 0;
    StepRecord rec{step + 1, epoch, rep.val_loss, rep.train_loss, lr};
    r.trace.push_back(rec);
    if (sink) {
      sink->record(json{{"run", sink->run_id},
                        {"phase", phase},
                        {"step", rec.step},
                        {"epoch", rec.epoch},
                        {"val_loss", rec.val_loss},
                        {"train_loss", rec.train_loss},
                        {"weight_lr", rec.weight_lr}}
                       .dump());
    }
    if (hyper.hessian_every > 0 && (step + 1) % hyper.hessian_every == 0) {
      EigenRecord e = arch_hessian_eigenvalue(net, eigen_batch, hyper.hessian_iters,
                                              hyper.hessian_tol, derive_seed(seed, 3));
      e.step = step + 1;
      e.epoch = epoch;
      r.eigen.push_back(e);
      if (sink) {
        sink->record(json{{"run", sink->run_id},
                          {"phase", phase},
                          {"event", "hessian"},
                          {"step", e.step},
                          {"epoch", e.epoch},
                          {"eigenvalue", e.value},
                          {"iterations", e.iterations},
                          {"converged", e.converged}}
                         .dump());
      }
    }
  }
  r.arch = net.arch();
  r.genotype = derive_genotype(net.arch());
  r.seconds = seconds_since(t0);
  if (sink) sink->timing(phase, r.seconds);
  return r;
}

std::vector<CandidateOp> as_candidates(const std::vector<OperatorKind>& ops) {
  if (ops.empty()) throw DataError("operator set is empty");
  return {ops.begin(), ops.end()};
}

}  // namespace

StepReport bilevel_step(SuperNet& net, Optimizer& arch_opt, Optimizer& weight_opt,
                        const Batch& train, const Batch& val) {
  if (train.labels.empty() || val.labels.empty()) throw DataError("bilevel_step: empty batch");
  StepReport r;
  {
    FreezeGuard hold(weight_opt.params());
    arch_opt.zero_grad();
    Tape tape(!arch_opt.params().empty());
    Var loss = cross_entropy(net.forward(tape, val.images, true), val.labels);
    r.val_loss = loss_value(loss, "validation");
    if (!arch_opt.params().empty()) {
      tape.backward(loss);
      arch_opt.step();
      r.arch_updated = true;
    }
  }
  if (weight_opt.params().empty()) {
    // Nothing to update: the w-step is skipped and reports no loss.
    r.train_loss = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  {
    FreezeGuard hold(arch_opt.params());
    weight_opt.zero_grad();
    Tape tape;
    Var loss = cross_entropy(net.forward(tape, train.images, true), train.labels);
    r.train_loss = loss_value(loss, "training");
    tape.backward(loss);
    weight_opt.step();
    r.weight_updated = true;
  }
  return r;
}

PhaseResult topology_search(const Dataset& data, const SpaceConfig& space,
                            const std::vector<OperatorKind>& ops, const SearchBudget& budget,
                            const SearchHyper& hyper, std::uint64_t seed, const TraceSink* sink) {
  budget.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SuperNet net(space, as_candidates(ops), derive_seed(seed, 1));
  return run_search(net, "topology", data, budget, hyper, seed, sink, t0);
}

PhaseResult operator_search(const Genotype& topology, const Dataset& data,
                            const SpaceConfig& space, const std::vector<OperatorKind>& ops,
                            const SearchBudget& budget, const SearchHyper& hyper,
                            std::uint64_t seed, const TraceSink* sink) {
  budget.validate();
  validate_genotype(topology);
  const auto t0 = std::chrono::steady_clock::now();
  SuperNet net(space, as_candidates(ops), topology, derive_seed(seed, 1));
  return run_search(net, "operators", data, budget, hyper, seed, sink, t0);
}

Genotype direct_replace(const Genotype& topology, OperatorKind op) {
  validate_genotype(topology);
  if (op == OperatorKind::Zero) throw DataError("direct_replace: cannot replace with 'none'");
  return relabel(topology, op);
}

PhaseResult darts_baseline_search(const Dataset& data, const SpaceConfig& space,
                                  const std::vector<OperatorKind>& ops,
                                  const SearchBudget& budget, const SearchHyper& hyper,
                                  std::uint64_t seed, const TraceSink* sink) {
  budget.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SuperNet net(space, as_candidates(ops), derive_seed(seed, 1));
  return run_search(net, "darts", data, budget, hyper, seed, sink, t0);
}

// -- evaluation -----------------------------------------------------------------

namespace {

struct Scores {
  double loss = 0.0;
  double acc = 0.0;
};

Scores score(Network& net, const Dataset& data, std::span<const int> indices, int batch_size) {
  Scores s;
  if (indices.empty()) return s;
  std::int64_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(indices.size() - start, static_cast<std::size_t>(batch_size));
    const Batch b = make_batch(data, indices.subspan(start, count));
    Tape tape(false);
    Var logits = net.forward(tape, b.images, false);
    const Tensor& z = logits.value();
    const std::int64_t k = z.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = z.ptr() + static_cast<std::int64_t>(i) * k;
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      correct += (best == b.labels[i]);
    }
    loss_sum += cross_entropy(logits, b.labels).value().item() * static_cast<double>(count);
  }
  s.acc = static_cast<double>(correct) / static_cast<double>(indices.size());
  s.loss = loss_sum / static_cast<double>(indices.size());
  return s;
}

}  // namespace

double accuracy(Network& net, const Dataset& data, std::span<const int> indices, int batch_size) {
  return score(net, data, indices, batch_size).acc;
}

EvalReport evaluate_architecture(const Genotype& g, const Dataset& data, const SpaceConfig& space,
                                 const EvalConfig& cfg, std::uint64_t seed,
                                 const TraceSink* sink) {
  validate_genotype(g);
  check_data(data, space);
  if (cfg.epochs < 0) throw DataError("eval.epochs must be >= 0");
  if (cfg.batch_size < 1) throw DataError("eval.batch_size must be >= 1");
  if (data.eval_train.empty() || data.test.empty()) {
    throw DataError("evaluation: empty eval-train or test split");
  }
  const auto t0 = std::chrono::steady_clock::now();
  Network net(g, space, derive_seed(seed, 4), true);
  Optimizer opt(net.parameters(), cfg.opt);
  EvalReport rep;
  rep.parameters = net.parameter_count();

  const auto n = static_cast<std::int64_t>(data.eval_train.size());
  const std::int64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = per_epoch * cfg.epochs;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  auto emit = [&](const EpochRecord& e) {
    rep.epochs.push_back(e);
    if (sink) {
      sink->record(json{{"run", sink->run_id},
                        {"phase", "eval"},
                        {"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_acc", e.train_acc},
                        {"val_acc", e.val_acc},
                        {"test_acc", e.test_acc}}
                       .dump());
    }
  };
  auto measure = [&](int epoch, double train_loss) {
    EpochRecord e;
    e.epoch = epoch;
    const Scores tr = score(net, data, data.eval_train, 256);
    e.train_loss = epoch == 0 ? tr.loss : train_loss;
    e.train_acc = tr.acc;
    e.val_acc = score(net, data, data.search_val, 256).acc;
    e.test_acc = score(net, data, data.test, 256).acc;
    emit(e);
  };

  measure(0, 0.0);
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(data.eval_train, derive_seed(seed, 5000 + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    for (std::int64_t b = 0; b < per_epoch; ++b, ++step) {
      const auto idx = take(order, static_cast<std::size_t>(b) * bs, bs);
      const Batch batch = make_batch(data, idx);
      opt.set_lr(cosine_lr(cfg.opt.lr, cfg.lr_min, step, total));
      opt.zero_grad();
      Tape tape;
      Var loss = cross_entropy(net.forward(tape, batch.images, true), batch.labels);
      loss_sum += loss_value(loss, "evaluation training") * static_cast<double>(idx.size());
      tape.backward(loss);
      opt.step();
    }
    measure(epoch, loss_sum / static_cast<double>(n));
  }
  const auto& last = rep.epochs.back();
  rep.train_acc = last.train_acc;
  rep.val_acc = last.val_acc;
  rep.test_acc = last.test_acc;
  rep.seconds = seconds_since(t0);
  if (sink) sink->timing("eval", rep.seconds);
  return rep;
}

// -- diagnostics hook -----------------------------------------------------------

EigenRecord arch_hessian_eigenvalue(SuperNet& net, const Batch& val, int iters, double tol,
                                    std::uint64_t seed) {
  auto arch = net.arch_parameters();
  std::vector<double> theta0;
  for (auto* p : arch) theta0.insert(theta0.end(), p->value().vec().begin(), p->value().vec().end());
  std::vector<Parameter*> others = net.kernel_parameters();
  for (auto* p : net.scaffold_parameters()) others.push_back(p);
  FreezeGuard hold(others);

  auto load = [&arch](std::span<const double> theta) {
    std::size_t k = 0;
    for (auto* p : arch)
      for (auto& v : p->value().data()) v = theta[k++];
  };
  GradientFn grad = [&](std::span<const double> theta) {
    load(theta);
    for (auto* p : arch) p->zero_grad();
    Tape tape;
    Var loss = cross_entropy(net.forward(tape, val.images, true), val.labels);
    loss_value(loss, "hessian probe");
    tape.backward(loss);
    std::vector<double> g;
    g.reserve(theta.size());
    for (auto* p : arch) g.insert(g.end(), p->grad().vec().begin(), p->grad().vec().end());
    return g;
  };
  EigenResult res;
  try {
    res = hessian_max_eigenvalue(grad, theta0, iters, tol, seed);
  } catch (...) {
    load(theta0);
    for (auto* p : arch) p->zero_grad();
    throw;
  }
  load(theta0);
  for (auto* p : arch) p->zero_grad();
  EigenRecord e;
  e.value = res.value;
  e.iterations = res.iterations;
  e.converged = res.converged;
  return e;
}

}  // namespace ftso
