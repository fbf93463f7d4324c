#include <chrono>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "ftso/cost_model.hpp"
#include "ftso/engine.hpp"
#include "ftso/error.hpp"
#include "ftso/harness.hpp"

using namespace ftso;

namespace {

Dataset small_data(int samples = 160, int classes = 2) {
  DatasetSpec spec;
  spec.classes = classes;
  spec.samples = samples;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  spec.seed = 3;
  return load_dataset(spec);
}

SpaceConfig small_space(const Dataset& d, int nodes = 5) {
  SpaceConfig s;
  s.nodes = nodes;
  s.cells = 2;
  s.init_channels = 4;
  s.stem_multiplier = 1;
  s.in_channels = d.channels();
  s.num_classes = d.num_classes;
  return s;
}

SearchBudget iters(int n, int batch = 16) { return {BudgetUnit::Iterations, n, batch}; }

const std::vector<OperatorKind> kSkip{OperatorKind::SkipConnect};
const std::vector<OperatorKind> kAll(kAllOperators.begin(), kAllOperators.end());

}  // namespace

TEST_CASE("budget accounting") {
  CHECK(SearchBudget{BudgetUnit::Epochs, 2, 16}.total_steps(40) == 6);
  CHECK(SearchBudget{BudgetUnit::Iterations, 5, 16}.total_steps(40) == 5);
  CHECK_THROWS_AS((SearchBudget{BudgetUnit::Iterations, 0, 16}.validate()), DataError);
  CHECK_THROWS_AS((SearchBudget{BudgetUnit::Epochs, 1, 0}.validate()), DataError);

  Dataset d = small_data();
  auto r = topology_search(d, small_space(d), kSkip, iters(1), {}, 1);
  CHECK(r.arch_steps == 1);
  CHECK(r.trace.size() == 1);
  auto e = topology_search(d, small_space(d), kSkip, {BudgetUnit::Epochs, 1, 16}, {}, 1);
  CHECK(e.trace.size() == (d.search_train.size() + 15) / 16);
}

TEST_CASE("skip-only topology search updates only beta") {
  Dataset d = small_data();
  auto r = topology_search(d, small_space(d), kSkip, iters(3), {}, 2);
  CHECK(r.weight_scalars == 0);
  CHECK(r.weight_steps == 0);
  CHECK(r.arch_steps == 3);
  for (const auto& s : r.trace) {
    CHECK(std::isnan(s.train_loss));
    CHECK(std::isfinite(s.val_loss));
  }
  CHECK(r.arch.normal.alpha.value().numel() == 5);
  for (double v : r.arch.normal.alpha.value().data()) CHECK(v == 0.0);
  CHECK(r.arch.normal.beta.value().max_abs() > 0.0);
  CHECK_NOTHROW(validate_genotype(r.genotype));
  for (const auto& e : r.genotype.normal) CHECK(e.op == OperatorKind::SkipConnect);
}

TEST_CASE("search is deterministic") {
  Dataset d = small_data();
  auto a = topology_search(d, small_space(d), kSkip, iters(4), {}, 9);
  auto b = topology_search(d, small_space(d), kSkip, iters(4), {}, 9);
  CHECK(a.genotype == b.genotype);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].val_loss == b.trace[i].val_loss);
  CHECK(a.arch.normal.beta.value() == b.arch.normal.beta.value());
}

TEST_CASE("darts with only skip reduces to the topology phase") {
  Dataset d = small_data();
  auto t = topology_search(d, small_space(d), kSkip, iters(3), {}, 5);
  auto g = darts_baseline_search(d, small_space(d), kSkip, iters(3), {}, 5);
  CHECK(t.genotype == g.genotype);
  REQUIRE(t.trace.size() == g.trace.size());
  for (std::size_t i = 0; i < t.trace.size(); ++i) CHECK(t.trace[i].val_loss == g.trace[i].val_loss);
}

TEST_CASE("darts baseline step accounting") {
  Dataset d = small_data();
  auto r = darts_baseline_search(d, small_space(d), kAll, iters(1), {}, 5);
  CHECK(r.arch_steps == 1);
  CHECK(r.weight_steps == 1);
  CHECK(r.weight_scalars > 0);
  CHECK(std::isfinite(r.trace[0].train_loss));
  CHECK(r.operator_instances == 5 * 8);
}

TEST_CASE("operator search") {
  Dataset d = small_data();
  SpaceConfig s = small_space(d);
  Genotype topo = topology_search(d, s, kSkip, iters(2), {}, 1).genotype;

  auto one = operator_search(topo, d, s, {OperatorKind::DilConv3x3}, iters(2), {}, 1);
  CHECK(one.genotype == relabel(topo, OperatorKind::DilConv3x3));
  CHECK(one.genotype == direct_replace(topo, OperatorKind::DilConv3x3));

  SearchHyper frozen;
  frozen.arch.lr = 0.0;
  auto tie = operator_search(topo, d, s, kAll, iters(1), frozen, 1);
  CHECK(tie.genotype == relabel(topo, OperatorKind::SepConv3x3));
  CHECK(tie.operator_instances == 2 * (5 - 3) * 8);

  Genotype bad = topo;
  bad.normal.pop_back();
  CHECK_THROWS_AS(operator_search(bad, d, s, kAll, iters(1), {}, 1), DataError);
}

TEST_CASE("operator-phase instance count at seven nodes") {
  Dataset d = small_data();
  SpaceConfig s = small_space(d, 7);
  s.cells = 1;
  s.reduction_positions = std::vector<int>{};
  Genotype topo = random_topology(7, OperatorKind::SkipConnect, 3);
  auto r = operator_search(topo, d, s, kAll, iters(1, 8), {}, 1);
  CHECK(r.operator_instances == 64);
}

TEST_CASE("direct replacement") {
  Genotype topo = random_topology(7, OperatorKind::SkipConnect, 8);
  Genotype g = direct_replace(topo, OperatorKind::SepConv3x3);
  CHECK(g.normal.size() == 8);
  for (const auto& e : g.normal) CHECK(e.op == OperatorKind::SepConv3x3);
  CHECK(direct_replace(topo, OperatorKind::SkipConnect) == topo);
  CHECK_THROWS_AS(direct_replace(topo, OperatorKind::Zero), DataError);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 100; ++i) direct_replace(topo, OperatorKind::SepConv5x5);
  const double each = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 100;
  CHECK(each < 1e-3);
}

TEST_CASE("bilevel step") {
  Dataset d = small_data();
  SpaceConfig s = small_space(d);
  std::vector<int> idx(d.search_val.begin(), d.search_val.begin() + 16);
  Batch val = make_batch(d, idx);
  std::vector<int> tidx(d.search_train.begin(), d.search_train.begin() + 16);
  Batch train = make_batch(d, tidx);

  SUBCASE("zero learning rates leave parameters unchanged") {
    SuperNet net(s, {kAll.begin(), kAll.end()}, 4);
    net.set_scaffold_frozen(true);
    OptimizerConfig zero{OptimizerKind::Sgd, 0.0, 0.0};
    Optimizer a(net.arch_parameters(), zero), w(net.weight_parameters(), zero);
    std::vector<Tensor> before;
    for (auto* p : net.arch_parameters()) before.push_back(p->value());
    for (auto* p : net.weight_parameters()) before.push_back(p->value());
    auto rep = bilevel_step(net, a, w, train, val);
    CHECK(std::isfinite(rep.val_loss));
    CHECK(std::isfinite(rep.train_loss));
    std::size_t i = 0;
    for (auto* p : net.arch_parameters()) CHECK(p->value() == before[i++]);
    for (auto* p : net.weight_parameters()) CHECK(p->value() == before[i++]);
  }
  SUBCASE("skip-only net has no weights to touch") {
    SuperNet net(s, {OperatorKind::SkipConnect}, 4);
    net.set_scaffold_frozen(true);
    CHECK(net.weight_parameters().empty());
    Optimizer a(net.arch_parameters(), {}), w(net.weight_parameters(), {});
    auto rep = bilevel_step(net, a, w, train, val);
    CHECK(rep.arch_updated);
    CHECK_FALSE(rep.weight_updated);
  }
  SUBCASE("a small architecture step descends on a fixed batch") {
    SuperNet net(s, {OperatorKind::SepConv3x3, OperatorKind::MaxPool3x3, OperatorKind::SkipConnect}, 4);
    net.set_scaffold_frozen(true);
    Optimizer a(net.arch_parameters(), {OptimizerKind::Sgd, 1e-2, 0.0});
    Optimizer none({}, {});
    auto r1 = bilevel_step(net, a, none, train, val);
    auto r2 = bilevel_step(net, a, none, train, val);
    CHECK(r2.val_loss <= r1.val_loss);
  }
  SUBCASE("a non-finite loss aborts") {
    SuperNet net(s, {OperatorKind::SkipConnect}, 4);
    net.arch().normal.beta.value()[0] = std::nan("");
    net.arch().reduce.beta.value()[0] = std::nan("");
    Optimizer a(net.arch_parameters(), {}), w({}, {});
    CHECK_THROWS_AS(bilevel_step(net, a, w, train, val), NumericalError);
  }
}

TEST_CASE("abort is recorded in the trace") {
  Dataset d = small_data();
  SearchHyper h;
  h.arch.kind = OptimizerKind::Sgd;
  h.arch.lr = 1e300;
  h.weight.lr = 1e300;
  std::ostringstream trace, timings;
  TraceSink sink{"r", &trace, &timings};
  CHECK_THROWS_AS(topology_search(d, small_space(d), {OperatorKind::SepConv3x3, OperatorKind::SkipConnect},
                                  iters(20), h, 1, &sink),
                  NumericalError);
  CHECK(trace.str().find("\"event\":\"abort\"") != std::string::npos);
}

TEST_CASE("cost dominance of the skip-only super-net") {
  SpaceConfig s;
  s.nodes = 7;
  s.cells = 1;
  s.init_channels = 16;
  s.stem_multiplier = 1;
  s.reduction_positions = std::vector<int>{};
  SuperNet skip(s, {OperatorKind::SkipConnect}, 1);
  SuperNet darts(s, {kAll.begin(), kAll.end()}, 1);
  std::int64_t skip_trainable = skip.arch().trainable_count(), darts_trainable = darts.arch().trainable_count();
  for (auto* p : skip.kernel_parameters()) skip_trainable += static_cast<std::int64_t>(p->numel());
  for (auto* p : darts.kernel_parameters()) darts_trainable += static_cast<std::int64_t>(p->numel());
  CHECK(skip_trainable == 2 * 14);
  CHECK(darts_trainable >= 1000 * skip_trainable);

  EnumeratedCost sc = enumerate_costs(skip, 8, 8), dc = enumerate_costs(darts, 8, 8);
  CHECK(sc.flops * 100 <= dc.flops);
}

TEST_CASE("hessian eigenvalues are emitted per checkpoint") {
  Dataset d = small_data();
  SearchHyper h;
  h.hessian_every = 2;
  h.hessian_iters = 10;
  auto r = topology_search(d, small_space(d), kSkip, iters(4), h, 1);
  REQUIRE(r.eigen.size() == 2);
  for (const auto& e : r.eigen) {
    CHECK(std::isfinite(e.value));
    CHECK(e.value >= 0.0);
  }
  CHECK(r.eigen[1].step == 4);
}

TEST_CASE("evaluation") {
  DatasetSpec spec;
  spec.classes = 2;
  spec.samples = 1000;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.noise = 0.5;
  spec.seed = 1;
  Dataset d = load_dataset(spec);
  SpaceConfig s = small_space(d);
  Genotype g = direct_replace(random_topology(5, OperatorKind::SkipConnect, 1), OperatorKind::SepConv3x3);

  SUBCASE("untrained network is at chance") {
    EvalConfig c;
    c.epochs = 0;
    auto r = evaluate_architecture(g, d, s, c, 1);
    CHECK(r.epochs.size() == 1);
    CHECK(std::abs(r.test_acc - 0.5) <= 0.1);
  }
  SUBCASE("separable data is learned, and a linear model learns it too") {
    // linear baseline on flattened pixels
    const std::int64_t f = 36;
    Parameter w(Tensor({f, 2}), "w"), b(Tensor({2}), "b");
    Optimizer opt({&w, &b}, {OptimizerKind::Momentum, 0.05, 0.9});
    for (int epoch = 0; epoch < 20; ++epoch)
      for (std::size_t i = 0; i < d.eval_train.size(); i += 32) {
        std::vector<int> idx(d.eval_train.begin() + static_cast<std::ptrdiff_t>(i),
                             d.eval_train.begin() + static_cast<std::ptrdiff_t>(std::min(i + 32, d.eval_train.size())));
        Batch bt = make_batch(d, idx);
        opt.zero_grad();
        Tape t;
        Var x = t.constant(bt.images.reshaped({bt.images.dim(0), f}));
        Var loss = cross_entropy(add_row_bias(matmul(x, t.param(w)), t.param(b)), bt.labels);
        t.backward(loss);
        opt.step();
      }
    Batch test = make_batch(d, d.test);
    Tape t(false);
    Tensor logits = add_row_bias(matmul(t.constant(test.images.reshaped({test.images.dim(0), f})), t.param(w)),
                                 t.param(b))
                        .value();
    int correct = 0;
    for (std::size_t i = 0; i < test.labels.size(); ++i)
      correct += (logits[2 * i + 1] > logits[2 * i]) == (test.labels[i] == 1);
    CHECK(static_cast<double>(correct) / static_cast<double>(test.labels.size()) >= 0.95);

    EvalConfig c;
    c.epochs = 20;
    auto r = evaluate_architecture(g, d, s, c, 1);
    CHECK(r.epochs.size() == 21);
    CHECK(r.test_acc >= 0.95);
  }
  SUBCASE("evaluation is deterministic") {
    EvalConfig c;
    c.epochs = 2;
    auto a = evaluate_architecture(g, d, s, c, 4), b = evaluate_architecture(g, d, s, c, 4);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
      CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
      CHECK(a.epochs[i].test_acc == b.epochs[i].test_acc);
    }
  }
  SUBCASE("class-count mismatch is rejected") {
    SpaceConfig wrong = s;
    wrong.num_classes = 3;
    CHECK_THROWS_AS(evaluate_architecture(g, d, wrong, {}, 1), DataError);
  }
}
