#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ftso/autograd.hpp"
#include "ftso/engine.hpp"
#include "ftso/supernet.hpp"

using namespace ftso;

namespace {

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  std::mt19937_64 rng(1);
  Tensor x = Tensor::randn({8, c, 16, 16}, rng);
  Tensor w = Tensor::randn({c, c, 3, 3}, rng, 0.1);
  Conv2dOptions opt;
  opt.padding = 1;
  std::int64_t flops = 0;
  for (auto _ : state) {
    Tape t;
    Var xv = t.input(x);
    Var wv = t.input(w);
    Var y = sum(conv2d(xv, wv, Var{}, opt));
    t.backward(y);
    flops = t.flops();
    benchmark::DoNotOptimize(t.grad(wv));
  }
  state.counters["forward_macs"] = static_cast<double>(flops);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

SpaceConfig bench_space() {
  SpaceConfig s;
  s.nodes = 7;
  s.cells = 3;
  s.init_channels = 8;
  s.stem_multiplier = 1;
  s.in_channels = 3;
  s.num_classes = 10;
  return s;
}

Batch random_batch(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  b.images = Tensor::randn({n, 3, 16, 16}, rng);
  std::uniform_int_distribution<int> cls(0, 9);
  for (int i = 0; i < n; ++i) b.labels.push_back(cls(rng));
  return b;
}

std::vector<CandidateOp> candidates(bool full) {
  if (!full) return {OperatorKind::SkipConnect};
  return {kAllOperators.begin(), kAllOperators.end()};
}

// range(0): 0 = topology super-net (skip only), 1 = all eight operators.
void BM_SuperNetForward(benchmark::State& state) {
  SuperNet net(bench_space(), candidates(state.range(0) != 0), 3);
  const Batch b = random_batch(16, 4);
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(net.forward(t, b.images, true).value());
  }
}
BENCHMARK(BM_SuperNetForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_BilevelStep(benchmark::State& state) {
  SuperNet net(bench_space(), candidates(state.range(0) != 0), 3);
  net.set_scaffold_frozen(true);
  Optimizer a(net.arch_parameters(), {});
  Optimizer w(net.weight_parameters(), {});
  const Batch train = random_batch(16, 5), val = random_batch(16, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bilevel_step(net, a, w, train, val));
  }
}
BENCHMARK(BM_BilevelStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
