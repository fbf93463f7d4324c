#include <random>

#include "doctest.h"
#include "ftso/error.hpp"
#include "ftso/harness.hpp"
#include "ftso/network.hpp"

using namespace ftso;

namespace {

SpaceConfig space(int cells) {
  SpaceConfig s;
  s.nodes = 6;
  s.cells = cells;
  s.init_channels = 4;
  s.stem_multiplier = 2;
  s.in_channels = 2;
  s.num_classes = 5;
  return s;
}

std::int64_t expected_operator_params(const Genotype& g, const SpaceConfig& s) {
  std::int64_t total = 0, c = s.init_channels;
  for (int i = 0; i < s.cells; ++i) {
    const bool red = s.is_reduction(i);
    if (red) c *= 2;
    for (const auto& e : red ? g.reduce : g.normal)
      total += operator_param_count(e.op, c, c, red && e.src < 2 ? 2 : 1, true);
  }
  return total;
}

}  // namespace

TEST_CASE("parameter count is the sum of operator counts plus scaffold") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Genotype g = random_topology(6, kAllOperators[seed % 7], seed);
    for (auto& e : g.normal) e.op = kAllOperators[(e.src + e.dst + seed) % 7];
    SpaceConfig s = space(3);
    Network net(g, s, seed);
    CHECK(net.operator_parameter_count() == expected_operator_params(g, s));
    CHECK(net.parameter_count() == net.operator_parameter_count() + net.scaffold_parameter_count());
    std::int64_t allocated = 0;
    for (auto* p : net.parameters()) allocated += static_cast<std::int64_t>(p->numel());
    CHECK(allocated == net.parameter_count());
    CHECK(net.genotype() == g);
  }
}

TEST_CASE("forward shapes in training and inference") {
  std::mt19937_64 rng(1);
  Genotype g = random_topology(6, OperatorKind::SepConv3x3, 2);
  Network net(g, space(3), 3);
  Tensor x = Tensor::randn({3, 2, 8, 8}, rng);
  for (bool training : {true, false}) {
    Tape t(training);
    CHECK(net.forward(t, x, training).shape() == Shape{3, 5});
  }
  Tape t;
  CHECK_THROWS_AS(net.forward(t, Tensor({1, 3, 8, 8}), true), ShapeError);
}

TEST_CASE("single all-skip cell only mixes the stem output") {
  SpaceConfig s = space(1);
  s.reduction_positions = std::vector<int>{};
  Genotype g = random_topology(6, OperatorKind::SkipConnect, 4);
  Network net(g, s, 5);
  CHECK(net.operator_parameter_count() == 0);
  std::mt19937_64 rng(2);
  Tape t;
  Var y = net.forward(t, Tensor::randn({2, 2, 6, 6}, rng), true);
  CHECK(y.value().all_finite());
}

TEST_CASE("rejects genotypes that do not fit the space") {
  Genotype g = random_topology(5, OperatorKind::SkipConnect, 1);
  CHECK_THROWS_AS(Network(g, space(2), 0), DataError);
  Genotype bad = random_topology(6, OperatorKind::SkipConnect, 1);
  bad.normal[0].op = OperatorKind::Zero;
  CHECK_THROWS_AS(Network(bad, space(2), 0), DataError);
}

TEST_CASE("construction is seeded") {
  Genotype g = random_topology(6, OperatorKind::DilConv3x3, 9);
  Network a(g, space(2), 7), b(g, space(2), 7);
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({2, 2, 8, 8}, rng);
  Tape ta, tb;
  CHECK(a.forward(ta, x, true).value() == b.forward(tb, x, true).value());
}
