#include <cmath>
#include <random>

#include "doctest.h"
#include "ftso/error.hpp"
#include "ftso/supernet.hpp"
#include "random_graphs.hpp"

using namespace ftso;

namespace {

std::vector<CandidateOp> all_ops() { return {kAllOperators.begin(), kAllOperators.end()}; }

SpaceConfig small_space() {
  SpaceConfig s;
  s.nodes = 5;
  s.cells = 3;
  s.init_channels = 4;
  s.stem_multiplier = 1;
  s.in_channels = 1;
  s.num_classes = 3;
  return s;
}

void check_derived(const Genotype& g, int nodes) {
  for (const auto* cell : {&g.normal, &g.reduce}) {
    std::vector<int> indeg(nodes, 0);
    for (const auto& e : *cell) {
      CHECK(e.src < e.dst);
      CHECK(e.op != OperatorKind::Zero);
      ++indeg[e.dst];
    }
    for (int j = 2; j < nodes - 1; ++j) CHECK(indeg[j] == 2);
  }
}

}  // namespace

TEST_CASE("edge count law") {
  for (int n = 4; n <= 10; ++n) {
    int pairs = 0;
    for (int j = 2; j < n - 1; ++j)
      for (int i = 0; i < j; ++i) ++pairs;
    auto edges = full_cell_edges(n);
    CHECK(static_cast<int>(edges.size()) == pairs);
    CHECK(static_cast<int>(edges.size()) == n * (n - 3) / 2);
    for (std::size_t e = 1; e < edges.size(); ++e)
      CHECK((edges[e - 1].dst < edges[e].dst ||
             (edges[e - 1].dst == edges[e].dst && edges[e - 1].src < edges[e].src)));
  }
  CHECK(full_cell_edges(7).size() == 14);
  CHECK(full_cell_edges(4).size() == 2);
}

TEST_CASE("operator instance counts for the three super-nets") {
  SpaceConfig s;
  s.nodes = 7;
  s.cells = 1;
  s.init_channels = 4;
  s.stem_multiplier = 1;
  s.reduction_positions = std::vector<int>{};
  SuperNet darts(s, all_ops(), 1);
  CHECK(darts.operator_instances_per_cell() == 112);
  SuperNet topo(s, {OperatorKind::SkipConnect}, 1);
  CHECK(topo.operator_instances_per_cell() == 14);
  Genotype pruned = derive_genotype(topo.arch());
  SuperNet oper(s, all_ops(), pruned, 1);
  CHECK(oper.operator_instances_per_cell() == 64);
}

TEST_CASE("skip-only super-net has no trainable kernel weights") {
  SuperNet net(small_space(), {OperatorKind::SkipConnect}, 3);
  CHECK(net.kernel_parameters().empty());
  for (auto& cell : net.cells()) CHECK(cell.operator_instances() == 5);
  SuperNet conv(small_space(), {OperatorKind::SepConv3x3}, 3);
  CHECK_FALSE(conv.kernel_parameters().empty());
}

TEST_CASE("arch parameters start at zero and p=1 has no active alpha") {
  SuperNet net(small_space(), all_ops(), 5);
  for (double v : net.arch().normal.alpha.value().data()) CHECK(v == 0.0);
  for (double v : net.arch().reduce.beta.value().data()) CHECK(v == 0.0);
  CHECK(net.arch().normal.alpha.value().shape() == Shape{5, 8});
  CHECK(net.arch_parameters().size() == 4);
  SuperNet skip(small_space(), {OperatorKind::SkipConnect}, 5);
  CHECK(skip.arch_parameters().size() == 2);
  CHECK(skip.arch().trainable_count() == 10);
}

TEST_CASE("mixed operator examples") {
  std::mt19937_64 rng(1);
  Tape t;
  Tensor xv = Tensor::randn({2, 4, 5, 5}, rng);
  Var x = t.input(xv);

  std::vector<std::unique_ptr<Operator>> skip;
  skip.push_back(make_operator(OperatorKind::SkipConnect, 4, 4, 1, false, rng));
  CHECK(mixed_op_forward(skip, x, t.input(Tensor::from({0.7})), ChannelMask::all(4), true).value() == xv);

  std::vector<std::unique_ptr<Operator>> ops;
  for (auto k : kAllOperators) ops.push_back(make_operator(k, 4, 4, 1, false, rng));
  Var mixed = mixed_op_forward(ops, x, t.input(Tensor({8}, 0.0)), ChannelMask::all(4), true);
  Tensor expect(xv.shape());
  for (auto& op : ops) {
    Tensor o = op->forward(x, true).value();
    for (std::size_t i = 0; i < o.numel(); ++i) expect[i] += 0.125 * o[i];
  }
  for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(mixed.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  std::vector<Var> outs;
  for (auto& op : ops) outs.push_back(op->forward(x, true));
  Var alpha = t.input(Tensor::randn({8}, rng));
  const Tensor merged = mixed_op_forward(ops, x, alpha, ChannelMask::all(4), true).value();
  CHECK(merged == weighted_sum(outs, softmax(alpha)).value());

  ChannelMask half = ChannelMask::make(4, 2, 9);
  std::vector<std::unique_ptr<Operator>> zero;
  zero.push_back(make_operator(OperatorKind::Zero, 2, 2, 1, false, rng));
  Tensor y = mixed_op_forward(zero, x, t.input(Tensor::from({0.0})), half, true).value();
  for (int c = 0; c < 4; ++c)
    for (int n = 0; n < 2; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) CHECK(y.at(n, c, h, w) == (half.bits[c] ? 0.0 : xv.at(n, c, h, w)));

  CHECK_THROWS_AS(mixed_op_forward(zero, x, t.input(Tensor::from({0.0})), ChannelMask::all(3), true), ShapeError);
  CHECK_THROWS_AS(mixed_op_forward(zero, x, t.input(Tensor::from({0.0, 1.0})), half, true), ShapeError);
}

TEST_CASE("channel masks") {
  for (int c : {1, 4, 7, 16})
    for (int k : {1, 2, 4}) {
      auto m = ChannelMask::make(c, k, 42);
      CHECK(static_cast<int>(m.selected.size()) == (c + k - 1) / k);
      auto again = ChannelMask::make(c, k, 42);
      CHECK(m.bits == again.bits);
    }
  CHECK(ChannelMask::make(8, 1, 3).full());
  SpaceConfig s = small_space();
  s.partial_channels = 3;
  CHECK_THROWS_AS(s.validate(), ShapeError);
}

TEST_CASE("node mixing") {
  Tape t;
  Var a = t.input(Tensor::from({1, 2})), b = t.input(Tensor::from({3, 6}));
  std::vector<Var> one{a};
  const Tensor single = node_forward(one, t.input(Tensor::from({4.2}))).value();
  CHECK(single == a.value());
  std::vector<Var> two{a, b};
  Tensor avg = node_forward(two, t.input(Tensor::from({0, 0}))).value();
  CHECK(avg[0] == doctest::Approx(2.0));
  CHECK(avg[1] == doctest::Approx(4.0));
  Tensor w = node_forward(two, t.input(Tensor::from({std::log(3.0), 0}))).value();
  CHECK(w[0] == doctest::Approx(0.75 * 1 + 0.25 * 3));
  std::vector<Var> none;
  CHECK_THROWS_AS(node_forward(none, t.input(Tensor::from({0}))), DataError);
}

TEST_CASE("derivation examples") {
  auto edges = full_cell_edges(5);  // node 2: {0,1}; node 3: {0,1,2}
  std::vector<CandidateOp> ops{OperatorKind::Zero, OperatorKind::SkipConnect, OperatorKind::SepConv3x3};
  ArchParams a = ArchParams::create(5, ops, edges, edges);
  for (CellArch* c : {&a.normal, &a.reduce}) {
    c->beta.value() = Tensor::from({0, 0, 0.5, 0.9, 0.1});
    for (int e = 0; e < 5; ++e) {
      c->alpha.value()[e * 3 + 0] = 5.0;
      c->alpha.value()[e * 3 + 1] = 1.0;
      c->alpha.value()[e * 3 + 2] = 0.9;
    }
  }
  Genotype g = derive_genotype(a);
  std::vector<GenotypeEdge> expect{{0, 2, OperatorKind::SkipConnect},
                                   {1, 2, OperatorKind::SkipConnect},
                                   {0, 3, OperatorKind::SkipConnect},
                                   {1, 3, OperatorKind::SkipConnect}};
  CHECK(g.normal == expect);

  for (CellArch* c : {&a.normal, &a.reduce}) c->alpha.value().fill(0.0);
  for (CellArch* c : {&a.normal, &a.reduce}) c->beta.value().fill(0.0);
  g = derive_genotype(a);
  CHECK(g.normal[2].src == 0);
  CHECK(g.normal[3].src == 1);
  CHECK(g.normal[0].op == OperatorKind::SkipConnect);
  CHECK_THROWS_AS(derive_genotype(a, 3), DataError);
}

TEST_CASE("derivation invariants on random architecture parameters") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    ArchParams a = testing::random_arch_params(s);
    Genotype g = derive_genotype(a);
    check_derived(g, a.nodes);
    CHECK_NOTHROW(validate_genotype(g));
    CHECK(derive_genotype(testing::transform_arch(a, [](double v) { return std::exp(v); })) == g);
    CHECK(derive_genotype(testing::transform_arch(a, [](double v) { return v * v * v + 3 * v - 1; })) == g);
  }
}

TEST_CASE("softmax weights sum to one") {
  std::mt19937_64 rng(8);
  Tape t;
  for (int i = 0; i < 20; ++i) {
    Tensor s = softmax(t.input(Tensor::randn({8}, rng, 3.0))).value();
    CHECK(std::abs(s.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("super-net forward shapes and cell outputs") {
  std::mt19937_64 rng(2);
  SpaceConfig s = small_space();
  SuperNet net(s, all_ops(), 11);
  Tape t;
  Var logits = net.forward(t, Tensor::randn({2, 1, 8, 8}, rng));
  CHECK(logits.shape() == Shape{2, 3});
  CHECK(net.cells().size() == 3);
  CHECK(net.cells()[1].reduction());
  for (auto& cell : net.cells()) CHECK(cell.last_nodes().size() == 2);
  t.backward(sum(logits));
  for (auto* p : net.arch_parameters()) CHECK(p->grad().max_abs() > 0.0);
}

TEST_CASE("partial channels change only the searched channels") {
  std::mt19937_64 rng(4);
  SpaceConfig s = small_space();
  s.partial_channels = 2;
  SuperNet net(s, {OperatorKind::SepConv3x3, OperatorKind::MaxPool3x3}, 12);
  Tape t;
  CHECK(net.forward(t, Tensor::randn({2, 1, 8, 8}, rng)).shape() == Shape{2, 3});
  SuperNet full(small_space(), {OperatorKind::SepConv3x3, OperatorKind::MaxPool3x3}, 12);
  CHECK(net.kernel_parameters().size() == full.kernel_parameters().size());
  std::int64_t a = 0, b = 0;
  for (auto* p : net.kernel_parameters()) a += p->numel();
  for (auto* p : full.kernel_parameters()) b += p->numel();
  CHECK(a < b);
}
