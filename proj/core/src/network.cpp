#include "ftso/network.hpp"

#include <cmath>

#include "ftso/error.hpp"
#include "ftso/seed.hpp"

namespace ftso {

Network::Network(const Genotype& g, const SpaceConfig& cfg, std::uint64_t seed, bool affine)
    : cfg_(cfg), affine_(affine), declared_(g) {
  cfg_.validate();
  validate_genotype(g);
  sort_edges(declared_.normal);
  sort_edges(declared_.reduce);
  if (g.nodes() != cfg_.nodes) {
    throw DataError("genotype uses nodes up to " + std::to_string(g.nodes() - 2) +
                    ", space has " + std::to_string(cfg_.nodes) + " nodes per cell");
  }
  std::mt19937_64 rng(derive_seed(seed, 0xe7a1));
  const std::int64_t c_stem = static_cast<std::int64_t>(cfg_.stem_multiplier) * cfg_.init_channels;
  stem_conv_ = ConvUnit(cfg_.in_channels, c_stem, 3, Conv2dOptions{cfg_.stem_stride, 1, 1, 1},
                        false, rng);
  stem_bn_ = BatchNormUnit(c_stem, affine_);
  std::int64_t c_pp = c_stem, c_p = c_stem, c = cfg_.init_channels;
  bool reduction_prev = false;
  for (int i = 0; i < cfg_.cells; ++i) {
    Cell cell;
    cell.reduction = cfg_.is_reduction(i);
    if (cell.reduction) c *= 2;
    cell.factorized = reduction_prev;
    if (reduction_prev) {
      cell.pre0_reduce = FactorizedReduceUnit(c_pp, c, affine_, rng);
    } else {
      cell.pre0 = ReluConvBn(c_pp, c, 1, 1, 0, affine_, rng);
    }
    cell.pre1 = ReluConvBn(c_p, c, 1, 1, 0, affine_, rng);
    std::vector<GenotypeEdge> edges = cell.reduction ? g.reduce : g.normal;
    sort_edges(edges);
    for (const auto& e : edges) {
      const int stride = (cell.reduction && e.src < 2) ? 2 : 1;
      cell.edges.push_back({e.src, e.dst, make_operator(e.op, c, c, stride, affine_, rng)});
    }
    cells_.push_back(std::move(cell));
    reduction_prev = cfg_.is_reduction(i);
    c_pp = c_p;
    c_p = static_cast<std::int64_t>(cfg_.nodes - 3) * c;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_p));
  classifier_w_ = Parameter(Tensor::uniform({c_p, cfg_.num_classes}, rng, -bound, bound),
                            "classifier.weight");
  classifier_b_ = Parameter(Tensor({cfg_.num_classes}), "classifier.bias");
}

Var Network::forward(Tape& tape, const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("network: expected [N," + std::to_string(cfg_.in_channels) +
                     ",H,W] images, got " + shape_str(images.shape()));
  }
  Var x = tape.constant(images);
  Var s = stem_bn_.forward(stem_conv_.forward(x), training);
  Var s0 = s, s1 = s;
  for (auto& cell : cells_) {
    std::vector<Var> states;
    states.push_back(cell.factorized ? cell.pre0_reduce.forward(s0, training)
                                     : cell.pre0.forward(s0, training));
    states.push_back(cell.pre1.forward(s1, training));
    std::vector<Var> inter;
    for (std::size_t e = 0; e < cell.edges.size(); e += 2) {
      // Edges come in (dst, src) order, two per intermediate node.
      auto& a = cell.edges[e];
      auto& b = cell.edges[e + 1];
      Var node = add(a.op->forward(states[static_cast<std::size_t>(a.src)], training),
                     b.op->forward(states[static_cast<std::size_t>(b.src)], training));
      states.push_back(node);
      inter.push_back(node);
    }
    s0 = s1;
    s1 = concat_channels(inter);
  }
  Var pooled = global_avg_pool(s1);
  return add_row_bias(matmul(pooled, tape.param(classifier_w_)), tape.param(classifier_b_));
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (auto& cell : cells_) {
    if (cell.factorized) {
      cell.pre0_reduce.collect(out);
    } else {
      cell.pre0.collect(out);
    }
    cell.pre1.collect(out);
    for (auto& e : cell.edges) e.op->collect_parameters(out);
  }
  out.push_back(&classifier_w_);
  out.push_back(&classifier_b_);
  return out;
}

std::int64_t Network::parameter_count() {
  std::int64_t n = 0;
  for (auto* p : parameters()) n += static_cast<std::int64_t>(p->numel());
  return n;
}

std::int64_t Network::operator_parameter_count() {
  std::int64_t n = 0;
  for (auto& cell : cells_)
    for (auto& e : cell.edges) n += e.op->allocated_parameters();
  return n;
}

std::int64_t Network::scaffold_parameter_count() {
  return parameter_count() - operator_parameter_count();
}

Genotype Network::genotype() const {
  Genotype g;
  bool have_normal = false, have_reduce = false;
  for (const auto& cell : cells_) {
    auto& dst = cell.reduction ? g.reduce : g.normal;
    bool& have = cell.reduction ? have_reduce : have_normal;
    if (have) continue;
    for (const auto& e : cell.edges) {
      dst.push_back({e.src, e.dst, std::get<OperatorKind>(e.op->spec())});
    }
    have = true;
  }
  // A cell type absent from the stack keeps the edges it was given.
  if (!have_normal) g.normal = declared_.normal;
  if (!have_reduce) g.reduce = declared_.reduce;
  return g;
}

Network genotype_to_network(const Genotype& g, const SpaceConfig& cfg, std::uint64_t seed) {
  return Network(g, cfg, seed, true);
}

}  // namespace ftso
