#include "ftso/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ftso/error.hpp"
#include "ftso/seed.hpp"

namespace ftso {

// -- space --------------------------------------------------------------------

void SpaceConfig::validate() const {
  if (nodes < 4) throw DataError("space.nodes must be >= 4, got " + std::to_string(nodes));
  if (cells < 1) throw DataError("space.cells must be >= 1");
  if (init_channels < 1) throw DataError("space.init_channels must be >= 1");
  if (stem_multiplier < 1) throw DataError("space.stem_multiplier must be >= 1");
  if (stem_stride != 1 && stem_stride != 2) throw DataError("space.stem_stride must be 1 or 2");
  if (in_channels < 1) throw DataError("space.in_channels must be >= 1");
  if (num_classes < 2) throw DataError("space.num_classes must be >= 2");
  if (partial_channels < 1) throw DataError("space.partial_channels must be >= 1");
  if (init_channels % partial_channels != 0) {
    throw ShapeError("partial-channel K=" + std::to_string(partial_channels) +
                     " does not divide the channel count " + std::to_string(init_channels));
  }
  if (!(arch_init_noise >= 0.0)) throw DataError("space.arch_init_noise must be >= 0");
  const auto red = reductions();
  for (std::size_t i = 0; i < red.size(); ++i) {
    if (red[i] < 0 || red[i] >= cells) {
      throw DataError("reduction position " + std::to_string(red[i]) + " outside [0, " +
                      std::to_string(cells) + ")");
    }
    if (i > 0 && red[i] <= red[i - 1]) {
      throw DataError("reduction positions must be strictly increasing");
    }
  }
}

std::vector<int> SpaceConfig::reductions() const {
  if (reduction_positions) return *reduction_positions;
  if (cells < 3) return {};
  return {cells / 3, 2 * cells / 3};
}

bool SpaceConfig::is_reduction(int cell) const {
  const auto red = reductions();
  return std::find(red.begin(), red.end(), cell) != red.end();
}

std::vector<EdgeKey> full_cell_edges(int nodes) {
  std::vector<EdgeKey> edges;
  for (int dst = 2; dst <= nodes - 2; ++dst)
    for (int src = 0; src < dst; ++src) edges.push_back({src, dst});
  return edges;
}

std::vector<EdgeKey> genotype_edges(const std::vector<GenotypeEdge>& cell) {
  std::vector<GenotypeEdge> sorted = cell;
  sort_edges(sorted);
  std::vector<EdgeKey> edges;
  edges.reserve(sorted.size());
  for (const auto& e : sorted) edges.push_back({e.src, e.dst});
  return edges;
}

// -- arch params ----------------------------------------------------------------

namespace {

CellArch make_cell_arch(std::vector<EdgeKey> edges, int p, const char* tag,
                        double noise, std::mt19937_64& rng) {
  CellArch c;
  const auto e = static_cast<std::int64_t>(edges.size());
  c.edges = std::move(edges);
  Tensor alpha = noise > 0.0 ? Tensor::randn({e, p}, rng, noise) : Tensor({e, p});
  Tensor beta = noise > 0.0 ? Tensor::randn({e}, rng, noise) : Tensor({e});
  c.alpha = Parameter(std::move(alpha), std::string(tag) + ".alpha");
  c.beta = Parameter(std::move(beta), std::string(tag) + ".beta");
  return c;
}

}  // namespace

ArchParams ArchParams::create(int nodes, std::vector<CandidateOp> candidates,
                              std::vector<EdgeKey> normal_edges,
                              std::vector<EdgeKey> reduce_edges, double noise_stddev,
                              std::uint64_t seed) {
  if (candidates.empty()) throw DataError("candidate operator set is empty");
  if (normal_edges.empty() || reduce_edges.empty()) throw DataError("cell has no edges");
  ArchParams a;
  a.nodes = nodes;
  a.candidates = std::move(candidates);
  std::mt19937_64 rng(derive_seed(seed, 0xa7c4));
  const int p = a.p();
  a.normal = make_cell_arch(std::move(normal_edges), p, "normal", noise_stddev, rng);
  a.reduce = make_cell_arch(std::move(reduce_edges), p, "reduce", noise_stddev, rng);
  return a;
}

std::vector<Parameter*> ArchParams::trainable() {
  std::vector<Parameter*> out;
  if (alpha_active()) {
    out.push_back(&normal.alpha);
    out.push_back(&reduce.alpha);
  }
  out.push_back(&normal.beta);
  out.push_back(&reduce.beta);
  return out;
}

std::int64_t ArchParams::trainable_count() const {
  std::int64_t n = static_cast<std::int64_t>(normal.beta.numel() + reduce.beta.numel());
  if (alpha_active()) n += static_cast<std::int64_t>(normal.alpha.numel() + reduce.alpha.numel());
  return n;
}

// -- masks ----------------------------------------------------------------------

ChannelMask ChannelMask::all(int channels) {
  ChannelMask m;
  m.bits.assign(static_cast<std::size_t>(channels), 1);
  m.selected.resize(static_cast<std::size_t>(channels));
  std::iota(m.selected.begin(), m.selected.end(), 0);
  return m;
}

ChannelMask ChannelMask::make(int channels, int k, std::uint64_t seed) {
  if (channels < 1 || k < 1) throw ShapeError("channel mask needs channels >= 1 and K >= 1");
  if (k == 1) return all(channels);
  std::vector<int> order(static_cast<std::size_t>(channels));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the mask does not depend on the
  // standard library's shuffle.
  for (int i = channels - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const int keep = (channels + k - 1) / k;
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());
  ChannelMask m;
  m.bits.assign(static_cast<std::size_t>(channels), 0);
  for (int c : order) m.bits[static_cast<std::size_t>(c)] = 1;
  m.selected = std::move(order);
  return m;
}

// -- mixing ---------------------------------------------------------------------

Var mixed_op_forward(std::span<const std::unique_ptr<Operator>> ops, Var x,
                     Var alpha_row, const ChannelMask& mask, bool training) {
  if (ops.empty()) throw DataError("mixed_op_forward: no operators");
  const Shape xs = x.shape();
  if (xs.size() != 4 || xs[1] != mask.channels()) {
    throw ShapeError("mixed_op_forward: mask over " + std::to_string(mask.channels()) +
                     " channels, input " + shape_str(xs));
  }
  const Shape& as = alpha_row.shape();
  if (as.size() != 1 || as[0] != static_cast<std::int64_t>(ops.size())) {
    throw ShapeError("mixed_op_forward: alpha row " + shape_str(as) + " for " +
                     std::to_string(ops.size()) + " operators");
  }
  const bool full = mask.full();
  Var in = full ? x : gather_channels(x, mask.selected);
  std::vector<Var> outs;
  outs.reserve(ops.size());
  for (const auto& op : ops) outs.push_back(op->forward(in, training));
  Var mixed = weighted_sum(outs, softmax(alpha_row));
  if (full) return mixed;
  const int stride = ops.front()->stride();
  Var bypass = stride == 1 ? x : max_pool2d(x, PoolOptions{2, 2, 0});
  return scatter_channels(bypass, mask.selected, mixed);
}

Var node_forward(std::span<const Var> inputs, Var beta) {
  if (inputs.empty()) throw DataError("node_forward: node has no predecessors");
  return weighted_sum(inputs, softmax(beta));
}

// -- derivation -----------------------------------------------------------------

namespace {

std::vector<GenotypeEdge> derive_cell(const CellArch& cell,
                                      const std::vector<CandidateOp>& candidates,
                                      int nodes, int retain, const char* tag) {
  const int p = static_cast<int>(candidates.size());
  std::vector<OperatorKind> kinds;
  for (const auto& c : candidates) {
    const auto* k = std::get_if<OperatorKind>(&c);
    if (!k) throw DataError("derive_genotype: candidate " + candidate_name(c) +
                            " has no genotype name");
    kinds.push_back(*k);
  }
  const auto& beta = cell.beta.value();
  const auto& alpha = cell.alpha.value();
  std::vector<GenotypeEdge> out;
  for (int dst = 2; dst <= nodes - 2; ++dst) {
    std::vector<int> in;
    for (int e = 0; e < static_cast<int>(cell.edges.size()); ++e)
      if (cell.edges[static_cast<std::size_t>(e)].dst == dst) in.push_back(e);
    if (static_cast<int>(in.size()) < retain) {
      throw DataError(std::string(tag) + " cell: node " + std::to_string(dst) + " has " +
                      std::to_string(in.size()) + " predecessors, cannot retain " +
                      std::to_string(retain));
    }
    std::stable_sort(in.begin(), in.end(), [&](int a, int b) {
      const int sa = cell.edges[static_cast<std::size_t>(a)].src;
      const int sb = cell.edges[static_cast<std::size_t>(b)].src;
      if (beta[static_cast<std::size_t>(a)] != beta[static_cast<std::size_t>(b)])
        return beta[static_cast<std::size_t>(a)] > beta[static_cast<std::size_t>(b)];
      return sa < sb;
    });
    in.resize(static_cast<std::size_t>(retain));
    for (int e : in) {
      int best = -1;
      for (int o = 0; o < p; ++o) {
        if (kinds[static_cast<std::size_t>(o)] == OperatorKind::Zero) continue;
        if (best < 0 || alpha[static_cast<std::size_t>(e * p + o)] >
                            alpha[static_cast<std::size_t>(e * p + best)])
          best = o;
      }
      if (best < 0) throw DataError("derive_genotype: only 'none' is available");
      const auto& key = cell.edges[static_cast<std::size_t>(e)];
      out.push_back({key.src, key.dst, kinds[static_cast<std::size_t>(best)]});
    }
  }
  sort_edges(out);
  return out;
}

}  // namespace

Genotype derive_genotype(const ArchParams& arch, int retain) {
  if (retain < 1) throw DataError("derive_genotype: retain must be >= 1");
  for (const auto* v : {&arch.normal.alpha.value(), &arch.reduce.alpha.value(),
                        &arch.normal.beta.value(), &arch.reduce.beta.value()}) {
    if (!v->all_finite()) throw NumericalError("derive_genotype: non-finite architecture parameter");
  }
  Genotype g;
  g.normal = derive_cell(arch.normal, arch.candidates, arch.nodes, retain, "normal");
  g.reduce = derive_cell(arch.reduce, arch.candidates, arch.nodes, retain, "reduce");
  return g;
}

// -- search cell ----------------------------------------------------------------

SearchCell::SearchCell(int nodes, std::vector<EdgeKey> edges,
                       const std::vector<CandidateOp>& candidates, std::int64_t channels,
                       bool reduction, int k, std::uint64_t seed, std::mt19937_64& rng)
    : nodes_(nodes), edges_(std::move(edges)), channels_(channels), reduction_(reduction),
      k_(k), p_(static_cast<int>(candidates.size())) {
  if (candidates.empty()) throw DataError("search cell: empty candidate set");
  if (k < 1 || channels % k != 0) {
    throw ShapeError("partial-channel K=" + std::to_string(k) +
                     " does not divide the channel count " + std::to_string(channels));
  }
  const std::int64_t c_op = channels / k;
  in_range_.assign(static_cast<std::size_t>(std::max(nodes - 3, 0)), {0, 0});
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto key = edges_[e];
    if (key.dst < 2 || key.dst > nodes - 2 || key.src < 0 || key.src >= key.dst) {
      throw DataError("search cell: edge " + std::to_string(key.src) + "->" +
                      std::to_string(key.dst) + " out of range for " + std::to_string(nodes) +
                      " nodes");
    }
    if (e > 0) {
      const auto prev = edges_[e - 1];
      if (key.dst < prev.dst || (key.dst == prev.dst && key.src <= prev.src)) {
        throw DataError("search cell: edges must be sorted by (dst, src) without repeats");
      }
    }
    auto& r = in_range_[static_cast<std::size_t>(key.dst - 2)];
    if (r.second == 0) r.first = static_cast<int>(e);
    ++r.second;
  }
  for (int j = 0; j < nodes - 3; ++j) {
    if (in_range_[static_cast<std::size_t>(j)].second == 0) {
      throw DataError("search cell: node " + std::to_string(j + 2) + " has no incoming edge");
    }
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    Edge edge;
    edge.key = edges_[e];
    const int stride = (reduction && edge.key.src < 2) ? 2 : 1;
    for (const auto& c : candidates) {
      edge.ops.push_back(make_operator(c, c_op, c_op, stride, false, rng));
    }
    edge.mask = ChannelMask::make(static_cast<int>(channels), k, derive_seed(seed, e));
    edge_ops_.push_back(std::move(edge));
  }
}

Var SearchCell::forward(Var s0, Var s1, Var alpha, Var beta, bool training) {
  std::vector<Var> states{s0, s1};
  last_nodes_.clear();
  const bool use_alpha = p_ > 1;
  for (int j = 0; j < nodes_ - 3; ++j) {
    const auto [first, count] = in_range_[static_cast<std::size_t>(j)];
    Var beta_j = slice_rows(beta, first, count);
    Var node;
    if (k_ == 1) {
      // One weighted sum over every (edge, operator) output; the weight of
      // operator o on edge e is softmax(beta_j)_e * softmax(alpha_e)_o.
      std::vector<Var> outs;
      outs.reserve(static_cast<std::size_t>(count * p_));
      for (int e = first; e < first + count; ++e) {
        Var x = states[static_cast<std::size_t>(edge_ops_[static_cast<std::size_t>(e)].key.src)];
        for (auto& op : edge_ops_[static_cast<std::size_t>(e)].ops)
          outs.push_back(op->forward(x, training));
      }
      Var w = softmax(beta_j);
      if (use_alpha) {
        Var wa = softmax(slice_rows(alpha, first, count));
        w = reshape(scale_rows(wa, w), {static_cast<std::int64_t>(count) * p_});
      }
      node = weighted_sum(outs, w);
    } else {
      std::vector<Var> f;
      f.reserve(static_cast<std::size_t>(count));
      for (int e = first; e < first + count; ++e) {
        auto& edge = edge_ops_[static_cast<std::size_t>(e)];
        Var x = states[static_cast<std::size_t>(edge.key.src)];
        Var row = use_alpha ? reshape(slice_rows(alpha, e, 1), {p_})
                            : zeros(*x.tape, {1});
        f.push_back(mixed_op_forward(edge.ops, x, row, edge.mask, training));
      }
      node = node_forward(f, beta_j);
    }
    states.push_back(node);
    last_nodes_.push_back(node);
  }
  return concat_channels(last_nodes_);
}

std::int64_t SearchCell::operator_instances() const {
  std::int64_t n = 0;
  for (const auto& e : edge_ops_) n += static_cast<std::int64_t>(e.ops.size());
  return n;
}

std::int64_t SearchCell::kernel_parameter_count() {
  std::vector<Parameter*> ps;
  collect_kernel(ps);
  std::int64_t n = 0;
  for (auto* p : ps) n += static_cast<std::int64_t>(p->numel());
  return n;
}

void SearchCell::collect_kernel(std::vector<Parameter*>& out) {
  for (auto& e : edge_ops_)
    for (auto& op : e.ops) op->collect_parameters(out);
}

void SearchCell::collect_kernel(std::vector<Parameter*>& out, bool fixed) {
  for (auto& e : edge_ops_)
    for (auto& op : e.ops) {
      const auto* kind = std::get_if<OperatorKind>(&op->spec());
      if ((kind && is_parameter_free(*kind)) == fixed) op->collect_parameters(out);
    }
}

// -- super-net ------------------------------------------------------------------

SuperNet::SuperNet(const SpaceConfig& cfg, std::vector<CandidateOp> candidates,
                   std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  arch_.candidates = std::move(candidates);
  build(full_cell_edges(cfg_.nodes), full_cell_edges(cfg_.nodes), seed);
}

SuperNet::SuperNet(const SpaceConfig& cfg, std::vector<CandidateOp> candidates,
                   const Genotype& topology, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  validate_genotype(topology);
  if (topology.nodes() != cfg_.nodes) {
    throw DataError("topology describes " + std::to_string(topology.nodes()) +
                    " nodes per cell, space has " + std::to_string(cfg_.nodes));
  }
  arch_.candidates = std::move(candidates);
  build(genotype_edges(topology.normal), genotype_edges(topology.reduce), seed);
}

void SuperNet::build(std::vector<EdgeKey> normal_edges, std::vector<EdgeKey> reduce_edges,
                     std::uint64_t seed) {
  arch_ = ArchParams::create(cfg_.nodes, arch_.candidates, normal_edges, reduce_edges,
                             cfg_.arch_init_noise, seed);
  std::mt19937_64 rng(derive_seed(seed, 0x5eed));
  const std::int64_t c_stem = static_cast<std::int64_t>(cfg_.stem_multiplier) * cfg_.init_channels;
  stem_conv_ = ConvUnit(cfg_.in_channels, c_stem, 3, Conv2dOptions{cfg_.stem_stride, 1, 1, 1},
                        false, rng);
  stem_bn_ = BatchNormUnit(c_stem, false);
  std::int64_t c_pp = c_stem, c_p = c_stem, c = cfg_.init_channels;
  bool reduction_prev = false;
  const std::int64_t multiplier = cfg_.nodes - 3;
  for (int i = 0; i < cfg_.cells; ++i) {
    const bool reduction = cfg_.is_reduction(i);
    if (reduction) c *= 2;
    Preprocess p0;
    p0.factorized = reduction_prev;
    if (reduction_prev) {
      p0.reduce = FactorizedReduceUnit(c_pp, c, false, rng);
    } else {
      p0.plain = ReluConvBn(c_pp, c, 1, 1, 0, false, rng);
    }
    pre0_.push_back(std::move(p0));
    pre1_.emplace_back(c_p, c, 1, 1, 0, false, rng);
    cells_.emplace_back(cfg_.nodes, reduction ? reduce_edges : normal_edges, arch_.candidates,
                        c, reduction, cfg_.partial_channels,
                        derive_seed(seed, 0x1000 + static_cast<std::uint64_t>(i)), rng);
    reduction_prev = reduction;
    c_pp = c_p;
    c_p = multiplier * c;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_p));
  classifier_w_ = Parameter(Tensor::uniform({c_p, cfg_.num_classes}, rng, -bound, bound),
                            "classifier.weight");
  classifier_b_ = Parameter(Tensor({cfg_.num_classes}), "classifier.bias");
  std::vector<Parameter*> fixed;
  for (auto& cell : cells_) cell.collect_kernel(fixed, true);
  for (auto* p : fixed) p->set_frozen(true);
}

Var SuperNet::forward(Tape& tape, const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("supernet: expected [N," + std::to_string(cfg_.in_channels) +
                     ",H,W] images, got " + shape_str(images.shape()));
  }
  Var x = tape.constant(images);
  Var s = stem_bn_.forward(stem_conv_.forward(x), training);
  const bool use_alpha = arch_.alpha_active();
  Var normal_alpha = use_alpha ? tape.param(arch_.normal.alpha) : Var{};
  Var reduce_alpha = use_alpha ? tape.param(arch_.reduce.alpha) : Var{};
  Var normal_beta = tape.param(arch_.normal.beta);
  Var reduce_beta = tape.param(arch_.reduce.beta);
  Var s0 = s, s1 = s;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    auto& p0 = pre0_[i];
    Var a = p0.factorized ? p0.reduce.forward(s0, training) : p0.plain.forward(s0, training);
    Var b = pre1_[i].forward(s1, training);
    const bool red = cells_[i].reduction();
    Var out = cells_[i].forward(a, b, red ? reduce_alpha : normal_alpha,
                                red ? reduce_beta : normal_beta, training);
    s0 = s1;
    s1 = out;
  }
  Var pooled = global_avg_pool(s1);
  return add_row_bias(matmul(pooled, tape.param(classifier_w_)), tape.param(classifier_b_));
}

std::vector<Parameter*> SuperNet::kernel_parameters() {
  std::vector<Parameter*> out;
  for (auto& c : cells_) c.collect_kernel(out, false);
  return out;
}

std::vector<Parameter*> SuperNet::scaffold_parameters() {
  std::vector<Parameter*> out;
  stem_conv_.collect(out);
  stem_bn_.collect(out);
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (pre0_[i].factorized) {
      pre0_[i].reduce.collect(out);
    } else {
      pre0_[i].plain.collect(out);
    }
    pre1_[i].collect(out);
  }
  out.push_back(&classifier_w_);
  out.push_back(&classifier_b_);
  return out;
}

std::vector<Parameter*> SuperNet::weight_parameters() {
  std::vector<Parameter*> out = kernel_parameters();
  if (!scaffold_frozen_) {
    for (auto* p : scaffold_parameters()) out.push_back(p);
  }
  return out;
}

void SuperNet::set_scaffold_frozen(bool frozen) {
  scaffold_frozen_ = frozen;
  for (auto* p : scaffold_parameters()) p->set_frozen(frozen);
}

std::int64_t SuperNet::operator_instances_per_cell(bool reduction) const {
  for (const auto& c : cells_)
    if (c.reduction() == reduction) return c.operator_instances();
  throw DataError(std::string("supernet has no ") + (reduction ? "reduction" : "normal") +
                  " cell");
}

}  // namespace ftso
