#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ftso/autograd.hpp"
#include "ftso/genotype.hpp"
#include "ftso/ops.hpp"

namespace ftso {

struct SpaceConfig {
  int nodes = 7;  // 2 inputs, nodes-3 intermediates, 1 output
  int cells = 5;
  std::optional<std::vector<int>> reduction_positions;  // default: cells/3, 2*cells/3
  int init_channels = 16;
  int stem_multiplier = 3;
  int stem_stride = 1;
  int partial_channels = 1;  // K
  int in_channels = 3;
  int num_classes = 10;
  double arch_init_noise = 0.0;  // stddev of seeded noise added to alpha/beta; 0 = exact zeros

  void validate() const;
  int intermediate_nodes() const { return nodes - 3; }
  std::vector<int> reductions() const;
  bool is_reduction(int cell) const;
};

struct EdgeKey {
  int src = 0;
  int dst = 0;
  friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

// All (i, j) pairs with j intermediate and i < j, sorted by (dst, src).
std::vector<EdgeKey> full_cell_edges(int nodes);
std::vector<EdgeKey> genotype_edges(const std::vector<GenotypeEdge>& cell);

struct CellArch {
  std::vector<EdgeKey> edges;
  Parameter alpha;  // [E, p]
  Parameter beta;   // [E]
};

struct ArchParams {
  std::vector<CandidateOp> candidates;
  int nodes = 0;
  CellArch normal;
  CellArch reduce;

  static ArchParams create(int nodes, std::vector<CandidateOp> candidates,
                           std::vector<EdgeKey> normal_edges,
                           std::vector<EdgeKey> reduce_edges,
                           double noise_stddev = 0.0, std::uint64_t seed = 0);

  // alpha is a search variable only when there is a choice to make.
  bool alpha_active() const { return candidates.size() > 1; }
  std::vector<Parameter*> trainable();
  std::int64_t trainable_count() const;
  int p() const { return static_cast<int>(candidates.size()); }
};

struct ChannelMask {
  std::vector<std::uint8_t> bits;
  std::vector<int> selected;  // indices of set bits, ascending

  static ChannelMask all(int channels);
  // ceil(channels / K) set bits, chosen by a seeded shuffle.
  static ChannelMask make(int channels, int k, std::uint64_t seed);
  int channels() const { return static_cast<int>(bits.size()); }
  bool full() const { return selected.size() == bits.size(); }
};

// sum_o softmax(alpha_row)_o * o(S*x) + (1-S)*x. Operators must have been
// built for |S| channels. At stride 2 the bypass channels are max-pooled 2x2.
Var mixed_op_forward(std::span<const std::unique_ptr<Operator>> ops, Var x,
                     Var alpha_row, const ChannelMask& mask, bool training);

// sum_i softmax(beta)_i * inputs[i]
Var node_forward(std::span<const Var> inputs, Var beta);

// Per intermediate node keep the `retain` in-edges with largest beta (ties:
// lower source index), then give each kept edge its largest-alpha operator
// other than "none" (ties: candidate order).
Genotype derive_genotype(const ArchParams& arch, int retain = 2);

// One searchable cell body: edges with candidate operators and node mixing.
// Inputs s0, s1 must already carry `channels` channels.
class SearchCell {
 public:
  SearchCell(int nodes, std::vector<EdgeKey> edges,
             const std::vector<CandidateOp>& candidates, std::int64_t channels,
             bool reduction, int k, std::uint64_t seed, std::mt19937_64& rng);

  // alpha: [E, p] (ignored and may be invalid when p == 1); beta: [E].
  // Returns the concatenated intermediate nodes.
  Var forward(Var s0, Var s1, Var alpha, Var beta, bool training);
  // Intermediate node outputs of the last forward (in node order).
  const std::vector<Var>& last_nodes() const { return last_nodes_; }

  std::int64_t operator_instances() const;
  std::int64_t kernel_parameter_count();
  void collect_kernel(std::vector<Parameter*>& out);
  // fixed = true: parameters of parameter-free kinds (the factorized reduce
  // behind a stride-2 skip); fixed = false: all others.
  void collect_kernel(std::vector<Parameter*>& out, bool fixed);
  const std::vector<EdgeKey>& edges() const { return edges_; }
  std::int64_t channels() const { return channels_; }
  bool reduction() const { return reduction_; }
  int nodes() const { return nodes_; }

 private:
  struct Edge {
    EdgeKey key;
    std::vector<std::unique_ptr<Operator>> ops;
    ChannelMask mask;
  };
  int nodes_;
  std::vector<EdgeKey> edges_;
  std::vector<Edge> edge_ops_;
  std::vector<std::pair<int, int>> in_range_;  // per intermediate node: first edge, count
  std::int64_t channels_;
  bool reduction_;
  int k_;
  int p_;
  std::vector<Var> last_nodes_;
};

// Stem -> cells (shared arch params per cell type) -> global pool -> linear.
class SuperNet {
 public:
  // Every candidate edge of the cell space.
  SuperNet(const SpaceConfig& cfg, std::vector<CandidateOp> candidates,
           std::uint64_t seed);
  // Only the edges retained by a pruned topology.
  SuperNet(const SpaceConfig& cfg, std::vector<CandidateOp> candidates,
           const Genotype& topology, std::uint64_t seed);

  Var forward(Tape& tape, const Tensor& images, bool training = true);

  ArchParams& arch() { return arch_; }
  const ArchParams& arch() const { return arch_; }
  const SpaceConfig& config() const { return cfg_; }
  std::vector<SearchCell>& cells() { return cells_; }

  std::vector<Parameter*> arch_parameters() { return arch_.trainable(); }
  // Searchable operator weights. The factorized reduce behind a stride-2 skip
  // is frozen at its initial values so skip and pooling stay weight-free
  // during search.
  std::vector<Parameter*> kernel_parameters();
  std::vector<Parameter*> scaffold_parameters();
  // Weights the w-step updates: kernels, plus the scaffold unless frozen.
  std::vector<Parameter*> weight_parameters();

  void set_scaffold_frozen(bool frozen);
  bool scaffold_frozen() const { return scaffold_frozen_; }

  // Operator instances in the first cell of the given type.
  std::int64_t operator_instances_per_cell(bool reduction = false) const;

 private:
  void build(std::vector<EdgeKey> normal_edges, std::vector<EdgeKey> reduce_edges,
             std::uint64_t seed);

  SpaceConfig cfg_;
  ArchParams arch_;
  ConvUnit stem_conv_;
  BatchNormUnit stem_bn_;
  struct Preprocess {
    bool factorized = false;
    FactorizedReduceUnit reduce;
    ReluConvBn plain;
  };
  std::vector<Preprocess> pre0_;
  std::vector<ReluConvBn> pre1_;
  std::vector<SearchCell> cells_;
  Parameter classifier_w_;
  Parameter classifier_b_;
  bool scaffold_frozen_ = false;
};

}  // namespace ftso
