#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ftso/genotype.hpp"
#include "ftso/supernet.hpp"

namespace ftso {

// Discrete stacked-cell network for a genotype. Every intermediate node is the
// plain sum of its two incoming operator outputs.
class Network {
 public:
  Network(const Genotype& g, const SpaceConfig& cfg, std::uint64_t seed, bool affine = true);

  Var forward(Tape& tape, const Tensor& images, bool training);

  std::vector<Parameter*> parameters();
  std::int64_t parameter_count();
  // Scalars held by edge operators only.
  std::int64_t operator_parameter_count();
  // Scalars held by stem, preprocessing and classifier.
  std::int64_t scaffold_parameter_count();

  // Edge list read back from the built cells.
  Genotype genotype() const;
  const SpaceConfig& config() const { return cfg_; }

 private:
  struct CellEdge {
    int src;
    int dst;
    std::unique_ptr<Operator> op;
  };
  struct Cell {
    bool reduction = false;
    bool factorized = false;
    FactorizedReduceUnit pre0_reduce;
    ReluConvBn pre0;
    ReluConvBn pre1;
    std::vector<CellEdge> edges;  // sorted by (dst, src)
  };

  SpaceConfig cfg_;
  bool affine_;
  Genotype declared_;
  ConvUnit stem_conv_;
  BatchNormUnit stem_bn_;
  std::vector<Cell> cells_;
  Parameter classifier_w_;
  Parameter classifier_b_;
};

Network genotype_to_network(const Genotype& g, const SpaceConfig& cfg, std::uint64_t seed);

}  // namespace ftso
