#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ftso/ops.hpp"

namespace ftso {

struct GenotypeEdge {
  int src = 0;
  int dst = 0;
  OperatorKind op = OperatorKind::SkipConnect;

  friend bool operator==(const GenotypeEdge&, const GenotypeEdge&) = default;
};

// Discrete cell description. Nodes 0 and 1 are the cell inputs, intermediate
// nodes start at 2; edges are kept sorted by (dst, src).
struct Genotype {
  std::vector<GenotypeEdge> normal;
  std::vector<GenotypeEdge> reduce;

  // Total node count n implied by the edges (inputs + intermediates + output).
  int nodes() const;

  friend bool operator==(const Genotype&, const Genotype&) = default;
};

void sort_edges(std::vector<GenotypeEdge>& edges);

// Throws DataError naming the first violated rule: unknown or "none"
// operator, duplicate edge, source not preceding target, in-degree other than
// two, or a gap in the intermediate node range. Both cell types must describe
// the same node count.
void validate_genotype(const Genotype& g);

// Text form:
//   genotype v1
//   normal:
//   0->2:sep_conv_3x3
//   ...
//   reduce:
//   ...
// Entries sorted by (dst, src), one per line, each line ending in '\n'.
std::string serialize_genotype(const Genotype& g);
// Accepts exactly the texts serialize_genotype produces for valid genotypes.
Genotype parse_genotype(std::string_view text);

Genotype read_genotype_file(const std::string& path);
void write_genotype_file(const std::string& path, const Genotype& g);

// Every edge relabelled with op; connectivity untouched.
Genotype relabel(const Genotype& g, OperatorKind op);

}  // namespace ftso
