#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftso/supernet.hpp"

namespace ftso {

// Closed-form cost of one cell body. FLOPs count one multiply-accumulate per
// convolution tap and one per element of every tensor summation.
struct CostReport {
  std::int64_t flops = 0;
  std::int64_t params = 0;
  std::int64_t instances = 0;
  std::string assumptions;
};

// Uniform k x k vanilla convolutions (with bias) on every candidate slot:
//   FLOPs  = 1/2 p n(n-3) H W C_out (k^2 C_in + 1)
//   params = 1/2 n(n-3) p (k^2 C_in + 1) C_out
CostReport darts_cost(std::int64_t n, std::int64_t p, std::int64_t k, std::int64_t c_in,
                      std::int64_t c_out, std::int64_t h_out, std::int64_t w_out);

// Skip-only cell: FLOPs = 1/2 n(n-3) H W C (summations), params = 1/2 n(n-3) (beta).
CostReport ftso_cost(std::int64_t n, std::int64_t c_in, std::int64_t h_in, std::int64_t w_in);

struct OperationCounts {
  std::int64_t darts = 0;            // 1/2 (n^2 - 3n) p
  std::int64_t topology = 0;         // 1/2 n(n-3)
  std::int64_t operator_search = 0;  // 2 (n-3) p

  friend bool operator==(const OperationCounts&, const OperationCounts&) = default;
};

OperationCounts operation_counts(std::int64_t n, std::int64_t p);

// Measured on a constructed cell body with batch size 1.
struct EnumeratedCost {
  std::int64_t flops = 0;
  std::int64_t kernel_params = 0;
  std::int64_t arch_params = 0;
  std::int64_t instances = 0;

  std::int64_t trainable() const { return kernel_params + arch_params; }
};

// Runs one forward of the cell on a counting tape with [1, C, H, W] inputs
// and counts the scalars the cell allocates. arch_params counts the beta
// entries of the cell plus alpha when there is more than one candidate.
EnumeratedCost enumerate_costs(SearchCell& cell, std::int64_t height, std::int64_t width);
// First normal cell of the super-net; inputs at that cell's resolution.
EnumeratedCost enumerate_costs(SuperNet& net, std::int64_t height, std::int64_t width);

// Stand-alone stride-1 cell body over every candidate edge.
SearchCell make_cost_cell(int nodes, const std::vector<CandidateOp>& candidates,
                          std::int64_t channels, std::uint64_t seed = 0);

}  // namespace ftso
