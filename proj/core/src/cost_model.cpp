#include "ftso/cost_model.hpp"

#include "ftso/error.hpp"

namespace ftso {

namespace {

void require_positive(std::initializer_list<std::int64_t> values, const char* fn) {
  for (auto v : values) {
    if (v < 1) throw DataError(std::string(fn) + ": arguments must be positive");
  }
}

// 1/2 n(n-3), zero for n <= 3.
std::int64_t cell_edges(std::int64_t n) { return n <= 3 ? 0 : n * (n - 3) / 2; }

}  // namespace

CostReport darts_cost(std::int64_t n, std::int64_t p, std::int64_t k, std::int64_t c_in,
                      std::int64_t c_out, std::int64_t h_out, std::int64_t w_out) {
  require_positive({n, p, k, c_in, c_out, h_out, w_out}, "darts_cost");
  const std::int64_t e = cell_edges(n);
  const std::int64_t per_op = k * k * c_in + 1;
  CostReport r;
  r.flops = p * e * h_out * w_out * c_out * per_op;
  r.params = e * p * per_op * c_out;
  r.instances = e * p;
  r.assumptions = "every candidate is a vanilla convolution with bias";
  return r;
}

CostReport ftso_cost(std::int64_t n, std::int64_t c_in, std::int64_t h_in, std::int64_t w_in) {
  require_positive({n, c_in, h_in, w_in}, "ftso_cost");
  const std::int64_t e = cell_edges(n);
  CostReport r;
  r.flops = e * h_in * w_in * c_in;
  r.params = e;
  r.instances = e;
  r.assumptions = "skip connection on every edge; parameters are the edge weights";
  return r;
}

OperationCounts operation_counts(std::int64_t n, std::int64_t p) {
  if (n < 3 || p < 1) throw DataError("operation_counts: need n >= 3 and p >= 1");
  OperationCounts c;
  c.darts = (n * n - 3 * n) / 2 * p;
  c.topology = cell_edges(n);
  c.operator_search = 2 * (n - 3) * p;
  return c;
}

EnumeratedCost enumerate_costs(SearchCell& cell, std::int64_t height, std::int64_t width) {
  EnumeratedCost out;
  out.instances = cell.operator_instances();
  out.kernel_params = cell.kernel_parameter_count();
  const auto e = static_cast<std::int64_t>(cell.edges().size());
  if (e == 0) return out;
  const std::int64_t p = out.instances / e;
  out.arch_params = e + (p > 1 ? e * p : 0);

  // Gradients are irrelevant here; recording them would not change the count.
  Tape tape(false);
  const Shape in_shape{1, cell.channels(), height, width};
  Var s0 = tape.constant(Tensor(in_shape, 0.5));
  Var s1 = tape.constant(Tensor(in_shape, -0.25));
  Var alpha = tape.constant(Tensor({e, p}));
  Var beta = tape.constant(Tensor({e}));
  tape.reset_flops();
  cell.forward(s0, s1, alpha, beta, true);
  out.flops = tape.flops();
  return out;
}

EnumeratedCost enumerate_costs(SuperNet& net, std::int64_t height, std::int64_t width) {
  for (auto& c : net.cells()) {
    if (!c.reduction()) return enumerate_costs(c, height, width);
  }
  throw DataError("enumerate_costs: super-net has no normal cell");
}

SearchCell make_cost_cell(int nodes, const std::vector<CandidateOp>& candidates,
                          std::int64_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return SearchCell(nodes, full_cell_edges(nodes), candidates, channels, false, 1, seed, rng);
}

}  // namespace ftso
