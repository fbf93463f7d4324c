#include <cmath>

#include "doctest.h"
#include "ftso/cost_model.hpp"

using namespace ftso;

TEST_CASE("closed forms agree with the enumerated cell body") {
  for (int n = 4; n <= 9; ++n)
    for (int p = 1; p <= 4; ++p) {
      INFO("n=" << n << " p=" << p);
      std::vector<CandidateOp> ops(static_cast<std::size_t>(p), VanillaConvSpec{3});
      SearchCell cell = make_cost_cell(n, ops, 2);
      EnumeratedCost e = enumerate_costs(cell, 4, 4);
      CostReport d = darts_cost(n, p, 3, 2, 2, 4, 4);
      CHECK(e.flops == d.flops);
      CHECK(e.kernel_params == d.params);
      CHECK(e.instances == d.instances);
      CHECK(e.instances == operation_counts(n, p).darts);

      SearchCell skip = make_cost_cell(n, {OperatorKind::SkipConnect}, 2);
      EnumeratedCost s = enumerate_costs(skip, 4, 4);
      CostReport f = ftso_cost(n, 2, 4, 4);
      CHECK(s.flops == f.flops);
      CHECK(s.trainable() == f.params);
      CHECK(s.kernel_params == 0);
      CHECK(s.instances == operation_counts(n, p).topology);
    }
}

TEST_CASE("documented cost examples") {
  std::vector<CandidateOp> ops(2, VanillaConvSpec{3});
  SearchCell cell = make_cost_cell(5, ops, 4);
  CostReport d = darts_cost(5, 2, 3, 4, 4, 8, 8);
  EnumeratedCost e = enumerate_costs(cell, 8, 8);
  CHECK(e.flops == d.flops);
  CHECK(e.kernel_params == d.params);

  CHECK(ftso_cost(7, 16, 8, 8).flops == 14336);
  SearchCell skip7 = make_cost_cell(7, {OperatorKind::SkipConnect}, 16);
  CHECK(enumerate_costs(skip7, 8, 8).flops == 14336);
  CHECK(enumerate_costs(skip7, 8, 8).trainable() == 14);
  CHECK(ftso_cost(4, 3, 5, 5).params == 2);
  CHECK(ftso_cost(3, 3, 5, 5).flops == 0);
  CHECK(ftso_cost(3, 3, 5, 5).params == 0);
  CHECK(darts_cost(3, 8, 3, 4, 4, 8, 8).flops == 0);
  CHECK(operation_counts(7, 8) == OperationCounts{112, 14, 64});
  CHECK(operation_counts(3, 8) == OperationCounts{0, 0, 0});
  for (int n = 4; n < 10; ++n) CHECK(operation_counts(n, 1).darts == operation_counts(n, 1).topology);
}

TEST_CASE("ratios at the large configuration") {
  CostReport d = darts_cost(7, 8, 5, 512, 512, 32, 32);
  CostReport f = ftso_cost(7, 512, 32, 32);
  CHECK(d.params == 14LL * 8 * 6554112);
  const double pr = static_cast<double>(f.params) / static_cast<double>(d.params);
  const double fr = static_cast<double>(f.flops) / static_cast<double>(d.flops);
  CHECK(pr == doctest::Approx(1.0 / (8.0 * (25 * 512 + 1) * 512)).epsilon(1e-12));
  CHECK(fr == doctest::Approx(1.0 / (8.0 * (25 * 512 + 1))).epsilon(1e-12));
  CHECK(std::round(pr * 1e9) / 1e9 == doctest::Approx(1.9e-8).epsilon(0.03));
  CHECK(fr == doctest::Approx(9.8e-6).epsilon(0.005));
  CHECK_FALSE(d.assumptions.empty());
}

TEST_CASE("counts increase with n and p") {
  for (int n = 4; n < 12; ++n)
    for (int p = 1; p < 8; ++p) {
      CHECK(darts_cost(n + 1, p, 3, 4, 4, 8, 8).flops > darts_cost(n, p, 3, 4, 4, 8, 8).flops);
      CHECK(darts_cost(n, p + 1, 3, 4, 4, 8, 8).flops > darts_cost(n, p, 3, 4, 4, 8, 8).flops);
      CHECK(darts_cost(n + 1, p, 3, 4, 4, 8, 8).params > darts_cost(n, p, 3, 4, 4, 8, 8).params);
      CHECK(darts_cost(n, p + 1, 3, 4, 4, 8, 8).params > darts_cost(n, p, 3, 4, 4, 8, 8).params);
      CHECK(ftso_cost(n + 1, 4, 8, 8).flops > ftso_cost(n, 4, 8, 8).flops);
      CHECK(ftso_cost(n + 1, 4, 8, 8).params > ftso_cost(n, 4, 8, 8).params);
      auto a = operation_counts(n, p), b = operation_counts(n + 1, p), c = operation_counts(n, p + 1);
      CHECK(b.darts > a.darts);
      CHECK(b.topology > a.topology);
      CHECK(b.operator_search > a.operator_search);
      CHECK(c.darts > a.darts);
      CHECK(c.operator_search > a.operator_search);
    }
}

TEST_CASE("real candidate set is measured, not assumed") {
  std::vector<CandidateOp> ops(kAllOperators.begin(), kAllOperators.end());
  SearchCell cell = make_cost_cell(5, ops, 4);
  EnumeratedCost e = enumerate_costs(cell, 8, 8);
  CHECK(e.instances == 5 * 8);
  std::int64_t expect = 0;
  for (auto& op : ops) expect += operator_param_count(op, 4, 4);
  CHECK(e.kernel_params == 5 * expect);
  CHECK(e.arch_params == 5 + 5 * 8);
}
