#include "doctest.h"
#include "ftso/config.hpp"
#include "ftso/error.hpp"

using namespace ftso;

TEST_CASE("defaults round trip through the canonical text") {
  ExperimentConfig c;
  const std::string text = canonical_config(c);
  CHECK(canonical_config(parse_config(text)) == text);
  for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("values are parsed and re-emitted") {
  const std::string text =
      "# comment line\n"
      "seed = 12\n"
      "space.nodes = 6   # trailing comment\n"
      "space.reductions = 1,3\n"
      "topology.ops = skip_connect,max_pool_3x3\n"
      "topology.budget_unit = iter\n"
      "topology.budget = 3\n"
      "operators.strategy = gradient\n"
      "search.arch_lr = 0.001\n"
      "search.train_scaffold = true\n"
      "data.split = 0.4,0.1,0.3,0.2\n"
      "\n";
  ExperimentConfig c = parse_config(text);
  CHECK(c.seed == 12);
  CHECK(c.space.nodes == 6);
  CHECK(c.space.reduction_positions == std::vector<int>{1, 3});
  CHECK(c.topology_ops == std::vector<OperatorKind>{OperatorKind::SkipConnect, OperatorKind::MaxPool3x3});
  CHECK(c.topology_budget.unit == BudgetUnit::Iterations);
  CHECK(c.topology_budget.amount == 3);
  CHECK(c.strategy == OperatorStrategy::Gradient);
  CHECK(c.hyper.arch.lr == 0.001);
  CHECK(c.hyper.train_scaffold);
  CHECK(c.data.split[0] == 0.4);
  CHECK(canonical_config(parse_config(canonical_config(c))) == canonical_config(c));
  CHECK(canonical_config(c).find("search.arch_lr = 0.001\n") != std::string::npos);
}

TEST_CASE("errors name the line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("seed = 1\nno.such.key = 3\n").find("line 2") != std::string::npos);
  CHECK(message("seed = 1\nseed = 2\n").find("line 2") != std::string::npos);
  CHECK(message("seed 1\n").find("line 1") != std::string::npos);
  CHECK(message("space.nodes = many\n") != "no error");
  CHECK(message("topology.ops = conv_9x9\n") != "no error");
  CHECK(message("operators.strategy = guess\n") != "no error");
  CHECK_THROWS_AS(parse_config("space.nodes = 2\n").validate(), DataError);
}

TEST_CASE("set_config_value and run ids") {
  ExperimentConfig a;
  ExperimentConfig b = a;
  set_config_value(b, "out", "elsewhere");
  CHECK(config_run_id(a) == config_run_id(b));
  CHECK(config_run_id(a).size() == 16);
  set_config_value(b, "seed", "5");
  CHECK(config_run_id(a) != config_run_id(b));
  CHECK_THROWS_AS(set_config_value(b, "bogus", "1"), DataError);
}

TEST_CASE("spaces follow the dataset") {
  ExperimentConfig c;
  c.eval_cells = 4;
  c.eval_init_channels = 6;
  c.space.partial_channels = 2;
  Dataset d;
  d.images = Tensor({1, 2, 4, 4});
  d.num_classes = 7;
  SpaceConfig s = c.search_space(d);
  CHECK(s.in_channels == 2);
  CHECK(s.num_classes == 7);
  SpaceConfig e = c.eval_space(d);
  CHECK(e.cells == 4);
  CHECK(e.init_channels == 6);
  CHECK(e.partial_channels == 1);
}
