#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ftso/dataset.hpp"
#include "ftso/engine.hpp"
#include "ftso/ops.hpp"
#include "ftso/supernet.hpp"

namespace ftso {

enum class OperatorStrategy { Replace, Gradient };

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/ftso";

  // Search space. in_channels and num_classes are taken from the dataset.
  SpaceConfig space;

  std::vector<OperatorKind> topology_ops = {OperatorKind::SkipConnect};
  SearchBudget topology_budget;

  OperatorStrategy strategy = OperatorStrategy::Replace;
  OperatorKind replace_op = OperatorKind::SepConv3x3;
  std::vector<OperatorKind> operator_ops{kAllOperators.begin(), kAllOperators.end()};
  SearchBudget operator_budget;

  std::vector<OperatorKind> darts_ops{kAllOperators.begin(), kAllOperators.end()};
  int darts_partial_channels = 1;

  SearchHyper hyper;

  // Evaluation network; 0 means "same as the search space".
  int eval_cells = 0;
  int eval_init_channels = 0;
  EvalConfig eval;

  DatasetSpec data;

  void validate() const;
  // Space of the evaluated network for a dataset of the given shape.
  SpaceConfig search_space(const Dataset& d) const;
  SpaceConfig eval_space(const Dataset& d) const;
};

// Flat "dotted.key = value" text; '#' starts a comment. Unknown or repeated
// keys are errors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
// Applies one key = value pair (same validation as a config file line).
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);

// Every key in a fixed order; parse_config(canonical_config(c)) == c.
// Without `out` the text depends only on what the run computes.
std::string canonical_config(const ExperimentConfig& cfg, bool include_out = true);
// Stable identifier of everything except the output directory.
std::string config_run_id(const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace ftso
