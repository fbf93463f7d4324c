#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ftso::tabular {

// Operators of the tabular cell space, in canonical order.
enum class Op : std::uint8_t { None, Skip, Conv1x1, Conv3x3, AvgPool3x3 };

inline constexpr int kEdges = 6;
inline constexpr int kOps = 5;
inline constexpr int kSpaceSize = 15625;  // kOps^kEdges
inline constexpr int kKeys = 3;

// none, skip_connect, nor_conv_1x1, nor_conv_3x3, avg_pool_3x3
std::string_view op_name(Op op);
Op parse_op(std::string_view name);
bool op_has_parameters(Op op);

// One input node (0), intermediate nodes 1..3. Edge order:
// 0->1, 0->2, 1->2, 0->3, 1->3, 2->3.
struct Cell {
  std::array<Op, kEdges> ops{};
  friend bool operator==(const Cell&, const Cell&) = default;
};

// |op~0|+|op~0|op~1|+|op~0|op~1|op~2|
std::string cell_string(const Cell& c);
Cell parse_cell(std::string_view s);
// Base-5 index with edge 0 most significant; defines the canonical order.
int cell_index(const Cell& c);
Cell cell_from_index(int index);
std::vector<Cell> enumerate_space();
int count_op(const Cell& c, Op op);

using Accuracies = std::array<double, kKeys>;

struct AccuracyTable {
  std::vector<Accuracies> acc;  // indexed by cell_index

  const Accuracies& at(const Cell& c) const { return acc[static_cast<std::size_t>(cell_index(c))]; }
};

inline constexpr std::array<std::string_view, kKeys> kDatasetKeys = {"cifar10", "cifar100",
                                                                     "imagenet16-120"};
// Accepts a key name or its position 0..2.
int dataset_key_index(std::string_view key);

// Line format: cell<TAB>acc<TAB>acc<TAB>acc. Blank lines are not allowed.
AccuracyTable load_table(const std::string& path);
AccuracyTable parse_table(std::string_view text);
std::string format_table(const AccuracyTable& t);
void write_table(const std::string& path, const AccuracyTable& t);

// accuracy = 10 * (#nor_conv_3x3) on every key.
AccuracyTable monotone_table();
// Edge marginals favour skip_connect while the all-convolution cells are the
// best overall: acc = base + 4 #skip + 1.2 #conv3x3^2 + ... + seeded noise.
AccuracyTable skip_biased_table(std::uint64_t seed);
AccuracyTable constant_table(double value);

Cell exhaustive_best(const AccuracyTable& t, int key);

enum class Policy { Ftso, Darts1st, Darts2ndProxy, Random };
Policy parse_policy(std::string_view name);
std::string_view policy_name(Policy p);

struct SearchOptions {
  int steps = 50;
  double lr = 0.5;
  double grad_noise = 0.05;
  double init_noise = 1e-3;
  // Per-step growth of a parametric operator's trained fraction.
  double rate_conv1x1 = 0.05;
  double rate_conv3x3 = 0.02;
  Op replace_op = Op::Conv3x3;
};

struct SearchResult {
  Cell cell;
  Accuracies acc{};
  double regret = 0.0;  // best accuracy on the key minus the found cell's
};

SearchResult tabular_search(Policy policy, int key, const AccuracyTable& t, std::uint64_t seed,
                            const SearchOptions& opt = {});

}  // namespace ftso::tabular
