#include "ftso/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ftso/error.hpp"
#include "ftso/seed.hpp"

namespace ftso::tabular {

namespace {

constexpr std::array<std::string_view, kOps> kOpNames = {
    "none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"};

}  // namespace

std::string_view op_name(Op op) { return kOpNames[static_cast<std::size_t>(op)]; }

Op parse_op(std::string_view name) {
  for (int i = 0; i < kOps; ++i)
    if (kOpNames[static_cast<std::size_t>(i)] == name) return static_cast<Op>(i);
  throw DataError("unknown tabular operator '" + std::string(name) + "'");
}

bool op_has_parameters(Op op) { return op == Op::Conv1x1 || op == Op::Conv3x3; }

std::string cell_string(const Cell& c) {
  std::string s;
  int e = 0;
  for (int node = 1; node <= 3; ++node) {
    if (node > 1) s += '+';
    s += '|';
    for (int src = 0; src < node; ++src, ++e) {
      s += op_name(c.ops[static_cast<std::size_t>(e)]);
      s += '~';
      s += static_cast<char>('0' + src);
      s += '|';
    }
  }
  return s;
}

Cell parse_cell(std::string_view s) {
  const std::string original(s);
  auto fail = [&original](const std::string& why) {
    return DataError("bad cell string '" + original + "': " + why);
  };
  Cell c;
  int e = 0;
  for (int node = 1; node <= 3; ++node) {
    if (node > 1) {
      if (s.empty() || s[0] != '+') throw fail("expected '+' before node " + std::to_string(node));
      s.remove_prefix(1);
    }
    if (s.empty() || s[0] != '|') throw fail("expected '|'");
    s.remove_prefix(1);
    for (int src = 0; src < node; ++src, ++e) {
      const auto bar = s.find('|');
      if (bar == std::string_view::npos) throw fail("unterminated entry");
      const std::string_view entry = s.substr(0, bar);
      const auto tilde = entry.find('~');
      if (tilde == std::string_view::npos) throw fail("entry without '~'");
      if (entry.substr(tilde + 1) != std::string(1, static_cast<char>('0' + src))) {
        throw fail("expected source " + std::to_string(src) + " for node " + std::to_string(node));
      }
      c.ops[static_cast<std::size_t>(e)] = parse_op(entry.substr(0, tilde));
      s.remove_prefix(bar + 1);
    }
  }
  if (!s.empty()) throw fail("trailing characters");
  return c;
}

int cell_index(const Cell& c) {
  int idx = 0;
  for (Op op : c.ops) idx = idx * kOps + static_cast<int>(op);
  return idx;
}

Cell cell_from_index(int index) {
  if (index < 0 || index >= kSpaceSize) throw DataError("cell index out of range");
  Cell c;
  for (int e = kEdges - 1; e >= 0; --e) {
    c.ops[static_cast<std::size_t>(e)] = static_cast<Op>(index % kOps);
    index /= kOps;
  }
  return c;
}

std::vector<Cell> enumerate_space() {
  std::vector<Cell> out;
  out.reserve(kSpaceSize);
  for (int i = 0; i < kSpaceSize; ++i) out.push_back(cell_from_index(i));
  return out;
}

int count_op(const Cell& c, Op op) {
  int n = 0;
  for (Op o : c.ops) n += (o == op);
  return n;
}

int dataset_key_index(std::string_view key) {
  for (int i = 0; i < kKeys; ++i) {
    if (kDatasetKeys[static_cast<std::size_t>(i)] == key) return i;
    if (key.size() == 1 && key[0] == static_cast<char>('0' + i)) return i;
  }
  throw DataError("unknown dataset key '" + std::string(key) + "'");
}

// -- files ----------------------------------------------------------------------

AccuracyTable parse_table(std::string_view text) {
  AccuracyTable t;
  t.acc.assign(kSpaceSize, Accuracies{-1.0, -1.0, -1.0});
  std::vector<bool> seen(kSpaceSize, false);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 1 + kKeys) {
      throw DataError(where + "expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    Cell c;
    try {
      c = parse_cell(fields[0]);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    const int idx = cell_index(c);
    if (seen[static_cast<std::size_t>(idx)]) {
      throw DataError(where + "duplicate cell " + std::string(fields[0]));
    }
    seen[static_cast<std::size_t>(idx)] = true;
    for (int k = 0; k < kKeys; ++k) {
      const std::string f(fields[static_cast<std::size_t>(k + 1)]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (f.empty() || used != f.size() || !std::isfinite(v)) {
        throw DataError(where + "accuracy field " + std::to_string(k + 1) + " '" + f +
                        "' is not a number");
      }
      if (v < 0.0 || v > 100.0) {
        throw DataError(where + "accuracy " + f + " outside [0, 100]");
      }
      t.acc[static_cast<std::size_t>(idx)][static_cast<std::size_t>(k)] = v;
    }
  }
  int missing = 0;
  int first_missing = -1;
  for (int i = 0; i < kSpaceSize; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) {
      if (first_missing < 0) first_missing = i;
      ++missing;
    }
  }
  if (missing > 0) {
    throw DataError("table is missing " + std::to_string(missing) + " of " +
                    std::to_string(kSpaceSize) + " cells, first missing: " +
                    cell_string(cell_from_index(first_missing)));
  }
  return t;
}

AccuracyTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open table '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_table(ss.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string format_table(const AccuracyTable& t) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int i = 0; i < kSpaceSize; ++i) {
    os << cell_string(cell_from_index(i));
    for (double v : t.acc[static_cast<std::size_t>(i)]) os << '\t' << v;
    os << '\n';
  }
  return os.str();
}

void write_table(const std::string& path, const AccuracyTable& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write table '" + path + "'");
  out << format_table(t);
}

// -- synthetic tables -----------------------------------------------------------

AccuracyTable monotone_table() {
  AccuracyTable t;
  t.acc.resize(kSpaceSize);
  for (int i = 0; i < kSpaceSize; ++i) {
    const double v = 10.0 * count_op(cell_from_index(i), Op::Conv3x3);
    t.acc[static_cast<std::size_t>(i)] = {v, v, v};
  }
  return t;
}

AccuracyTable skip_biased_table(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x7ab1e));
  std::normal_distribution<double> noise(0.0, 0.5);
  constexpr std::array<double, kKeys> base = {30.0, 15.0, 8.0};
  constexpr std::array<double, kKeys> scale = {1.0, 0.7, 0.5};
  AccuracyTable t;
  t.acc.resize(kSpaceSize);
  for (int i = 0; i < kSpaceSize; ++i) {
    const Cell c = cell_from_index(i);
    const double conv3 = count_op(c, Op::Conv3x3);
    const double score = 4.0 * count_op(c, Op::Skip) + 1.2 * conv3 * conv3 +
                         1.5 * count_op(c, Op::Conv1x1) + 1.0 * count_op(c, Op::AvgPool3x3) -
                         2.0 * count_op(c, Op::None);
    for (int k = 0; k < kKeys; ++k) {
      const double v = base[static_cast<std::size_t>(k)] +
                       scale[static_cast<std::size_t>(k)] * score + noise(rng);
      t.acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = std::clamp(v, 0.0, 100.0);
    }
  }
  return t;
}

AccuracyTable constant_table(double value) {
  AccuracyTable t;
  t.acc.assign(kSpaceSize, Accuracies{value, value, value});
  return t;
}

Cell exhaustive_best(const AccuracyTable& t, int key) {
  if (key < 0 || key >= kKeys) throw DataError("dataset key index out of range");
  int best = 0;
  for (int i = 1; i < kSpaceSize; ++i) {
    if (t.acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(key)] >
        t.acc[static_cast<std::size_t>(best)][static_cast<std::size_t>(key)])
      best = i;
  }
  return cell_from_index(best);
}

// -- policies -------------------------------------------------------------------

Policy parse_policy(std::string_view name) {
  if (name == "ftso") return Policy::Ftso;
  if (name == "darts1st") return Policy::Darts1st;
  if (name == "darts2nd-proxy") return Policy::Darts2ndProxy;
  if (name == "random") return Policy::Random;
  throw DataError("unknown policy '" + std::string(name) + "'");
}

std::string_view policy_name(Policy p) {
  switch (p) {
    case Policy::Ftso:
      return "ftso";
    case Policy::Darts1st:
      return "darts1st";
    case Policy::Darts2ndProxy:
      return "darts2nd-proxy";
    case Policy::Random:
      return "random";
  }
  return "?";
}

namespace {

using EdgeOps = std::array<std::array<double, kOps>, kEdges>;

// Mean accuracy of cells with operator o on edge e, minus the table mean.
EdgeOps edge_marginals(const AccuracyTable& t, int key) {
  EdgeOps sum{};
  double total = 0.0;
  for (int i = 0; i < kSpaceSize; ++i) {
    const Cell c = cell_from_index(i);
    const double v = t.acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(key)];
    total += v;
    for (int e = 0; e < kEdges; ++e)
      sum[static_cast<std::size_t>(e)][static_cast<std::size_t>(c.ops[static_cast<std::size_t>(e)])] += v;
  }
  const double mean = total / kSpaceSize;
  const double per_slot = static_cast<double>(kSpaceSize) / kOps;
  for (auto& row : sum)
    for (auto& v : row) v = v / per_slot - mean;
  return sum;
}

std::array<double, kOps> softmax_row(const std::array<double, kOps>& a) {
  double mx = a[0];
  for (double v : a) mx = std::max(mx, v);
  std::array<double, kOps> s{};
  double z = 0.0;
  for (int o = 0; o < kOps; ++o) {
    s[static_cast<std::size_t>(o)] = std::exp(a[static_cast<std::size_t>(o)] - mx);
    z += s[static_cast<std::size_t>(o)];
  }
  for (auto& v : s) v /= z;
  return s;
}

// Weight-sharing surrogate: the contribution of operator o on edge e is its
// table marginal scaled by how far its shared weights have trained. Operators
// without parameters are fully effective from the start; parametric ones
// train in proportion to the weight the relaxation gives them.
Cell darts_surrogate(const AccuracyTable& t, int key, bool lookahead, std::uint64_t seed,
                     const SearchOptions& opt) {
  const EdgeOps g = edge_marginals(t, key);
  std::mt19937_64 rng(derive_seed(seed, 0xda475));
  std::normal_distribution<double> init(0.0, opt.init_noise);
  std::normal_distribution<double> noise(0.0, opt.grad_noise);
  EdgeOps alpha{};
  for (auto& row : alpha)
    for (auto& v : row) v = init(rng);
  std::array<double, kOps> rate{};
  std::array<double, kOps> mature{};
  for (int o = 0; o < kOps; ++o) {
    const Op op = static_cast<Op>(o);
    rate[static_cast<std::size_t>(o)] =
        op == Op::Conv1x1 ? opt.rate_conv1x1 : op == Op::Conv3x3 ? opt.rate_conv3x3 : 0.0;
    mature[static_cast<std::size_t>(o)] = op_has_parameters(op) ? 0.0 : 1.0;
  }
  for (int step = 0; step < opt.steps; ++step) {
    std::array<std::array<double, kOps>, kEdges> s{};
    std::array<double, kOps> share{};
    for (int e = 0; e < kEdges; ++e) {
      s[static_cast<std::size_t>(e)] = softmax_row(alpha[static_cast<std::size_t>(e)]);
      for (int o = 0; o < kOps; ++o)
        share[static_cast<std::size_t>(o)] += s[static_cast<std::size_t>(e)][static_cast<std::size_t>(o)] / kEdges;
    }
    std::array<double, kOps> next = mature;
    for (int o = 0; o < kOps; ++o) {
      const auto oi = static_cast<std::size_t>(o);
      next[oi] += rate[oi] * share[oi] * (1.0 - mature[oi]);
    }
    const auto& m = lookahead ? next : mature;
    for (int e = 0; e < kEdges; ++e) {
      const auto ei = static_cast<std::size_t>(e);
      double expected = 0.0;
      for (int o = 0; o < kOps; ++o) {
        const auto oi = static_cast<std::size_t>(o);
        expected += s[ei][oi] * m[oi] * g[ei][oi];
      }
      for (int o = 0; o < kOps; ++o) {
        const auto oi = static_cast<std::size_t>(o);
        const double grad = s[ei][oi] * (m[oi] * g[ei][oi] - expected);
        alpha[ei][oi] += opt.lr * (grad + noise(rng));
      }
    }
    mature = next;
  }
  Cell c;
  for (int e = 0; e < kEdges; ++e) {
    const auto& row = alpha[static_cast<std::size_t>(e)];
    int best = 0;
    for (int o = 1; o < kOps; ++o)
      if (row[static_cast<std::size_t>(o)] > row[static_cast<std::size_t>(best)]) best = o;
    c.ops[static_cast<std::size_t>(e)] = static_cast<Op>(best);
  }
  return c;
}

}  // namespace

SearchResult tabular_search(Policy policy, int key, const AccuracyTable& t, std::uint64_t seed,
                            const SearchOptions& opt) {
  if (key < 0 || key >= kKeys) throw DataError("dataset key index out of range");
  if (t.acc.size() != static_cast<std::size_t>(kSpaceSize)) throw DataError("table is incomplete");
  if (opt.steps < 0) throw DataError("tabular search: steps must be >= 0");
  SearchResult r;
  switch (policy) {
    case Policy::Ftso:
      // The space fixes connectivity; every edge gets the replacement operator.
      r.cell.ops.fill(opt.replace_op);
      break;
    case Policy::Darts1st:
      r.cell = darts_surrogate(t, key, false, seed, opt);
      break;
    case Policy::Darts2ndProxy:
      r.cell = darts_surrogate(t, key, true, seed, opt);
      break;
    case Policy::Random: {
      std::mt19937_64 rng(derive_seed(seed, 0x4a4d));
      r.cell = cell_from_index(static_cast<int>(rng() % kSpaceSize));
      break;
    }
  }
  r.acc = t.at(r.cell);
  const Cell best = exhaustive_best(t, key);
  r.regret = t.at(best)[static_cast<std::size_t>(key)] - r.acc[static_cast<std::size_t>(key)];
  return r;
}

}  // namespace ftso::tabular
