#include "ftso/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "ftso/error.hpp"

namespace ftso {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw DataError("config key '" + std::string(key) + "': expected " + std::string(want) +
                  ", got '" + std::string(value) + "'");
}

template <class T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool parse_flag(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string real(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (true) {
    const auto c = v.find(',');
    out.push_back(trim(v.substr(0, c)));
    if (c == std::string_view::npos) break;
    v.remove_prefix(c + 1);
  }
  return out;
}

std::vector<OperatorKind> parse_ops(std::string_view key, std::string_view v) {
  std::vector<OperatorKind> ops;
  try {
    ops = parse_operator_list(v);
  } catch (const DataError& e) {
    throw DataError("config key '" + std::string(key) + "': " + e.what());
  }
  if (ops.empty()) bad_value(key, v, "a non-empty operator list");
  std::set<OperatorKind> seen(ops.begin(), ops.end());
  if (seen.size() != ops.size()) bad_value(key, v, "an operator list without repeats");
  return ops;
}

BudgetUnit parse_unit(std::string_view key, std::string_view v) {
  if (v == "iter") return BudgetUnit::Iterations;
  if (v == "epoch") return BudgetUnit::Epochs;
  bad_value(key, v, "iter or epoch");
}

std::string unit_name(BudgetUnit u) { return u == BudgetUnit::Iterations ? "iter" : "epoch"; }

std::optional<std::vector<int>> parse_reductions(std::string_view key, std::string_view v) {
  if (v == "auto") return std::nullopt;
  if (v == "none") return std::vector<int>{};
  std::vector<int> out;
  for (auto item : split_list(v)) out.push_back(parse_integer<int>(key, item));
  return out;
}

std::string reductions_text(const std::optional<std::vector<int>>& r) {
  if (!r) return "auto";
  if (r->empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < r->size(); ++i) s += (i ? "," : "") + std::to_string((*r)[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view)> set;
};

#define FTSO_INT(name, member)                                                       \
  Field {                                                                            \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },        \
        [](ExperimentConfig& c, std::string_view k, std::string_view v) {            \
          c.member = parse_integer<std::decay_t<decltype(c.member)>>(k, v);          \
        }                                                                            \
  }
#define FTSO_REAL(name, member)                                                                 \
  Field {                                                                                       \
    name, [](const ExperimentConfig& c) { return real(c.member); },                             \
        [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = parse_real(k, v); } \
  }
#define FTSO_FLAG(name, member)                                                                 \
  Field {                                                                                       \
    name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); },  \
        [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = parse_flag(k, v); } \
  }
#define FTSO_TEXT(name, member)                                                      \
  Field {                                                                            \
    name, [](const ExperimentConfig& c) { return c.member; },                        \
        [](ExperimentConfig& c, std::string_view, std::string_view v) { c.member = std::string(v); } \
  }
#define FTSO_OPS(name, member)                                                       \
  Field {                                                                            \
    name, [](const ExperimentConfig& c) { return join_operator_names(c.member); },   \
        [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = parse_ops(k, v); } \
  }
#define FTSO_UNIT(name, member)                                                      \
  Field {                                                                            \
    name, [](const ExperimentConfig& c) { return unit_name(c.member); },             \
        [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = parse_unit(k, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FTSO_INT("seed", seed),
      FTSO_TEXT("out", out),
      FTSO_INT("space.nodes", space.nodes),
      FTSO_INT("space.cells", space.cells),
      Field{"space.reductions",
            [](const ExperimentConfig& c) { return reductions_text(c.space.reduction_positions); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              c.space.reduction_positions = parse_reductions(k, v);
            }},
      FTSO_INT("space.init_channels", space.init_channels),
      FTSO_INT("space.stem_multiplier", space.stem_multiplier),
      FTSO_INT("space.stem_stride", space.stem_stride),
      FTSO_INT("space.partial_channels", space.partial_channels),
      FTSO_REAL("space.arch_init_noise", space.arch_init_noise),
      FTSO_OPS("topology.ops", topology_ops),
      FTSO_UNIT("topology.budget_unit", topology_budget.unit),
      FTSO_INT("topology.budget", topology_budget.amount),
      FTSO_INT("topology.batch_size", topology_budget.batch_size),
      Field{"operators.strategy",
            [](const ExperimentConfig& c) {
              return std::string(c.strategy == OperatorStrategy::Replace ? "replace" : "gradient");
            },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "replace") c.strategy = OperatorStrategy::Replace;
              else if (v == "gradient") c.strategy = OperatorStrategy::Gradient;
              else bad_value(k, v, "replace or gradient");
            }},
      Field{"operators.replace_op",
            [](const ExperimentConfig& c) { return std::string(operator_name(c.replace_op)); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              auto ops = parse_ops(k, v);
              if (ops.size() != 1) bad_value(k, v, "a single operator");
              c.replace_op = ops[0];
            }},
      FTSO_OPS("operators.ops", operator_ops),
      FTSO_UNIT("operators.budget_unit", operator_budget.unit),
      FTSO_INT("operators.budget", operator_budget.amount),
      FTSO_INT("operators.batch_size", operator_budget.batch_size),
      FTSO_OPS("darts.ops", darts_ops),
      FTSO_INT("darts.partial_channels", darts_partial_channels),
      FTSO_REAL("search.arch_lr", hyper.arch.lr),
      FTSO_REAL("search.arch_weight_decay", hyper.arch.weight_decay),
      FTSO_REAL("search.arch_beta1", hyper.arch.beta1),
      FTSO_REAL("search.arch_beta2", hyper.arch.beta2),
      FTSO_REAL("search.weight_lr", hyper.weight.lr),
      FTSO_REAL("search.weight_lr_min", hyper.weight_lr_min),
      FTSO_REAL("search.weight_momentum", hyper.weight.momentum),
      FTSO_REAL("search.weight_decay", hyper.weight.weight_decay),
      FTSO_FLAG("search.train_scaffold", hyper.train_scaffold),
      FTSO_INT("eval.epochs", eval.epochs),
      FTSO_INT("eval.batch_size", eval.batch_size),
      FTSO_INT("eval.cells", eval_cells),
      FTSO_INT("eval.init_channels", eval_init_channels),
      FTSO_REAL("eval.lr", eval.opt.lr),
      FTSO_REAL("eval.lr_min", eval.lr_min),
      FTSO_REAL("eval.momentum", eval.opt.momentum),
      FTSO_REAL("eval.weight_decay", eval.opt.weight_decay),
      FTSO_TEXT("data.source", data.source),
      FTSO_INT("data.classes", data.classes),
      FTSO_INT("data.samples", data.samples),
      FTSO_INT("data.channels", data.channels),
      FTSO_INT("data.height", data.height),
      FTSO_INT("data.width", data.width),
      FTSO_REAL("data.noise", data.noise),
      FTSO_INT("data.seed", data.seed),
      FTSO_TEXT("data.images", data.images_path),
      FTSO_TEXT("data.labels", data.labels_path),
      FTSO_FLAG("data.csv_header", data.csv_header),
      FTSO_TEXT("data.csv_label_column", data.csv_label_column),
      Field{"data.split",
            [](const ExperimentConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.data.split.size(); ++i) s += (i ? "," : "") + real(c.data.split[i]);
              return s;
            },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              auto items = split_list(v);
              if (items.size() != 4) bad_value(k, v, "four fractions");
              for (std::size_t i = 0; i < 4; ++i) c.data.split[i] = parse_real(k, items[i]);
            }},
      FTSO_INT("data.split_seed", data.split_seed),
      FTSO_INT("diag.hessian_every", hyper.hessian_every),
      FTSO_INT("diag.hessian_iters", hyper.hessian_iters),
      FTSO_REAL("diag.hessian_tol", hyper.hessian_tol),
  };
  return f;
}

#undef FTSO_INT
#undef FTSO_REAL
#undef FTSO_FLAG
#undef FTSO_TEXT
#undef FTSO_OPS
#undef FTSO_UNIT

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw DataError("unknown config key '" + std::string(key) + "'");
}

void check(bool ok, const std::string& what) {
  if (!ok) throw DataError("invalid config: " + what);
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  find_field(key).set(cfg, key, trim(value));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.key);
  return k;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      throw DataError("config line " + std::to_string(line_no) + ": duplicate key '" +
                      std::string(key) + "'");
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const DataError& e) {
      throw DataError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string canonical_config(const ExperimentConfig& cfg, bool include_out) {
  std::string s;
  for (const auto& f : fields()) {
    if (f.key == "out" && !include_out) continue;
    s += f.key + " = " + f.get(cfg) + "\n";
  }
  return s;
}

std::string config_run_id(const ExperimentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& f : fields()) {
    if (f.key == "out") continue;
    for (char ch : f.key + "=" + f.get(cfg) + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentConfig::validate() const {
  SpaceConfig probe = space;
  probe.validate();
  topology_budget.validate();
  operator_budget.validate();
  check(!topology_ops.empty(), "topology.ops is empty");
  check(!operator_ops.empty(), "operators.ops is empty");
  check(!darts_ops.empty(), "darts.ops is empty");
  check(replace_op != OperatorKind::Zero, "operators.replace_op cannot be 'none'");
  bool usable = false;
  for (auto op : operator_ops) usable = usable || op != OperatorKind::Zero;
  check(usable, "operators.ops needs an operator other than 'none'");
  check(darts_partial_channels >= 1 && space.init_channels % darts_partial_channels == 0,
        "darts.partial_channels must divide space.init_channels");
  check(eval.epochs >= 0, "eval.epochs must be >= 0");
  check(eval.batch_size >= 1, "eval.batch_size must be >= 1");
  check(eval_cells >= 0 && eval_init_channels >= 0, "eval.cells and eval.init_channels must be >= 0");
  check(hyper.hessian_every >= 0 && hyper.hessian_iters >= 1 && hyper.hessian_tol > 0,
        "diag settings out of range");
  check(hyper.arch.lr >= 0 && hyper.weight.lr >= 0 && eval.opt.lr >= 0, "learning rates must be >= 0");
  double total = 0.0;
  for (double f : data.split) {
    check(f >= 0.0, "data.split fractions must be >= 0");
    total += f;
  }
  check(std::abs(total - 1.0) <= 1e-9, "data.split fractions must sum to 1");
  if (data.source == "idx") {
    check(std::filesystem::exists(data.images_path), "data.images '" + data.images_path + "' not found");
    check(std::filesystem::exists(data.labels_path), "data.labels '" + data.labels_path + "' not found");
  } else if (data.source == "csv") {
    check(std::filesystem::exists(data.images_path), "data.images '" + data.images_path + "' not found");
  } else {
    check(data.source == "blobs" || data.source == "stripes",
          "data.source must be blobs, stripes, idx or csv");
  }
}

SpaceConfig ExperimentConfig::search_space(const Dataset& d) const {
  SpaceConfig s = space;
  s.in_channels = d.channels();
  s.num_classes = d.num_classes;
  return s;
}

SpaceConfig ExperimentConfig::eval_space(const Dataset& d) const {
  SpaceConfig s = search_space(d);
  s.partial_channels = 1;
  if (eval_cells > 0) {
    s.cells = eval_cells;
    if (!space.reduction_positions) s.reduction_positions.reset();
  }
  if (eval_init_channels > 0) s.init_channels = eval_init_channels;
  return s;
}

}  // namespace ftso
