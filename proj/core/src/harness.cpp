#include "ftso/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ftso/error.hpp"
#include "ftso/seed.hpp"

namespace ftso {

namespace fs = std::filesystem;
using nlohmann::json;

// -- arch snapshots -------------------------------------------------------------

namespace {

json cell_json(const CellArch& c, int p) {
  json edges = json::array();
  for (const auto& e : c.edges) edges.push_back({e.src, e.dst});
  json alpha = json::array();
  const auto& a = c.alpha.value().vec();
  for (std::size_t e = 0; e < c.edges.size(); ++e) {
    json row = json::array();
    for (int o = 0; o < p; ++o) row.push_back(a[e * static_cast<std::size_t>(p) + static_cast<std::size_t>(o)]);
    alpha.push_back(row);
  }
  return {{"edges", edges}, {"alpha", alpha}, {"beta", c.beta.value().vec()}};
}

std::vector<EdgeKey> edges_from_json(const json& j) {
  std::vector<EdgeKey> out;
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw DataError("arch snapshot: edge must be [src, dst]");
    out.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  return out;
}

void fill_cell(CellArch& c, const json& j, int p, const char* which) {
  const auto& alpha = j.at("alpha");
  const auto& beta = j.at("beta");
  if (alpha.size() != c.edges.size() || beta.size() != c.edges.size()) {
    throw DataError(std::string("arch snapshot: ") + which + " alpha/beta length differs from edge count");
  }
  auto a = c.alpha.value().data();
  auto b = c.beta.value().data();
  for (std::size_t e = 0; e < c.edges.size(); ++e) {
    if (alpha[e].size() != static_cast<std::size_t>(p)) {
      throw DataError(std::string("arch snapshot: ") + which + " alpha row " + std::to_string(e) +
                      " has wrong length");
    }
    for (int o = 0; o < p; ++o) a[e * static_cast<std::size_t>(p) + static_cast<std::size_t>(o)] = alpha[e][static_cast<std::size_t>(o)].get<double>();
    b[e] = beta[e].get<double>();
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace

std::string arch_to_json(const ArchParams& arch) {
  json cands = json::array();
  for (const auto& c : arch.candidates) cands.push_back(candidate_name(c));
  json j{{"nodes", arch.nodes},
         {"candidates", cands},
         {"normal", cell_json(arch.normal, arch.p())},
         {"reduce", cell_json(arch.reduce, arch.p())}};
  return j.dump(1) + "\n";
}

ArchParams arch_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::vector<CandidateOp> cands;
    for (const auto& c : j.at("candidates")) cands.emplace_back(parse_operator(c.get<std::string>()));
    const int nodes = j.at("nodes").get<int>();
    ArchParams a = ArchParams::create(nodes, cands, edges_from_json(j.at("normal")),
                                      edges_from_json(j.at("reduce")));
    fill_cell(a.normal, j.at("normal"), a.p(), "normal");
    fill_cell(a.reduce, j.at("reduce"), a.p(), "reduce");
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string("arch snapshot: ") + e.what());
  }
}

ArchParams read_arch_file(const std::string& path) {
  try {
    return arch_from_json(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_arch_file(const std::string& path, const ArchParams& arch) {
  write_file(path, arch_to_json(arch));
}

Genotype random_topology(int nodes, OperatorKind op, std::uint64_t seed) {
  if (nodes < 4) throw DataError("random_topology: need at least 4 nodes");
  std::mt19937_64 rng(derive_seed(seed, 0x70b0));
  auto cell = [&] {
    std::vector<GenotypeEdge> edges;
    for (int dst = 2; dst <= nodes - 2; ++dst) {
      const int a = static_cast<int>(rng() % static_cast<std::uint64_t>(dst));
      int b = static_cast<int>(rng() % static_cast<std::uint64_t>(dst - 1));
      if (b >= a) ++b;
      edges.push_back({std::min(a, b), dst, op});
      edges.push_back({std::max(a, b), dst, op});
    }
    return edges;
  };
  Genotype g;
  g.normal = cell();
  g.reduce = cell();
  return g;
}

// -- run directory --------------------------------------------------------------

RunDirectory::RunDirectory(const ExperimentConfig& cfg, bool append_timings)
    : dir_(cfg.out), run_id_(config_run_id(cfg)) {
  if (dir_.empty()) throw DataError("output directory is empty");
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw DataError("cannot create output directory '" + dir_ + "': " + ec.message());
  write_text("config.txt", canonical_config(cfg, false));
  timings_file_ = std::make_unique<std::ofstream>(
      file("timings.jsonl"), append_timings ? std::ios::app : std::ios::trunc);
  if (!*timings_file_) throw DataError("cannot write '" + file("timings.jsonl") + "'");
  sink_.run_id = run_id_;
  sink_.timings = timings_file_.get();
}

std::string RunDirectory::file(const std::string& name) const { return (fs::path(dir_) / name).string(); }

bool RunDirectory::exists(const std::string& name) const { return fs::exists(file(name)); }

const TraceSink& RunDirectory::open_trace(const std::string& name) {
  trace_file_ = std::make_unique<std::ofstream>(file(name), std::ios::binary | std::ios::trunc);
  if (!*trace_file_) throw DataError("cannot write '" + file(name) + "'");
  sink_.trace = trace_file_.get();
  return sink_;
}

void RunDirectory::close_trace() {
  if (trace_file_) trace_file_->flush();
  trace_file_.reset();
  sink_.trace = nullptr;
}

void RunDirectory::timing(const std::string& phase, double seconds) {
  sink_.timing(phase, seconds);
  timings_file_->flush();
}

void RunDirectory::write_text(const std::string& name, const std::string& text) const {
  write_file(file(name), text);
}

void RunDirectory::record_failure(const std::string& phase, const std::exception& e) const {
  std::string kind = "error";
  if (dynamic_cast<const NumericalError*>(&e)) kind = "numerical";
  else if (dynamic_cast<const ShapeError*>(&e)) kind = "shape";
  else if (dynamic_cast<const DataError*>(&e)) kind = "data";
  json j{{"run", run_id_}, {"phase", phase}, {"kind", kind}, {"error", e.what()}};
  try {
    write_text("failure.json", j.dump(1) + "\n");
  } catch (const Error&) {
    // The original failure is more useful than this one.
  }
}

// -- phases ---------------------------------------------------------------------

namespace {

// Runs fn with the trace open, closing it on every path.
template <class Fn>
auto with_trace(RunDirectory& dir, const std::string& name, Fn&& fn) {
  const TraceSink& sink = dir.open_trace(name);
  try {
    auto r = fn(sink);
    dir.close_trace();
    return r;
  } catch (...) {
    dir.close_trace();
    throw;
  }
}

json eval_json(const EvalReport& r, const Genotype& g) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_acc", e.train_acc},
                      {"val_acc", e.val_acc},
                      {"test_acc", e.test_acc}});
  }
  return {{"genotype", serialize_genotype(g)},
          {"parameters", r.parameters},
          {"train_acc", r.train_acc},
          {"val_acc", r.val_acc},
          {"test_acc", r.test_acc},
          {"epochs", epochs}};
}

}  // namespace

PhaseResult run_topology_phase(const ExperimentConfig& cfg, const Dataset& data, RunDirectory& dir) {
  const SpaceConfig space = cfg.search_space(data);
  PhaseResult r = with_trace(dir, "topology.jsonl", [&](const TraceSink& sink) {
    return topology_search(data, space, cfg.topology_ops, cfg.topology_budget, cfg.hyper, cfg.seed, &sink);
  });
  write_genotype_file(dir.file("topology.genotype"), r.genotype);
  write_arch_file(dir.file("topology.arch.json"), r.arch);
  return r;
}

Genotype run_operator_phase(const ExperimentConfig& cfg, const Genotype& topology,
                            const Dataset& data, RunDirectory& dir) {
  Genotype g;
  if (cfg.strategy == OperatorStrategy::Replace) {
    const auto t0 = std::chrono::steady_clock::now();
    g = direct_replace(topology, cfg.replace_op);
    dir.timing("operators", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  } else {
    const SpaceConfig space = cfg.search_space(data);
    PhaseResult r = with_trace(dir, "operators.jsonl", [&](const TraceSink& sink) {
      return operator_search(topology, data, space, cfg.operator_ops, cfg.operator_budget, cfg.hyper,
                             cfg.seed, &sink);
    });
    write_arch_file(dir.file("operators.arch.json"), r.arch);
    g = r.genotype;
  }
  write_genotype_file(dir.file("final.genotype"), g);
  return g;
}

PhaseResult run_darts_phase(const ExperimentConfig& cfg, const Dataset& data, RunDirectory& dir) {
  SpaceConfig space = cfg.search_space(data);
  space.partial_channels = cfg.darts_partial_channels;
  PhaseResult r = with_trace(dir, "darts.jsonl", [&](const TraceSink& sink) {
    return darts_baseline_search(data, space, cfg.darts_ops, cfg.topology_budget, cfg.hyper, cfg.seed, &sink);
  });
  write_genotype_file(dir.file("darts.genotype"), r.genotype);
  write_arch_file(dir.file("darts.arch.json"), r.arch);
  return r;
}

EvalReport run_eval_phase(const ExperimentConfig& cfg, const Genotype& g, const Dataset& data,
                          RunDirectory& dir) {
  const SpaceConfig space = cfg.eval_space(data);
  EvalReport r = with_trace(dir, "eval.jsonl", [&](const TraceSink& sink) {
    return evaluate_architecture(g, data, space, cfg.eval, cfg.seed, &sink);
  });
  dir.write_text("eval.json", eval_json(r, g).dump(1) + "\n");
  return r;
}

// -- full pipeline --------------------------------------------------------------

RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (opt.resume) {
    const auto snapshot = fs::path(cfg.out) / "config.txt";
    if (fs::exists(snapshot) && read_file(snapshot.string()) != canonical_config(cfg, false)) {
      throw DataError("cannot resume '" + cfg.out + "': config differs from its config.txt");
    }
  }
  RunDirectory dir(cfg, opt.resume);
  RunRecord rec;
  rec.run_id = dir.run_id();
  rec.dir = dir.path();
  std::string phase = "data";
  try {
    const Dataset data = load_dataset(cfg.data);

    phase = "topology";
    if (opt.resume && dir.exists("topology.genotype")) {
      rec.topology = read_genotype_file(dir.file("topology.genotype"));
      rec.resumed.push_back("topology");
    } else {
      PhaseResult r = run_topology_phase(cfg, data, dir);
      rec.topology = r.genotype;
      rec.topology_seconds = r.seconds;
    }

    phase = "operators";
    if (opt.resume && dir.exists("final.genotype")) {
      rec.genotype = read_genotype_file(dir.file("final.genotype"));
      rec.resumed.push_back("operators");
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      rec.genotype = run_operator_phase(cfg, rec.topology, data, dir);
      rec.operator_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    phase = "eval";
    rec.eval = run_eval_phase(cfg, rec.genotype, data, dir);

    json report{{"run", rec.run_id},
                {"seed", cfg.seed},
                {"strategy", cfg.strategy == OperatorStrategy::Replace ? "replace" : "gradient"},
                {"topology", serialize_genotype(rec.topology)},
                {"genotype", serialize_genotype(rec.genotype)},
                {"resumed", rec.resumed},
                {"eval", eval_json(rec.eval, rec.genotype)}};
    dir.write_text("report.json", report.dump(1) + "\n");
    if (dir.exists("failure.json")) fs::remove(dir.file("failure.json"));
  } catch (const std::exception& e) {
    dir.record_failure(phase, e);
    throw;
  }
  return rec;
}

std::vector<RunRecord> run_seeds(const ExperimentConfig& cfg, int count, int workers,
                                 const RunOptions& opt) {
  if (count < 1) throw DataError("seed count must be >= 1");
  workers = std::clamp(workers, 1, count);
  std::vector<RunRecord> records(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      ExperimentConfig c = cfg;
      c.seed = cfg.seed + static_cast<std::uint64_t>(i);
      c.out = (fs::path(cfg.out) / ("seed-" + std::to_string(c.seed))).string();
      try {
        records[static_cast<std::size_t>(i)] = run_experiment(c, opt);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return records;
}

}  // namespace ftso
