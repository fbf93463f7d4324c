// Command-line front end for the two-phase search library.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ftso/config.hpp"
#include "ftso/cost_model.hpp"
#include "ftso/diagnostics.hpp"
#include "ftso/error.hpp"
#include "ftso/harness.hpp"
#include "ftso/tabular.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::string ftso_fmt(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string budget_unit;
  std::optional<int> budget;
  std::string strategy;
  std::string topo_ops;
  std::string replace_op;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Experiment config file (dotted key = value lines)");
  app->add_option("--set", f.sets, "Override one config entry, key=value (repeatable)");
  app->add_option("--seed", f.seed, "Experiment seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--budget-unit", f.budget_unit, "Search budget unit")->check(CLI::IsMember({"iter", "epoch"}));
  app->add_option("--budget", f.budget, "Search budget amount")->check(CLI::PositiveNumber);
  app->add_option("--strategy", f.strategy, "Operator phase strategy")->check(CLI::IsMember({"replace", "gradient"}));
  app->add_option("--topo-ops", f.topo_ops, "Comma-separated topology-phase operators");
  app->add_option("--replace-op", f.replace_op, "Operator used by the replace strategy");
}

// budget_phases: config prefixes that --budget/--budget-unit apply to.
ftso::ExperimentConfig build_config(const CommonFlags& f, const std::vector<std::string>& budget_phases) {
  ftso::ExperimentConfig cfg = f.config.empty() ? ftso::ExperimentConfig{} : ftso::load_config(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ftso::DataError("--set expects key=value, got '" + kv + "'");
    ftso::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  for (const auto& phase : budget_phases) {
    if (!f.budget_unit.empty()) ftso::set_config_value(cfg, phase + ".budget_unit", f.budget_unit);
    if (f.budget) ftso::set_config_value(cfg, phase + ".budget", std::to_string(*f.budget));
  }
  if (!f.strategy.empty()) ftso::set_config_value(cfg, "operators.strategy", f.strategy);
  if (!f.topo_ops.empty()) ftso::set_config_value(cfg, "topology.ops", f.topo_ops);
  if (!f.replace_op.empty()) ftso::set_config_value(cfg, "operators.replace_op", f.replace_op);
  cfg.validate();
  return cfg;
}

void print_genotype(const std::string& label, const ftso::Genotype& g) {
  std::cout << label << ":\n" << ftso::serialize_genotype(g);
}

void print_eval(const ftso::EvalReport& r) {
  std::printf("eval: parameters %lld  train %.4f  val %.4f  test %.4f\n",
              static_cast<long long>(r.parameters), r.train_acc, r.val_acc, r.test_acc);
}

// -- cost -----------------------------------------------------------------------

struct CostFlags {
  int nodes = 7;
  int candidates = 8;
  int kernel = 5;
  int channels = 512;
  int size = 32;
  int enum_channels = 4;
  int enum_size = 8;
  std::string out;
};

int run_cost(const CostFlags& f) {
  using namespace ftso;
  const CostReport darts = darts_cost(f.nodes, f.candidates, f.kernel, f.channels, f.channels, f.size, f.size);
  const CostReport ftso = ftso_cost(f.nodes, f.channels, f.size, f.size);
  const OperationCounts ops = operation_counts(f.nodes, f.candidates);

  std::vector<CandidateOp> uniform(static_cast<std::size_t>(f.candidates), VanillaConvSpec{f.kernel});
  SearchCell vcell = make_cost_cell(f.nodes, uniform, f.enum_channels);
  const EnumeratedCost ev = enumerate_costs(vcell, f.enum_size, f.enum_size);
  const CostReport da = darts_cost(f.nodes, f.candidates, f.kernel, f.enum_channels, f.enum_channels,
                                   f.enum_size, f.enum_size);
  SearchCell scell = make_cost_cell(f.nodes, {OperatorKind::SkipConnect}, f.enum_channels);
  const EnumeratedCost es = enumerate_costs(scell, f.enum_size, f.enum_size);
  const CostReport fa = ftso_cost(f.nodes, f.enum_channels, f.enum_size, f.enum_size);
  std::vector<CandidateOp> real_ops(kAllOperators.begin(), kAllOperators.end());
  SearchCell rcell = make_cost_cell(f.nodes, real_ops, f.enum_channels);
  const EnumeratedCost er = enumerate_costs(rcell, f.enum_size, f.enum_size);

  const double pr = static_cast<double>(ftso.params) / static_cast<double>(darts.params);
  const double fr = static_cast<double>(ftso.flops) / static_cast<double>(darts.flops);
  std::printf("cell body  n=%d p=%d k=%d C=%d H=W=%d\n", f.nodes, f.candidates, f.kernel, f.channels, f.size);
  std::printf("%-28s %22s %22s %12s\n", "quantity", "darts", "ftso", "ftso/darts");
  std::printf("%-28s %22lld %22lld %12.3e\n", "flops (analytic)", static_cast<long long>(darts.flops),
              static_cast<long long>(ftso.flops), fr);
  std::printf("%-28s %22lld %22lld %12.3e\n", "params (analytic)", static_cast<long long>(darts.params),
              static_cast<long long>(ftso.params), pr);
  std::printf("%-28s %22lld %22lld\n", "operator instances", static_cast<long long>(ops.darts),
              static_cast<long long>(ops.topology));
  std::printf("operator search instances: %lld\n\n", static_cast<long long>(ops.operator_search));
  std::printf("enumerated at C=%d H=W=%d      %14s %14s %6s\n", f.enum_channels, f.enum_size, "analytic",
              "enumerated", "equal");
  auto row = [](const char* name, long long a, long long e) {
    std::printf("%-30s %14lld %14lld %6s\n", name, a, e, a == e ? "yes" : "NO");
  };
  row("darts flops", da.flops, ev.flops);
  row("darts params", da.params, ev.kernel_params);
  row("darts instances", da.instances, ev.instances);
  row("ftso flops", fa.flops, es.flops);
  row("ftso params", fa.params, es.trainable());
  row("ftso instances", fa.instances, es.instances);
  std::printf("8-op candidate cell: flops %lld  trainable %lld  instances %lld\n",
              static_cast<long long>(er.flops), static_cast<long long>(er.trainable()),
              static_cast<long long>(er.instances));

  json j{{"config", {{"nodes", f.nodes}, {"candidates", f.candidates}, {"kernel", f.kernel},
                     {"channels", f.channels}, {"size", f.size}}},
         {"analytic", {{"darts", {{"flops", darts.flops}, {"params", darts.params}, {"instances", darts.instances},
                                  {"assumptions", darts.assumptions}}},
                       {"ftso", {{"flops", ftso.flops}, {"params", ftso.params}, {"instances", ftso.instances},
                                 {"assumptions", ftso.assumptions}}},
                       {"params_ratio", pr},
                       {"flops_ratio", fr}}},
         {"operation_counts", {{"darts", ops.darts}, {"topology", ops.topology}, {"operator_search", ops.operator_search}}},
         {"enumerated", {{"channels", f.enum_channels},
                         {"size", f.enum_size},
                         {"darts", {{"flops", ev.flops}, {"params", ev.kernel_params}, {"instances", ev.instances},
                                    {"analytic_flops", da.flops}, {"analytic_params", da.params}}},
                         {"ftso", {{"flops", es.flops}, {"params", es.trainable()}, {"instances", es.instances},
                                   {"analytic_flops", fa.flops}, {"analytic_params", fa.params}}},
                         {"candidate_cell", {{"flops", er.flops}, {"trainable", er.trainable()},
                                             {"instances", er.instances}}}}}};
  const std::string out_dir = f.out.empty() ? "." : f.out;
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "cost.json") << j.dump(1) << "\n";
  const bool equal = da.flops == ev.flops && da.params == ev.kernel_params && fa.flops == es.flops &&
                     fa.params == es.trainable();
  return equal ? kOk : kNumerical;
}

// -- bench ----------------------------------------------------------------------

struct BenchFlags {
  std::string table;
  std::string generate;
  std::uint64_t table_seed = 0;
  std::string policy = "all";
  std::string dataset = "cifar10";
  int seeds = 20;
  std::uint64_t seed = 0;
  int steps = 50;
  std::string out;
};

int run_bench(const BenchFlags& f) {
  namespace tb = ftso::tabular;
  tb::AccuracyTable table;
  if (!f.generate.empty()) {
    if (f.generate == "monotone") table = tb::monotone_table();
    else if (f.generate == "skip-biased") table = tb::skip_biased_table(f.table_seed);
    else table = tb::constant_table(50.0);
    if (!f.table.empty()) tb::write_table(f.table, table);
  } else {
    if (f.table.empty()) throw ftso::DataError("bench needs --table or --generate");
    table = tb::load_table(f.table);
  }
  const int key = tb::dataset_key_index(f.dataset);
  std::vector<tb::Policy> policies;
  if (f.policy == "all") {
    policies = {tb::Policy::Ftso, tb::Policy::Darts1st, tb::Policy::Darts2ndProxy, tb::Policy::Random};
  } else {
    policies = {tb::parse_policy(f.policy)};
  }
  tb::SearchOptions opt;
  opt.steps = f.steps;
  const std::string out_dir = f.out.empty() ? "." : f.out;
  fs::create_directories(out_dir);
  std::ofstream jsonl(fs::path(out_dir) / "bench.jsonl", std::ios::binary | std::ios::trunc);
  const tb::Cell best = tb::exhaustive_best(table, key);
  std::printf("best cell on %s: %s  acc %.3f\n", std::string(tb::kDatasetKeys[static_cast<std::size_t>(key)]).c_str(),
              tb::cell_string(best).c_str(), table.at(best)[static_cast<std::size_t>(key)]);
  std::printf("%-16s %10s %10s %10s %10s %10s\n", "policy", "acc", "regret", "regret_sd", "zero_reg", "runs");
  for (auto p : policies) {
    double sum = 0.0, rsum = 0.0, rsq = 0.0;
    int zero = 0;
    for (int s = 0; s < f.seeds; ++s) {
      const std::uint64_t seed = f.seed + static_cast<std::uint64_t>(s);
      const tb::SearchResult r = tb::tabular_search(p, key, table, seed, opt);
      sum += r.acc[static_cast<std::size_t>(key)];
      rsum += r.regret;
      rsq += r.regret * r.regret;
      zero += r.regret == 0.0;
      jsonl << json{{"policy", tb::policy_name(p)}, {"seed", seed}, {"dataset", tb::kDatasetKeys[static_cast<std::size_t>(key)]},
                    {"cell", tb::cell_string(r.cell)}, {"acc", r.acc}, {"regret", r.regret}}
                   .dump()
            << "\n";
    }
    const double n = f.seeds;
    const double mean_r = rsum / n;
    const double sd = std::sqrt(std::max(0.0, rsq / n - mean_r * mean_r));
    std::printf("%-16s %10.3f %10.3f %10.3f %10d %10d\n", std::string(tb::policy_name(p)).c_str(), sum / n, mean_r,
                sd, zero, f.seeds);
  }
  return kOk;
}

// -- diag -----------------------------------------------------------------------

int run_diag(const std::string& run_dir, const std::string& out) {
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir)) throw ftso::DataError("run directory '" + run_dir + "' not found");
  const fs::path dest = out.empty() ? dir : fs::path(out);
  fs::create_directories(dest);

  std::ofstream eig(dest / "eigen.csv", std::ios::binary | std::ios::trunc);
  eig << "phase,step,epoch,eigenvalue,iterations,converged\n";
  int eig_rows = 0;
  for (const char* phase : {"topology", "operators", "darts"}) {
    std::ifstream in(dir / (std::string(phase) + ".jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      const json j = json::parse(line);
      if (j.value("event", "") != "hessian") continue;
      eig << phase << ',' << j.at("step").get<long long>() << ',' << j.at("epoch").get<long long>() << ','
          << ftso_fmt(j.at("eigenvalue").get<double>()) << ',' << j.at("iterations").get<int>() << ','
          << (j.at("converged").get<bool>() ? 1 : 0) << '\n';
      ++eig_rows;
    }
  }

  std::ofstream acc(dest / "accuracy.csv", std::ios::binary | std::ios::trunc);
  acc << "epoch,train_loss,train_acc,val_acc,test_acc\n";
  std::vector<double> val, test;
  std::ifstream in(dir / "eval.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    const json j = json::parse(line);
    acc << j.at("epoch").get<int>() << ',' << ftso_fmt(j.at("train_loss").get<double>()) << ','
        << ftso_fmt(j.at("train_acc").get<double>()) << ',' << ftso_fmt(j.at("val_acc").get<double>()) << ','
        << ftso_fmt(j.at("test_acc").get<double>()) << '\n';
    val.push_back(j.at("val_acc").get<double>());
    test.push_back(j.at("test_acc").get<double>());
  }
  std::printf("eigenvalue checkpoints: %d -> %s\n", eig_rows, (dest / "eigen.csv").string().c_str());
  std::printf("accuracy epochs: %zu -> %s\n", val.size(), (dest / "accuracy.csv").string().c_str());
  if (val.size() >= 2) {
    try {
      std::printf("pearson(val_acc, test_acc) = %.4f\n", ftso::pearson(val, test));
    } catch (const ftso::Error& e) {
      std::printf("pearson(val_acc, test_acc) undefined: %s\n", e.what());
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-phase cell search: topology first, operators second"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonFlags common;
  auto* topo = app.add_subcommand("search-topology", "Skip-only super-net search for the cell topology");
  add_common(topo, common);

  std::string topology_path;
  auto* opsearch = app.add_subcommand("search-operators", "Assign operators to a searched topology");
  add_common(opsearch, common);
  opsearch->add_option("--topology", topology_path, "Topology genotype (default <out>/topology.genotype)");

  auto* darts = app.add_subcommand("search-darts", "Joint baseline search over the full candidate super-net");
  add_common(darts, common);

  std::string arch_path;
  int retain = 2;
  auto* derive = app.add_subcommand("derive", "Derive a genotype from an architecture snapshot");
  derive->add_option("--arch", arch_path, "Architecture snapshot (.arch.json)")->required();
  derive->add_option("--retain", retain, "In-edges kept per node")->check(CLI::PositiveNumber);
  std::string derive_out;
  derive->add_option("--out", derive_out, "Genotype file to write (default: stdout only)");

  std::string genotype_path;
  auto* eval = app.add_subcommand("eval", "Train and test a genotype from scratch");
  add_common(eval, common);
  eval->add_option("--genotype", genotype_path, "Genotype file (default <out>/final.genotype)");

  int seeds = 1;
  int workers = 0;
  bool resume = false;
  auto* run = app.add_subcommand("run", "Full pipeline: topology, operators, evaluation");
  add_common(run, common);
  run->add_option("--seeds", seeds, "Independent runs with consecutive seeds")->check(CLI::PositiveNumber);
  run->add_option("--workers", workers, "Parallel runs (default: hardware threads)");
  run->add_flag("--resume", resume, "Reuse genotypes already present in the output directory");

  CostFlags cf;
  auto* cost = app.add_subcommand("cost", "Analytic versus enumerated cell costs");
  cost->add_option("--nodes", cf.nodes, "Nodes per cell")->check(CLI::Range(3, 64));
  cost->add_option("--candidates", cf.candidates, "Candidate operators per edge")->check(CLI::PositiveNumber);
  cost->add_option("--kernel", cf.kernel, "Vanilla convolution kernel size")->check(CLI::PositiveNumber);
  cost->add_option("--channels", cf.channels, "Channels")->check(CLI::PositiveNumber);
  cost->add_option("--size", cf.size, "Feature map height and width")->check(CLI::PositiveNumber);
  cost->add_option("--enum-channels", cf.enum_channels, "Channels of the enumerated cells")->check(CLI::PositiveNumber);
  cost->add_option("--enum-size", cf.enum_size, "Feature map size of the enumerated cells")->check(CLI::PositiveNumber);
  cost->add_option("--out", cf.out, "Directory for cost.json");

  BenchFlags bf;
  auto* bench = app.add_subcommand("bench", "Search policies on a tabular benchmark");
  bench->add_option("--table", bf.table, "Accuracy table (cell TAB acc TAB acc TAB acc)");
  bench->add_option("--generate", bf.generate, "Generate a synthetic table (written to --table if given)")
      ->check(CLI::IsMember({"monotone", "skip-biased", "constant"}));
  bench->add_option("--table-seed", bf.table_seed, "Seed of the generated table");
  bench->add_option("--policy", bf.policy, "ftso, darts1st, darts2nd-proxy, random or all");
  bench->add_option("--dataset", bf.dataset, "cifar10, cifar100, imagenet16-120 or 0..2");
  bench->add_option("--seeds", bf.seeds, "Searches per policy")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bf.seed, "First seed");
  bench->add_option("--steps", bf.steps, "Surrogate search steps")->check(CLI::NonNegativeNumber);
  bench->add_option("--out", bf.out, "Directory for bench.jsonl");

  std::string diag_run, diag_out;
  auto* diag = app.add_subcommand("diag", "Export eigenvalue and accuracy traces of a run as CSV");
  diag->add_option("--run", diag_run, "Run directory")->required();
  diag->add_option("--out", diag_out, "CSV directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (topo->parsed()) {
      auto cfg = build_config(common, {"topology"});
      ftso::RunDirectory dir(cfg, true);
      const ftso::Dataset data = ftso::load_dataset(cfg.data);
      try {
        auto r = ftso::run_topology_phase(cfg, data, dir);
        print_genotype("topology", r.genotype);
        std::printf("steps %zu  seconds %.3f\n", r.trace.size(), r.seconds);
      } catch (const std::exception& e) {
        dir.record_failure("topology", e);
        throw;
      }
    } else if (opsearch->parsed()) {
      auto cfg = build_config(common, {"operators"});
      ftso::RunDirectory dir(cfg, true);
      const auto topology = ftso::read_genotype_file(
          topology_path.empty() ? dir.file("topology.genotype") : topology_path);
      const ftso::Dataset data = ftso::load_dataset(cfg.data);
      try {
        print_genotype("genotype", ftso::run_operator_phase(cfg, topology, data, dir));
      } catch (const std::exception& e) {
        dir.record_failure("operators", e);
        throw;
      }
    } else if (darts->parsed()) {
      auto cfg = build_config(common, {"topology"});
      ftso::RunDirectory dir(cfg, true);
      const ftso::Dataset data = ftso::load_dataset(cfg.data);
      try {
        auto r = ftso::run_darts_phase(cfg, data, dir);
        print_genotype("genotype", r.genotype);
        std::printf("steps %zu  seconds %.3f\n", r.trace.size(), r.seconds);
      } catch (const std::exception& e) {
        dir.record_failure("darts", e);
        throw;
      }
    } else if (derive->parsed()) {
      const auto arch = ftso::read_arch_file(arch_path);
      const auto g = ftso::derive_genotype(arch, retain);
      std::cout << ftso::serialize_genotype(g);
      if (!derive_out.empty()) ftso::write_genotype_file(derive_out, g);
    } else if (eval->parsed()) {
      auto cfg = build_config(common, {});
      ftso::RunDirectory dir(cfg, true);
      const auto g = ftso::read_genotype_file(genotype_path.empty() ? dir.file("final.genotype") : genotype_path);
      const ftso::Dataset data = ftso::load_dataset(cfg.data);
      try {
        print_eval(ftso::run_eval_phase(cfg, g, data, dir));
      } catch (const std::exception& e) {
        dir.record_failure("eval", e);
        throw;
      }
    } else if (run->parsed()) {
      auto cfg = build_config(common, {"topology", "operators"});
      ftso::RunOptions opt;
      opt.resume = resume;
      if (seeds == 1) {
        const auto r = ftso::run_experiment(cfg, opt);
        print_genotype("genotype", r.genotype);
        print_eval(r.eval);
      } else {
        const int w = workers > 0 ? workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
        const auto records = ftso::run_seeds(cfg, seeds, w, opt);
        double sum = 0.0;
        for (const auto& r : records) {
          std::printf("%s  test %.4f\n", r.dir.c_str(), r.eval.test_acc);
          sum += r.eval.test_acc;
        }
        std::printf("mean test accuracy %.4f over %d seeds\n", sum / seeds, seeds);
      }
    } else if (cost->parsed()) {
      return run_cost(cf);
    } else if (bench->parsed()) {
      return run_bench(bf);
    } else if (diag->parsed()) {
      return run_diag(diag_run, diag_out);
    }
  } catch (const ftso::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const ftso::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
