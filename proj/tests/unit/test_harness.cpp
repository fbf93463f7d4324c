#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ftso/error.hpp"
#include "ftso/harness.hpp"

using namespace ftso;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ExperimentConfig tiny(const std::string& name) {
  ExperimentConfig c;
  c.out = (fs::path(FTSO_TEST_TMP) / "harness" / name).string();
  fs::remove_all(c.out);
  c.space.nodes = 5;
  c.space.cells = 2;
  c.space.init_channels = 4;
  c.space.stem_multiplier = 1;
  c.topology_budget = {BudgetUnit::Iterations, 2, 16};
  c.operator_budget = {BudgetUnit::Iterations, 2, 16};
  c.eval.epochs = 1;
  c.eval.batch_size = 32;
  c.data.classes = 2;
  c.data.samples = 120;
  c.data.channels = 1;
  c.data.height = 6;
  c.data.width = 6;
  return c;
}

}  // namespace

TEST_CASE("arch json round trip") {
  ArchParams a = ArchParams::create(5, {OperatorKind::SkipConnect, OperatorKind::SepConv3x3},
                                    full_cell_edges(5), full_cell_edges(5), 0.3, 4);
  a.normal.beta.value()[0] = 0.1 + 1e-17;
  ArchParams b = arch_from_json(arch_to_json(a));
  CHECK(b.nodes == 5);
  CHECK(b.candidates == a.candidates);
  CHECK(b.normal.edges == a.normal.edges);
  CHECK(b.normal.alpha.value() == a.normal.alpha.value());
  CHECK(b.reduce.beta.value() == a.reduce.beta.value());
  CHECK(derive_genotype(b) == derive_genotype(a));
  CHECK_THROWS_AS(arch_from_json("{\"nodes\": 5}"), DataError);
}

TEST_CASE("random topologies are valid and seeded") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Genotype g = random_topology(7, OperatorKind::SepConv3x3, s);
    CHECK_NOTHROW(validate_genotype(g));
    CHECK(g == random_topology(7, OperatorKind::SepConv3x3, s));
  }
  CHECK_FALSE(random_topology(7, OperatorKind::SkipConnect, 1) == random_topology(7, OperatorKind::SkipConnect, 2));
}

TEST_CASE("run writes every artifact and is reproducible") {
  ExperimentConfig c = tiny("run");
  RunRecord r = run_experiment(c);
  fs::path d = c.out;
  for (const char* f : {"config.txt", "topology.genotype", "topology.arch.json", "topology.jsonl",
                        "final.genotype", "eval.jsonl", "eval.json", "report.json", "timings.jsonl"})
    CHECK(fs::exists(d / f));
  CHECK_FALSE(fs::exists(d / "failure.json"));
  CHECK(read_genotype_file((d / "final.genotype").string()) == r.genotype);
  CHECK(r.genotype == direct_replace(r.topology, OperatorKind::SepConv3x3));
  CHECK(slurp(d / "config.txt") == canonical_config(c, false));

  const std::string trace = slurp(d / "topology.jsonl"), final = slurp(d / "final.genotype");
  const std::string evals = slurp(d / "eval.jsonl");
  fs::remove_all(d);
  run_experiment(c);
  CHECK(slurp(d / "topology.jsonl") == trace);
  CHECK(slurp(d / "final.genotype") == final);
  CHECK(slurp(d / "eval.jsonl") == evals);
}

TEST_CASE("resume reuses finished phases") {
  ExperimentConfig c = tiny("resume");
  run_experiment(c);
  RunRecord again = run_experiment(c, {true});
  CHECK(again.resumed == std::vector<std::string>{"topology", "operators"});
  ExperimentConfig changed = c;
  changed.seed = 99;
  CHECK_THROWS_AS(run_experiment(changed, {true}), DataError);
}

TEST_CASE("gradient strategy with one candidate equals replacement") {
  ExperimentConfig a = tiny("grad");
  a.strategy = OperatorStrategy::Gradient;
  a.operator_ops = {OperatorKind::SepConv3x3};
  RunRecord g = run_experiment(a);
  ExperimentConfig b = tiny("repl");
  RunRecord r = run_experiment(b);
  CHECK(g.genotype == r.genotype);
  CHECK(fs::exists(fs::path(a.out) / "operators.jsonl"));
}

TEST_CASE("failures are recorded") {
  ExperimentConfig c = tiny("fail");
  c.data.source = "idx";
  fs::create_directories(fs::path(FTSO_TEST_TMP) / "harness");
  const fs::path junk = fs::path(FTSO_TEST_TMP) / "harness" / "junk.idx";
  std::ofstream(junk) << "not an idx file";
  c.data.images_path = junk.string();
  c.data.labels_path = junk.string();
  CHECK_THROWS_AS(run_experiment(c), DataError);
  const std::string f = slurp(fs::path(c.out) / "failure.json");
  CHECK(f.find("\"data\"") != std::string::npos);
}

TEST_CASE("darts phase artifacts") {
  ExperimentConfig c = tiny("darts");
  c.topology_budget.amount = 1;
  Dataset data = load_dataset(c.data);
  RunDirectory dir(c);
  PhaseResult r = run_darts_phase(c, data, dir);
  CHECK(fs::exists(dir.file("darts.genotype")));
  CHECK(fs::exists(dir.file("darts.arch.json")));
  CHECK(read_arch_file(dir.file("darts.arch.json")).p() == 8);
  CHECK(r.trace.size() == 1);
}

TEST_CASE("several seeds in parallel") {
  ExperimentConfig c = tiny("seeds");
  auto recs = run_seeds(c, 3, 2);
  REQUIRE(recs.size() == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(fs::exists(fs::path(c.out) / ("seed-" + std::to_string(i)) / "report.json"));
  ExperimentConfig one = tiny("seeds-single");
  one.seed = 1;
  auto single = run_experiment(one);
  CHECK(single.genotype == recs[1].genotype);
  CHECK(single.eval.test_acc == recs[1].eval.test_acc);
}
