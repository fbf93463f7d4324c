#pragma once

#include <cstdint>
#include <exception>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "ftso/config.hpp"
#include "ftso/dataset.hpp"
#include "ftso/engine.hpp"
#include "ftso/genotype.hpp"
#include "ftso/supernet.hpp"

namespace ftso {

// Architecture-parameter snapshot as JSON (candidates by name, edge lists,
// alpha rows and beta values). Doubles are written at full precision.
std::string arch_to_json(const ArchParams& arch);
ArchParams arch_from_json(const std::string& text);
ArchParams read_arch_file(const std::string& path);
void write_arch_file(const std::string& path, const ArchParams& arch);

// Uniformly chosen pair of predecessors for every intermediate node of both
// cell types, every edge labelled op.
Genotype random_topology(int nodes, OperatorKind op, std::uint64_t seed);

// Run directory layout (all inside cfg.out):
//   config.txt          canonical config snapshot
//   topology.genotype   topology.arch.json   topology.jsonl
//   final.genotype      operators.arch.json  operators.jsonl   (gradient strategy)
//   darts.genotype      darts.arch.json      darts.jsonl       (baseline)
//   eval.jsonl          report.json
//   timings.jsonl       wall-clock seconds per phase
//   failure.json        written when a phase throws
class RunDirectory {
 public:
  explicit RunDirectory(const ExperimentConfig& cfg, bool append_timings = false);

  const std::string& path() const { return dir_; }
  const std::string& run_id() const { return run_id_; }
  std::string file(const std::string& name) const;
  bool exists(const std::string& name) const;

  // Sink writing deterministic records to <name> and timings to timings.jsonl.
  // The returned sink stays valid until the next call.
  const TraceSink& open_trace(const std::string& name);
  void close_trace();
  void timing(const std::string& phase, double seconds);
  void write_text(const std::string& name, const std::string& text) const;
  void record_failure(const std::string& phase, const std::exception& e) const;

 private:
  std::string dir_;
  std::string run_id_;
  std::unique_ptr<std::ofstream> trace_file_;
  std::unique_ptr<std::ofstream> timings_file_;
  TraceSink sink_;
};

PhaseResult run_topology_phase(const ExperimentConfig& cfg, const Dataset& data, RunDirectory& dir);
// Replace strategy relabels; gradient strategy searches alpha on the kept edges.
Genotype run_operator_phase(const ExperimentConfig& cfg, const Genotype& topology,
                            const Dataset& data, RunDirectory& dir);
PhaseResult run_darts_phase(const ExperimentConfig& cfg, const Dataset& data, RunDirectory& dir);
EvalReport run_eval_phase(const ExperimentConfig& cfg, const Genotype& g, const Dataset& data,
                          RunDirectory& dir);

struct RunRecord {
  std::string run_id;
  std::string dir;
  Genotype topology;
  Genotype genotype;
  EvalReport eval;
  double topology_seconds = 0.0;  // 0 when read back from disk
  double operator_seconds = 0.0;
  std::vector<std::string> resumed;  // phases whose outputs were reused
};

struct RunOptions {
  bool resume = false;
};

// topology search -> operator phase -> evaluation, persisting every artifact.
RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {});

// Independent runs for seeds cfg.seed .. cfg.seed + count - 1, each in
// <out>/seed-<s>, executed on up to `workers` threads.
std::vector<RunRecord> run_seeds(const ExperimentConfig& cfg, int count, int workers,
                                 const RunOptions& opt = {});

}  // namespace ftso
