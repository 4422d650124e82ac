#pragma once

#include "attnlab/analysis.hpp"
#include "attnlab/json_io.hpp"

#include <map>
#include <string>
#include <vector>

namespace attnlab {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitAcceptance = 3, kExitNumeric = 4 };

struct ExperimentParams {
  int K = 6;
  int d = 8;
  int n = 6;
  int T = 4;
  double eta = 0.01;
  int iters = 4000;
  int trials = 20;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Log;
  std::string head = "tied";  // tied | general_argmax | masked
  std::string embedding = "unit_sphere";
  double noise = 0.1;
  bool normalized = true;
  int record_every = 10;
  int workers = 1;
  std::vector<int> grid;  // n values for scc-count, d values for feasibility
  std::vector<double> radii;
  double epsilon = 1e-3;
};

struct ExperimentConfig {
  std::string name;
  ExperimentParams params;
  std::map<std::string, double> thresholds;
  std::string output_dir = ".";
};

const std::vector<std::string>& experiment_names();

// Defaults for a named experiment; throws ConfigError for unknown names.
ExperimentConfig default_experiment(const std::string& name);

// Overlays the keys present in `j` (a manifest or a partial config).
void apply_json(ExperimentConfig& cfg, const Json& j);
Json to_json(const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

struct ExperimentResult {
  int exit_code = kExitOk;
  Json summary;
  std::vector<std::string> violations;
  double wall_ms = 0.0;
};

// Writes manifest.json, summary.json, timing.json, aggregate CSVs and per-trial
// traces under cfg.output_dir. Errors are mapped to exit codes, not thrown.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string trace_csv(const TrainTrace& trace);
std::string table_csv(const Table& table);

}  // namespace attnlab
