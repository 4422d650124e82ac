#pragma once

#include "attnlab/attention.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <vector>

namespace attnlab {

// Frobenius cosine; throws ZeroMatrix.
double correlation(const Mat& W, const Mat& W_ref);

struct EtaSchedule {
  enum class Kind { Constant, InvSqrt } kind = Kind::Constant;
  double eta0 = 1.0;

  double at(long j) const;
  // Σ_{j<tau} η_j
  double sum(long tau) const;
};

struct RateBoundInputs {
  double xi = 0.0;  // +inf when there is nothing to separate
  double e_max = 1.0;
  double w_fin_norm = 0.0;
  int T_max = 1;
};

// Smallest normalised gap between label-SCC positions and suppressed positions.
double compute_xi(const Dataset& ds, const IndexSets& sets, const Mat& W_svm);
double rate_bound(const RateBoundInputs& in, long tau, const EtaSchedule& eta);

// Everything derived from a dataset's graphs: constraints, W^svm, subspaces,
// the cyclic split and W^fin.
struct Geometry {
  TpgMap tpgs;
  SccMap decomps;
  IndexSets sets;
  ConstraintSet constraints;
  Subspaces subspaces;
  SvmSolution svm;
  CyclicSplit split;
  WfinResult wfin;
  double loss_inf = 0.0;

  TrainRefs refs() const;
};

struct GeometryOptions {
  Closure closure = Closure::Transitive;
  SvmOptions svm;
  WfinOptions wfin;
};

Geometry analyze_geometry(const Dataset& ds, const GeometryOptions& opts = {});
// Same pipeline over externally supplied graphs.
Geometry analyze_geometry(const Dataset& ds, TpgMap tpgs, const GeometryOptions& opts = {});

struct PseudoTpgConfig {
  double epsilon = 1e-3;
};

TpgMap pseudo_tpgs(const Mat& W_gd, const Dataset& ds, const PseudoTpgConfig& cfg = {});
// One copy of each sample per retained token, labelled with that token. Its
// graphs coincide with pseudo_tpgs, so the pseudo cyclic loss has a finite
// minimiser just like the dataset one.
Dataset pseudo_label_dataset(const Mat& W_gd, const Dataset& ds, const PseudoTpgConfig& cfg = {});

struct ConvergenceReport {
  std::optional<double> final_corr;
  std::optional<double> mean_corr;
  std::optional<double> final_dist;
  double final_loss = 0.0;
  std::optional<double> loss_gap;
  int descent_violations = 0;
  bool zero_gradient = false;
  double norm_slope = 0.0;  // d‖W‖/dτ over the second half of the trace
};

struct ReportRefs {
  std::optional<double> loss_inf;
};

ConvergenceReport convergence_report(const TrainTrace& trace, const ReportRefs& refs = {});
nlohmann::json to_json(const ConvergenceReport& r);

struct TableRow {
  double x = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  int trials = 0;
};
using Table = std::vector<TableRow>;

TableRow summarize(double x, const std::vector<double>& values);

// Runs fn(trial) for trial in [0, trials) over `workers` threads; results are
// stored by trial index so aggregation order never depends on scheduling.
std::vector<double> run_trials(int trials, int workers, const std::function<double(int)>& fn);
int default_workers();

Table scc_count_experiment(int K, int d, int T, const std::vector<int>& n_grid, int trials,
                           std::uint64_t seed, int workers = 1);

struct FeasibilityConfig {
  int K = 32;
  int T = 16;
  int n = 16;
  std::vector<int> d_grid{2, 4, 8, 16, 32};
  int trials = 20;
  int iters = 4000;
  double eta = 0.1;
  double epsilon = 1e-3;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Overlap |A ∩ C_y| / |A ∪ C_y| between the tokens A that keep attention mass
// >= epsilon and the label's SCC C_y (restricted to the sequence), averaged
// over samples. Equals 1 exactly when attention keeps C_y and nothing else.
double retained_fraction(const Mat& W, const Dataset& ds, const SccMap& decomps, double epsilon);
Table feasibility_experiment(const FeasibilityConfig& cfg);

}  // namespace attnlab
