#include "attnlab/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

namespace attnlab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double mean_defined(const std::vector<double>& v) {
  double sum = 0.0;
  int count = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      sum += x;
      ++count;
    }
  return count ? sum / count : kNaN;
}

int count_defined(const std::vector<double>& v) {
  return static_cast<int>(std::count_if(v.begin(), v.end(), [](double x) { return !std::isnan(x); }));
}

std::vector<double> geometric_radii() {
  std::vector<double> r;
  for (double R = 0.5; R < 1000.0; R *= 2.0) r.push_back(R);
  r.push_back(1000.0);
  return r;
}

std::vector<int> powers_of_two(int lo, int hi) {
  std::vector<int> g;
  for (int v = lo; v <= hi; v *= 2) g.push_back(v);
  return g;
}

std::optional<HeadKind> parse_head(const std::string& s) {
  if (s == "tied") return HeadKind::Tied;
  if (s == "general_argmax") return HeadKind::GeneralArgmax;
  if (s == "masked") return std::nullopt;
  throw Error(ErrorKind::ConfigError, "head must be tied, general_argmax or masked, got '" + s + "'");
}

EmbeddingKind parse_embedding(const std::string& s) {
  if (s == "unit_sphere") return EmbeddingKind::UnitSphere;
  if (s == "orthonormal") return EmbeddingKind::Orthonormal;
  throw Error(ErrorKind::ConfigError, "embedding must be unit_sphere or orthonormal, got '" + s + "'");
}

std::uint64_t trial_seed(const ExperimentParams& p, std::uint64_t stream) { return mix_seed(p.seed, stream); }

Dataset make_trial(const ExperimentParams& p, GenMode mode, std::uint64_t s) {
  const EmbeddingTable E = make_embeddings(p.K, p.d, parse_embedding(p.embedding), mix_seed(s, 1));
  std::optional<ClassifierHead> head;
  if (const auto kind = parse_head(p.head)) head = make_head(E, *kind, p.noise, mix_seed(s, 3));
  return gen_dataset(E, std::move(head), p.n, p.T, mode, mix_seed(s, 2));
}

// Runs fn(trial) for every trial on the worker pool, keeping results by index.
template <class R, class Fn>
std::vector<R> map_trials(const ExperimentParams& p, Fn fn) {
  std::vector<R> out(p.trials);
  run_trials(p.trials, p.workers, [&](int t) {
    out[t] = fn(t);
    return 0.0;
  });
  return out;
}

// Collects files and the summary; the writes happen once, on the calling thread.
struct Artifacts {
  std::vector<std::pair<std::string, std::string>> files;
  Json summary = Json::object();
  std::vector<std::string> violations;

  void file(std::string name, std::string text) { files.emplace_back(std::move(name), std::move(text)); }
  void check(bool ok, const std::string& what) {
    if (!ok) violations.push_back(what);
  }
};

std::string trial_name(const char* prefix, int t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.csv", prefix, t);
  return buf;
}

// Mean and spread of a trace column across trials, by recorded iteration.
Table aggregate_column(const std::vector<TrainTrace>& traces, double TraceRow::*field) {
  Table table;
  if (traces.empty()) return table;
  for (std::size_t r = 0; r < traces.front().rows.size(); ++r) {
    std::vector<double> vals;
    for (const auto& tr : traces) {
      const double v = tr.rows[r].*field;
      if (!std::isnan(v)) vals.push_back(v);
    }
    table.push_back(summarize(traces.front().rows[r].iter, vals));
  }
  return table;
}

double threshold(const ExperimentConfig& cfg, const std::string& key) {
  const auto it = cfg.thresholds.find(key);
  if (it == cfg.thresholds.end()) throw Error(ErrorKind::ConfigError, "missing threshold '" + key + "'");
  return it->second;
}

struct ConvergenceTrial {
  TrainTrace trace;
  double corr = kNaN;
  double dist = 0.0;
  double loss_inf = 0.0;
  double corr_local = kNaN;
  double dist_local = 0.0;
  int fin_dim = 0;
  int fin_dim_local = 0;
};

void run_convergence(const ExperimentConfig& cfg, GenMode mode, Closure closure, bool local, Artifacts& out) {
  const ExperimentParams& p = cfg.params;
  const auto trials = map_trials<ConvergenceTrial>(p, [&](int t) {
    const Dataset ds = make_trial(p, mode, trial_seed(p, t));
    GeometryOptions go;
    go.closure = closure;
    const Geometry g = analyze_geometry(ds, go);
    TrainConfig tc;
    tc.eta = p.eta;
    tc.iters = p.iters;
    tc.normalized = p.normalized;
    tc.loss = p.loss;
    tc.record_every = p.record_every;
    ConvergenceTrial r;
    r.trace = train_gd(ds, tc, g.refs());
    const Mat& W = r.trace.W_final;
    r.corr = r.trace.rows.back().corr_svm;
    r.dist = r.trace.rows.back().dist_fin;
    r.loss_inf = g.loss_inf;
    r.fin_dim = g.subspaces.fin.dim();
    if (local) {
      PseudoTpgConfig pc{p.epsilon};
      const Dataset pds = pseudo_label_dataset(W, ds, pc);
      const Geometry pg = analyze_geometry(pds, pseudo_tpgs(W, ds, pc), go);
      const double n = pg.svm.W.norm();
      r.corr_local = (n > 0.0 && W.norm() > 0.0) ? correlation(W, pg.svm.W) : kNaN;
      r.dist_local = (pg.subspaces.fin.project(W) - pg.wfin.W).norm();
      r.fin_dim_local = pg.subspaces.fin.dim();
    }
    return r;
  });

  std::vector<TrainTrace> traces;
  std::vector<double> corr, dist, corr_l, dist_l, loss_gap;
  std::ostringstream per_trial;
  per_trial << "trial,corr_svm,dist_fin,final_loss,loss_inf,fin_dim";
  if (local) per_trial << ",corr_local,dist_local,fin_dim_local";
  per_trial << "\n";
  for (int t = 0; t < p.trials; ++t) {
    const auto& r = trials[t];
    traces.push_back(r.trace);
    out.file(trial_name("trace", t), trace_csv(r.trace));
    corr.push_back(r.corr);
    dist.push_back(r.dist);
    corr_l.push_back(r.corr_local);
    dist_l.push_back(r.dist_local);
    loss_gap.push_back(r.trace.rows.back().loss - r.loss_inf);
    per_trial << t << ',' << fmt(r.corr) << ',' << fmt(r.dist) << ',' << fmt(r.trace.rows.back().loss) << ','
              << fmt(r.loss_inf) << ',' << r.fin_dim;
    if (local) per_trial << ',' << fmt(r.corr_local) << ',' << fmt(r.dist_local) << ',' << r.fin_dim_local;
    per_trial << "\n";
  }
  out.file("trials.csv", per_trial.str());
  out.file("aggregate.csv", table_csv(aggregate_column(traces, &TraceRow::corr_svm)));
  out.file("aggregate_dist.csv", table_csv(aggregate_column(traces, &TraceRow::dist_fin)));

  const double mc = mean_defined(corr), md = mean_defined(dist);
  out.summary["mean_corr"] = num(mc);
  out.summary["corr_trials"] = count_defined(corr);
  out.summary["mean_dist"] = num(md);
  if (p.loss == LossKind::Log) out.summary["mean_loss_gap"] = num(mean_defined(loss_gap));

  if (local) {
    const double mcl = mean_defined(corr_l), mdl = mean_defined(dist_l);
    // Only trials where both correlations are defined enter the comparison.
    std::vector<double> cg, cl;
    for (int t = 0; t < p.trials; ++t)
      if (!std::isnan(corr[t]) && !std::isnan(corr_l[t])) {
        cg.push_back(corr[t]);
        cl.push_back(corr_l[t]);
      }
    const double mcg_paired = mean_defined(cg), mcl_paired = mean_defined(cl);
    int identical = 0;
    for (int t = 0; t < p.trials; ++t)
      identical += trials[t].fin_dim == trials[t].fin_dim_local && std::abs(corr[t] - corr_l[t]) <= 1e-12;
    out.summary["mean_corr_local"] = num(mcl);
    out.summary["mean_dist_local"] = num(mdl);
    out.summary["paired_mean_corr_global"] = num(mcg_paired);
    out.summary["paired_mean_corr_local"] = num(mcl_paired);
    out.summary["trials_local_equals_global"] = identical;
    const double slack = threshold(cfg, "ordinal_slack");
    out.check(mcl_paired >= mcg_paired - slack, "mean local corr " + fmt(mcl_paired) + " < mean global corr " + fmt(mcg_paired));
    out.check(mdl <= md + slack, "mean local dist " + fmt(mdl) + " > mean global dist " + fmt(md));
    return;
  }
  if (cfg.thresholds.count("min_mean_corr"))
    out.check(mc >= threshold(cfg, "min_mean_corr"), "mean corr " + fmt(mc) + " < " + fmt(threshold(cfg, "min_mean_corr")));
  if (cfg.thresholds.count("max_mean_dist"))
    out.check(md <= threshold(cfg, "max_mean_dist"), "mean dist " + fmt(md) + " > " + fmt(threshold(cfg, "max_mean_dist")));
}

void run_scc_count(const ExperimentConfig& cfg, Artifacts& out) {
  const ExperimentParams& p = cfg.params;
  const Table table = scc_count_experiment(p.K, p.d, p.T, p.grid, p.trials, p.seed, p.workers);
  out.file("aggregate.csv", table_csv(table));
  // At the largest n, every graph should have collapsed to one SCC.
  const int n_last = p.grid.back();
  const auto collapsed = run_trials(p.trials, p.workers, [&](int trial) {
    const std::uint64_t s = mix_seed(p.seed, (p.grid.size() - 1) * 100003 + static_cast<std::uint64_t>(trial));
    const EmbeddingTable E = make_embeddings(p.K, p.d, EmbeddingKind::UnitSphere, mix_seed(s, 1));
    const Dataset ds = gen_dataset(E, std::nullopt, n_last, p.T, GenMode::Cyclic, mix_seed(s, 2));
    const auto decomps = scc_all(build_tpgs(ds));
    return static_cast<double>(total_scc_count(decomps) == static_cast<int>(decomps.size()));
  });
  double frac = 0.0;
  for (double c : collapsed) frac += c;
  frac /= std::max(p.trials, 1);
  Json rows = Json::array();
  for (const auto& r : table) rows.push_back({{"n", r.x}, {"mean", r.mean}, {"stddev", r.stddev}});
  out.summary["table"] = rows;
  out.summary["collapsed_fraction_at_max_n"] = frac;
  const double need = threshold(cfg, "min_collapsed_fraction");
  out.check(frac >= need, "collapsed fraction " + fmt(frac) + " < " + fmt(need));
}

void run_feasibility(const ExperimentConfig& cfg, Artifacts& out) {
  const ExperimentParams& p = cfg.params;
  FeasibilityConfig fc;
  fc.K = p.K;
  fc.T = p.T;
  fc.n = p.n;
  fc.d_grid = p.grid;
  fc.trials = p.trials;
  fc.iters = p.iters;
  fc.eta = p.eta;
  fc.epsilon = p.epsilon;
  fc.seed = p.seed;
  fc.workers = p.workers;
  const Table table = feasibility_experiment(fc);
  out.file("aggregate.csv", table_csv(table));
  Json rows = Json::array();
  double at_K = kNaN;
  for (const auto& r : table) {
    rows.push_back({{"d", r.x}, {"mean", r.mean}, {"stddev", r.stddev}});
    if (static_cast<int>(r.x) == p.K) at_K = r.mean;
  }
  out.summary["table"] = rows;
  out.summary["proportion_at_K"] = num(at_K);
  const double tol = threshold(cfg, "max_gap_at_K");
  out.check(std::abs(at_K - 1.0) <= tol, "proportion at d=K " + fmt(at_K) + " not within " + fmt(tol) + " of 1");
}

void run_rate_check(const ExperimentConfig& cfg, Artifacts& out) {
  const ExperimentParams& p = cfg.params;
  struct RateTrial {
    std::string csv;
    int violations = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    double eta = 0.0;
  };
  const auto trials = map_trials<RateTrial>(p, [&](int t) {
    const Dataset ds = make_trial(p, GenMode::Cyclic, trial_seed(p, t));
    const Geometry g = analyze_geometry(ds);
    const double L = lipschitz_log(ds);
    RateTrial r;
    r.eta = p.eta > 0.0 ? p.eta : 1.0 / L;
    TrainConfig tc;
    tc.eta = r.eta;
    tc.iters = p.iters;
    tc.normalized = false;
    tc.record_every = p.record_every;
    const TrainTrace tr = train_gd(ds, tc);
    const RateBoundInputs in{compute_xi(ds, g.sets, g.svm.W), ds.embedding.e_max(), g.wfin.W.norm(), ds.T_max()};
    const EtaSchedule sched{EtaSchedule::Kind::Constant, r.eta};
    std::ostringstream csv;
    csv << "tau,gap,bound\n";
    for (const auto& row : tr.rows) {
      if (row.iter < 1) continue;
      const double bound = rate_bound(in, row.iter, sched);
      const double gap = row.loss - g.loss_inf;
      csv << row.iter << ',' << fmt(gap) << ',' << fmt(bound) << '\n';
      r.violations += gap > bound;
      r.min_slack = std::min(r.min_slack, bound - gap);
    }
    r.csv = csv.str();
    return r;
  });
  int violations = 0;
  double min_slack = std::numeric_limits<double>::infinity();
  for (int t = 0; t < p.trials; ++t) {
    out.file(trial_name("rate", t), trials[t].csv);
    violations += trials[t].violations;
    min_slack = std::min(min_slack, trials[t].min_slack);
  }
  out.summary["bound_violations"] = violations;
  out.summary["min_slack"] = num(min_slack);
  const double allowed = threshold(cfg, "max_violations");
  out.check(violations <= allowed, std::to_string(violations) + " rate-bound violations");
}

void run_reg_path(const ExperimentConfig& cfg, Artifacts& out) {
  const ExperimentParams& p = cfg.params;
  const std::vector<double> radii = p.radii;
  struct PathTrial {
    std::string csv;
    double final_value = kNaN;
    bool monotone = true;
  };
  const double slack = threshold(cfg, "monotone_slack");
  const auto run = [&](GenMode mode, std::uint64_t stream_base) {
    return map_trials<PathTrial>(p, [&, mode, stream_base](int t) {
      const Dataset ds = make_trial(p, mode, trial_seed(p, stream_base + t));
      const Geometry g = analyze_geometry(ds);
      RegPathConfig rc;
      rc.loss = p.loss;
      rc.seed = mix_seed(p.seed, stream_base + t);
      const auto path = reg_path(ds, radii, rc);
      const bool has_svm = g.svm.W.norm() > 0.0;
      PathTrial r;
      std::ostringstream csv;
      csv << "R,w_norm,loss,corr_svm,dist_fin,grad_map\n";
      double prev = -2.0;
      for (std::size_t k = 0; k < path.size(); ++k) {
        const auto& pt = path[k];
        const double c = has_svm && pt.W.norm() > 0.0 ? correlation(pt.W, g.svm.W) : kNaN;
        const double dd = (g.subspaces.fin.project(pt.W) - g.wfin.W).norm();
        csv << fmt(pt.R) << ',' << fmt(pt.W.norm()) << ',' << fmt(pt.loss) << ',' << fmt(c) << ',' << fmt(dd) << ','
            << fmt(pt.grad_map) << '\n';
        if (k >= 3 && !std::isnan(c) && c < prev - slack) r.monotone = false;
        if (!std::isnan(c)) prev = c;
        r.final_value = mode == GenMode::Acyclic ? c : dd;
      }
      r.csv = csv.str();
      return r;
    });
  };
  const auto acyclic = run(GenMode::Acyclic, 0);
  const auto cyclic = run(GenMode::Cyclic, 1000000);
  std::vector<double> corr, dist;
  int non_monotone = 0;
  for (int t = 0; t < p.trials; ++t) {
    out.file(trial_name("path_acyclic", t), acyclic[t].csv);
    out.file(trial_name("path_cyclic", t), cyclic[t].csv);
    corr.push_back(acyclic[t].final_value);
    dist.push_back(cyclic[t].final_value);
    non_monotone += !acyclic[t].monotone;
  }
  const double min_corr = *std::min_element(corr.begin(), corr.end());
  const double max_dist = *std::max_element(dist.begin(), dist.end());
  out.summary["mean_final_corr"] = num(mean_defined(corr));
  out.summary["min_final_corr"] = num(min_corr);
  out.summary["mean_final_dist"] = num(mean_defined(dist));
  out.summary["max_final_dist"] = num(max_dist);
  out.summary["non_monotone_trials"] = non_monotone;
  out.check(non_monotone == 0, std::to_string(non_monotone) + " acyclic paths lose correlation after the third radius");
  out.check(min_corr >= threshold(cfg, "min_final_corr"), "final corr " + fmt(min_corr) + " below threshold");
  out.check(max_dist <= threshold(cfg, "max_final_dist"), "final cyclic dist " + fmt(max_dist) + " above threshold");
}

void dispatch(const ExperimentConfig& cfg, Artifacts& out) {
  const std::string& n = cfg.name;
  if (n == "cyclic-global") return run_convergence(cfg, GenMode::Cyclic, Closure::Transitive, false, out);
  if (n == "acyclic-global") return run_convergence(cfg, GenMode::Acyclic, Closure::Transitive, false, out);
  if (n == "large-k") return run_convergence(cfg, GenMode::Cyclic, Closure::DirectEdges, false, out);
  if (n == "local-squared" || n == "local-ce") return run_convergence(cfg, GenMode::Cyclic, Closure::Transitive, true, out);
  if (n == "scc-count") return run_scc_count(cfg, out);
  if (n == "feasibility") return run_feasibility(cfg, out);
  if (n == "rate-check") return run_rate_check(cfg, out);
  if (n == "reg-path") return run_reg_path(cfg, out);
  throw Error(ErrorKind::ConfigError, "unknown experiment '" + n + "'");
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::ConfigError:
    case ErrorKind::SchemaViolation:
    case ErrorKind::IoError:
    case ErrorKind::InvalidDims:
      return kExitConfig;
    default:
      return kExitNumeric;
  }
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"cyclic-global", "acyclic-global", "large-k",   "scc-count", "feasibility",
                                              "local-squared", "local-ce",       "rate-check", "reg-path"};
  return names;
}

ExperimentConfig default_experiment(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  ExperimentParams& p = c.params;
  if (name == "cyclic-global") {
    c.thresholds = {{"min_mean_corr", 0.95}, {"max_mean_dist", 0.05}};
  } else if (name == "acyclic-global") {
    p.K = 8, p.d = 8, p.n = 4, p.T = 6;
    c.thresholds = {{"min_mean_corr", 0.97}};
  } else if (name == "large-k") {
    p.K = 1000, p.d = 32, p.n = 16, p.T = 64;
    p.head = "masked";
    p.trials = 4;
    p.record_every = 100;
    c.thresholds = {{"min_mean_corr", 0.95}};
  } else if (name == "scc-count") {
    p.K = 8, p.d = 8, p.T = 8;
    p.head = "masked";
    p.grid = powers_of_two(1, 512);
    c.thresholds = {{"min_collapsed_fraction", 1.0}};
  } else if (name == "feasibility") {
    p.K = 32, p.n = 16, p.T = 16;
    p.eta = 0.1;
    p.head = "masked";
    p.grid = {1, 2, 4, 8, 16, 32, 48};
    c.thresholds = {{"max_gap_at_K", 0.02}};
  } else if (name == "local-squared" || name == "local-ce") {
    p.K = 8, p.d = 8, p.n = 4, p.T = 6;
    p.eta = 0.1;
    p.head = "general_argmax";
    p.loss = name == "local-squared" ? LossKind::Squared : LossKind::CrossEntropy;
    c.thresholds = {{"ordinal_slack", 0.0}};
  } else if (name == "rate-check") {
    p.eta = 0.0;  // 1/L
    p.iters = 100000;
    p.trials = 5;
    p.normalized = false;
    p.record_every = 100;
    c.thresholds = {{"max_violations", 0.0}};
  } else if (name == "reg-path") {
    p.K = 8, p.d = 8, p.n = 4, p.T = 6;
    p.trials = 10;
    p.radii = geometric_radii();
    c.thresholds = {{"min_final_corr", 0.95}, {"max_final_dist", 0.1}, {"monotone_slack", 1e-9}};
  } else {
    throw Error(ErrorKind::ConfigError, "unknown experiment '" + name + "'");
  }
  c.output_dir = "runs/" + name;
  return c;
}

void apply_json(ExperimentConfig& cfg, const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "experiment config must be a JSON object");
  try {
    if (j.contains("name")) cfg.name = j.at("name").get<std::string>();
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("thresholds"))
      for (const auto& [k, v] : j.at("thresholds").items()) cfg.thresholds[k] = v.get<double>();
    const Json& src = j.contains("params") ? j.at("params") : j;
    ExperimentParams& p = cfg.params;
    const auto take = [&](const char* key, auto& field) {
      if (src.contains(key)) field = src.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("K", p.K);
    take("d", p.d);
    take("n", p.n);
    take("T", p.T);
    take("eta", p.eta);
    take("iters", p.iters);
    take("trials", p.trials);
    take("seed", p.seed);
    take("head", p.head);
    take("embedding", p.embedding);
    take("noise", p.noise);
    take("normalized", p.normalized);
    take("record_every", p.record_every);
    take("workers", p.workers);
    take("grid", p.grid);
    take("radii", p.radii);
    take("epsilon", p.epsilon);
    if (src.contains("loss")) p.loss = parse_loss(src.at("loss").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("bad config value: ") + e.what());
  }
}

Json to_json(const ExperimentConfig& cfg) {
  const ExperimentParams& p = cfg.params;
  Json params = {{"K", p.K},         {"d", p.d},
                 {"n", p.n},         {"T", p.T},
                 {"eta", p.eta},     {"iters", p.iters},
                 {"trials", p.trials}, {"seed", p.seed},
                 {"loss", to_string(p.loss)}, {"head", p.head},
                 {"embedding", p.embedding}, {"noise", p.noise},
                 {"normalized", p.normalized}, {"record_every", p.record_every},
                 {"grid", p.grid},   {"radii", p.radii},
                 {"epsilon", p.epsilon}};
  Json th = Json::object();
  for (const auto& [k, v] : cfg.thresholds) th[k] = v;
  return {{"name", cfg.name}, {"params", params}, {"thresholds", th}, {"output_dir", cfg.output_dir}};
}

void validate(const ExperimentConfig& cfg) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.name) == names.end())
    throw Error(ErrorKind::ConfigError, "unknown experiment '" + cfg.name + "'");
  const ExperimentParams& p = cfg.params;
  const auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorKind::ConfigError, msg);
  };
  need(p.K >= 1 && p.d >= 1 && p.n >= 1 && p.T >= 1, "K, d, n, T must be positive");
  need(p.trials >= 1, "trials must be >= 1");
  need(p.iters >= 1, "iters must be >= 1");
  need(p.record_every >= 1, "record_every must be >= 1");
  need(p.workers >= 1, "workers must be >= 1");
  need(std::isfinite(p.eta) && p.eta >= 0.0, "eta must be finite and >= 0");
  need(p.eta > 0.0 || cfg.name == "rate-check", "eta must be > 0 (0 means 1/L for rate-check only)");
  need(p.noise >= 0.0, "noise must be >= 0");
  need(p.epsilon > 0.0 && p.epsilon < 1.0, "epsilon must lie in (0, 1)");
  parse_head(p.head);
  parse_embedding(p.embedding);
  if (p.embedding == "orthonormal") need(p.K <= p.d, "orthonormal embeddings need K <= d");
  if (cfg.name == "scc-count" || cfg.name == "feasibility") {
    need(!p.grid.empty(), "grid must be non-empty");
    need(std::is_sorted(p.grid.begin(), p.grid.end()) && p.grid.front() >= 1, "grid must be increasing and positive");
  }
  if (cfg.name == "feasibility")
    need(std::find(p.grid.begin(), p.grid.end(), p.K) != p.grid.end(), "feasibility grid must contain d = K");
  if (cfg.name == "reg-path") {
    need(!p.radii.empty() && p.radii.front() > 0.0, "radii must be positive");
    need(std::adjacent_find(p.radii.begin(), p.radii.end(), std::greater_equal<double>()) == p.radii.end(),
         "radii must be strictly increasing");
  }
  if (cfg.name == "local-squared" || cfg.name == "local-ce" || cfg.name == "rate-check")
    need(p.head != "masked" || p.loss != LossKind::CrossEntropy, "cross-entropy needs a classifier head");
  if (cfg.name == "rate-check") {
    need(p.loss == LossKind::Log && p.head != "general_argmax", "rate-check covers log loss with indicator scores");
    need(p.T <= 16, "the log-loss smoothness constant is only certified for T <= 16");
  }
}

std::string trace_csv(const TrainTrace& trace) {
  std::ostringstream os;
  os << "iter,loss,loss_bar,grad_norm,w_norm,corr_svm,dist_fin\n";
  for (const auto& r : trace.rows)
    os << r.iter << ',' << fmt(r.loss) << ',' << fmt(r.loss_bar) << ',' << fmt(r.grad_norm) << ',' << fmt(r.w_norm)
       << ',' << fmt(r.corr_svm) << ',' << fmt(r.dist_fin) << '\n';
  return os.str();
}

std::string table_csv(const Table& table) {
  std::ostringstream os;
  os << "x,mean,stddev,trials\n";
  for (const auto& r : table) os << fmt(r.x) << ',' << fmt(r.mean) << ',' << fmt(r.stddev) << ',' << r.trials << '\n';
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult res;
  const auto t0 = std::chrono::steady_clock::now();
  Artifacts art;
  try {
    validate(cfg);
    dispatch(cfg, art);
  } catch (const Error& e) {
    res.exit_code = exit_code_for(e.kind());
    res.summary = {{"experiment", cfg.name}, {"error", e.what()}};
    return res;
  }
  res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  res.violations = art.violations;
  res.exit_code = art.violations.empty() ? kExitOk : kExitAcceptance;
  res.summary = art.summary;
  res.summary["experiment"] = cfg.name;
  res.summary["passed"] = art.violations.empty();
  res.summary["violations"] = art.violations;

  try {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);
    for (const auto& [name, text] : art.files) write_text_file((dir / name).string(), text);
    write_json_file((dir / "summary.json").string(), res.summary);
    Json manifest = to_json(cfg);
    manifest["version"] = ATTNLAB_VERSION;
    manifest["workers"] = cfg.params.workers;
    write_json_file((dir / "manifest.json").string(), manifest);
    write_json_file((dir / "timing.json").string(), {{"wall_ms", res.wall_ms}, {"workers", cfg.params.workers}});
  } catch (const std::exception& e) {
    res.exit_code = kExitConfig;
    res.summary["error"] = std::string("writing artifacts: ") + e.what();
  }
  return res;
}

}  // namespace attnlab
