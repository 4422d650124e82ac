#include "attnlab/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace attnlab {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double correlation(const Mat& W, const Mat& W_ref) {
  const double a = W.norm(), b = W_ref.norm();
  if (a == 0.0 || b == 0.0) throw Error(ErrorKind::ZeroMatrix, "correlation with a zero matrix");
  return std::clamp(frob_dot(W, W_ref) / (a * b), -1.0, 1.0);
}

double EtaSchedule::at(long j) const {
  return kind == Kind::Constant ? eta0 : eta0 / std::sqrt(static_cast<double>(j + 1));
}

double EtaSchedule::sum(long tau) const {
  if (kind == Kind::Constant) return eta0 * static_cast<double>(tau);
  double s = 0.0;
  for (long j = 0; j < tau; ++j) s += at(j);
  return s;
}

double compute_xi(const Dataset& ds, const IndexSets& sets, const Mat& W_svm) {
  const double nrm = W_svm.norm();
  if (nrm == 0.0) return kInf;
  double xi = kInf;
  for (int i = 0; i < ds.n(); ++i) {
    const auto& si = sets[i];
    if (si.R.empty() || si.Rbar.empty()) continue;
    const Sample& s = ds.samples[i];
    const Vec proj = ds.embedding.E() * (W_svm * ds.embedding.row(s.query()).transpose());
    double lo = kInf, hi = -kInf;
    for (int t : si.R) lo = std::min(lo, proj(s.tokens[t]));
    for (int t : si.Rbar) hi = std::max(hi, proj(s.tokens[t]));
    xi = std::min(xi, (lo - hi) / nrm);
  }
  return xi;
}

double rate_bound(const RateBoundInputs& in, long tau, const EtaSchedule& eta) {
  const double t = static_cast<double>(tau);
  const double first = in.T_max * std::exp(2.0 * in.w_fin_norm * in.e_max * in.e_max) / t;
  const double log_term = std::isfinite(in.xi) ? std::pow(std::log(t) / in.xi, 2) : 0.0;
  return first + (in.w_fin_norm * in.w_fin_norm + log_term) / (2.0 * eta.sum(tau));
}

TrainRefs Geometry::refs() const {
  TrainRefs r;
  r.W_svm = svm.W;
  r.S_fin = subspaces.fin;
  r.W_fin = wfin.W;
  r.split = split;
  return r;
}

Geometry analyze_geometry(const Dataset& ds, TpgMap tpgs, const GeometryOptions& opts) {
  Geometry g;
  g.tpgs = std::move(tpgs);
  g.decomps = scc_all(g.tpgs);
  g.sets = index_sets(ds, g.decomps);
  g.constraints = build_constraints(g.tpgs, g.decomps, opts.closure);
  g.subspaces = build_subspaces(g.tpgs, g.constraints, ds.embedding);
  g.svm = solve_graph_svm(g.constraints, ds.embedding, opts.svm);
  g.split = cyclic_split(ds, g.decomps);
  g.wfin = train_wfin(g.split, g.subspaces.fin, opts.wfin);
  g.loss_inf = loss_inf(g.split, g.wfin.W);
  return g;
}

Geometry analyze_geometry(const Dataset& ds, const GeometryOptions& opts) {
  return analyze_geometry(ds, build_tpgs(ds), opts);
}

TpgMap pseudo_tpgs(const Mat& W_gd, const Dataset& ds, const PseudoTpgConfig& cfg) {
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0)) throw Error(ErrorKind::ConfigError, "epsilon must lie in (0, 1)");
  std::map<TokenId, std::vector<std::pair<TokenId, TokenId>>> edges;
  std::map<TokenId, std::vector<TokenId>> nodes;
  for (int i = 0; i < ds.n(); ++i) {
    const Sample& s = ds.samples[i];
    const Forward f = forward(ds.X(i), W_gd, ds.embedding.row(s.query()).transpose());
    auto& e = edges[s.query()];
    auto& v = nodes[s.query()];
    v.insert(v.end(), s.tokens.begin(), s.tokens.end());
    for (int t1 = 0; t1 < s.length(); ++t1) {
      if (f.probs(t1) < cfg.epsilon) continue;
      for (TokenId x : s.tokens)
        if (x != s.tokens[t1]) e.emplace_back(s.tokens[t1], x);
    }
  }
  TpgMap out;
  for (auto& [k, e] : edges) out.emplace(k, make_graph(k, e, nodes[k]));
  return out;
}

Dataset pseudo_label_dataset(const Mat& W_gd, const Dataset& ds, const PseudoTpgConfig& cfg) {
  Dataset out{ds.embedding, ds.head, {}, ds.seed};
  for (int i = 0; i < ds.n(); ++i) {
    const Sample& s = ds.samples[i];
    const Forward f = forward(ds.X(i), W_gd, ds.embedding.row(s.query()).transpose());
    std::set<TokenId> retained;
    for (int t = 0; t < s.length(); ++t)
      if (f.probs(t) >= cfg.epsilon) retained.insert(s.tokens[t]);
    for (TokenId r : retained) {
      Sample copy = s;
      copy.label = r;
      out.samples.push_back(std::move(copy));
    }
  }
  return out;
}

ConvergenceReport convergence_report(const TrainTrace& trace, const ReportRefs& refs) {
  ConvergenceReport r;
  if (trace.rows.empty()) return r;
  const TraceRow& last = trace.rows.back();
  if (std::isfinite(last.corr_svm)) r.final_corr = last.corr_svm;
  if (std::isfinite(last.dist_fin)) r.final_dist = last.dist_fin;
  r.final_loss = last.loss;
  if (refs.loss_inf) r.loss_gap = last.loss - *refs.loss_inf;
  double sum = 0.0;
  int count = 0;
  r.zero_gradient = true;
  for (std::size_t k = 0; k < trace.rows.size(); ++k) {
    const TraceRow& row = trace.rows[k];
    if (std::isfinite(row.corr_svm)) {
      sum += row.corr_svm;
      ++count;
    }
    if (row.grad_norm != 0.0) r.zero_gradient = false;
    if (k > 0 && row.loss > trace.rows[k - 1].loss + 1e-10) ++r.descent_violations;
  }
  if (count > 0) r.mean_corr = sum / count;
  const std::size_t start = trace.rows.size() / 2;
  const std::size_t m = trace.rows.size() - start;
  if (m >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t k = start; k < trace.rows.size(); ++k) {
      mx += trace.rows[k].iter;
      my += trace.rows[k].w_norm;
    }
    mx /= m;
    my /= m;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = start; k < trace.rows.size(); ++k) {
      sxy += (trace.rows[k].iter - mx) * (trace.rows[k].w_norm - my);
      sxx += (trace.rows[k].iter - mx) * (trace.rows[k].iter - mx);
    }
    r.norm_slope = sxx > 0.0 ? sxy / sxx : 0.0;
  }
  return r;
}

nlohmann::json to_json(const ConvergenceReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"final_corr", opt(r.final_corr)},
          {"mean_corr", opt(r.mean_corr)},
          {"final_dist", opt(r.final_dist)},
          {"final_loss", r.final_loss},
          {"loss_gap", opt(r.loss_gap)},
          {"descent_violations", r.descent_violations},
          {"zero_gradient", r.zero_gradient},
          {"norm_slope", r.norm_slope}};
}

TableRow summarize(double x, const std::vector<double>& values) {
  TableRow row{x, 0.0, 0.0, static_cast<int>(values.size())};
  if (values.empty()) return row;
  for (double v : values) row.mean += v;
  row.mean /= values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.stddev = std::sqrt(ss / (values.size() - 1));
  }
  return row;
}

int default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::vector<double> run_trials(int trials, int workers, const std::function<double(int)>& fn) {
  std::vector<double> out(std::max(trials, 0));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto work = [&] {
    for (int t = next++; t < trials; t = next++) {
      try {
        out[t] = fn(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n = std::clamp(workers, 1, std::max(trials, 1));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

Table scc_count_experiment(int K, int d, int T, const std::vector<int>& n_grid, int trials, std::uint64_t seed,
                           int workers) {
  Table table;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const int n = n_grid[g];
    const auto values = run_trials(trials, workers, [&](int trial) {
      const std::uint64_t s = mix_seed(seed, g * 100003 + static_cast<std::uint64_t>(trial));
      const EmbeddingTable E = make_embeddings(K, d, EmbeddingKind::UnitSphere, mix_seed(s, 1));
      const Dataset ds = gen_dataset(E, std::nullopt, n, T, GenMode::Cyclic, mix_seed(s, 2));
      return static_cast<double>(total_scc_count(scc_all(build_tpgs(ds))));
    });
    table.push_back(summarize(n, values));
  }
  return table;
}

double retained_fraction(const Mat& W, const Dataset& ds, const SccMap& decomps, double epsilon) {
  const auto masses = eval_masked(W, ds);
  double total = 0.0;
  for (int i = 0; i < ds.n(); ++i) {
    const Sample& s = ds.samples[i];
    const SccDecomposition& d = decomps.at(s.query());
    const int cy = d.component(s.label);
    int both = 0, either = 0;
    for (const auto& [token, mass] : masses[i]) {
      const bool member = d.component(token) == cy;
      const bool kept = mass >= epsilon;
      both += member && kept;
      either += member || kept;
    }
    total += static_cast<double>(both) / either;
  }
  return total / ds.n();
}

Table feasibility_experiment(const FeasibilityConfig& cfg) {
  Table table;
  for (std::size_t g = 0; g < cfg.d_grid.size(); ++g) {
    const int d = cfg.d_grid[g];
    const auto values = run_trials(cfg.trials, cfg.workers, [&](int trial) {
      const std::uint64_t s = mix_seed(cfg.seed, g * 100003 + static_cast<std::uint64_t>(trial));
      const EmbeddingTable E = make_embeddings(cfg.K, d, EmbeddingKind::UnitSphere, mix_seed(s, 1));
      const Dataset ds = gen_dataset(E, std::nullopt, cfg.n, cfg.T, GenMode::Cyclic, mix_seed(s, 2));
      TrainConfig tc;
      tc.eta = cfg.eta;
      tc.iters = cfg.iters;
      tc.normalized = true;
      tc.record_every = cfg.iters;
      const TrainTrace tr = train_gd(ds, tc);
      return retained_fraction(tr.W_final, ds, scc_all(build_tpgs(ds)), cfg.epsilon);
    });
    table.push_back(summarize(d, values));
  }
  return table;
}

}  // namespace attnlab
