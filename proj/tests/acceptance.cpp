// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.
#include "attnlab/experiments.hpp"
#include "attnlab/selftest.hpp"
#include "oracles.hpp"

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

using namespace attnlab;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kCyclicMinCorr = 0.95;
constexpr double kCyclicMaxDist = 0.05;
constexpr double kAcyclicMinCorr = 0.97;
constexpr double kDescentSlack = 1e-10;
constexpr double kChordSlack = 1e-9;
constexpr double kStrictGap = 1e-8;
constexpr double kSvmEq = 1e-6;
constexpr double kSvmIneq = 1.0 - 1e-6;
constexpr double kSvmKkt = 1e-5;
constexpr double kSvmOracle = 1e-5;
constexpr double kOrtho = 1e-8;
constexpr double kFeasGap = 0.02;
constexpr double kReduction = 1e-6;
constexpr double kFdRel = 1e-5;
constexpr double kPathAgree = 1e-12;
constexpr double kRegMinCorr = 0.95;
constexpr double kRegMaxDist = 0.1;
constexpr double kStasis = 1e-9;
constexpr double kLargeKMinCorr = 0.95;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double field(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::numeric_limits<double>::quiet_NaN();
  return it->get<double>();
}

fs::path run_root() {
  static const fs::path root = [] {
    fs::path r = fs::temp_directory_path() / ("attnlab_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(r);
    fs::create_directories(r);
    return r;
  }();
  return root;
}

Json experiment(const std::string& name, const std::function<void(ExperimentConfig&)>& tweak = {}) {
  ExperimentConfig cfg = default_experiment(name);
  cfg.output_dir = (run_root() / name).string();
  cfg.params.workers = 1;
  if (tweak) tweak(cfg);
  const ExperimentResult r = run_experiment(cfg);
  if (r.exit_code == kExitConfig || r.exit_code == kExitNumeric)
    throw std::runtime_error(name + " exited " + std::to_string(r.exit_code) + ": " + r.summary.dump());
  return r.summary;
}

Dataset make(std::uint64_t seed, int K, int d, int n, int T, GenMode mode, std::optional<HeadKind> head,
             EmbeddingKind ek = EmbeddingKind::UnitSphere) {
  const EmbeddingTable E = make_embeddings(K, d, ek, mix_seed(seed, 1));
  std::optional<ClassifierHead> h;
  if (head) h = make_head(E, *head, 0.1, mix_seed(seed, 3));
  return gen_dataset(E, std::move(h), n, T, mode, mix_seed(seed, 2));
}

Mat gaussian(Rng& rng, int d, double scale) {
  Mat W(d, d);
  for (int k = 0; k < d * d; ++k) W(k) = scale * rng.normal();
  return W;
}

Mat rows_of(const std::vector<Triple>& ts, const EmbeddingTable& E) {
  Mat A(static_cast<int>(ts.size()), E.d() * E.d());
  for (std::size_t a = 0; a < ts.size(); ++a) A.row(a) = oracle::diff_outer(E.E(), ts[a].i, ts[a].j, ts[a].k).transpose();
  return A;
}

Vec vec(const Mat& W) { return Eigen::Map<const Vec>(W.data(), W.size()); }

// Residuals recomputed from oracle generators: max |B w|, min A w, KKT.
struct Indep {
  double eq = 0.0, ineq = std::numeric_limits<double>::infinity(), kkt = 0.0;
};

Indep independent_residuals(const ConstraintSet& cs, const EmbeddingTable& E, const Mat& W,
                            const std::vector<double>& lambda) {
  Indep r;
  const Mat A = rows_of(cs.inequalities, E), B = rows_of(cs.equalities, E);
  const Vec w = vec(W);
  if (B.rows() > 0) r.eq = (B * w).cwiseAbs().maxCoeff();
  if (A.rows() > 0) r.ineq = (A * w).minCoeff();
  Vec res = w;
  if (A.rows() > 0) res -= A.transpose() * Eigen::Map<const Vec>(lambda.data(), A.rows());
  if (B.rows() > 0) res -= B.transpose() * B.transpose().jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(res);
  r.kkt = res.norm();
  return r;
}

Outcome c1_cyclic() {
  const Json s = experiment("cyclic-global");
  const double mc = field(s, "mean_corr"), md = field(s, "mean_dist");
  return {mc >= kCyclicMinCorr && md <= kCyclicMaxDist,
          "20 trials: mean corr " + num(mc) + " (>= 0.95), mean dist " + num(md) + " (<= 0.05)"};
}

Outcome c2_acyclic() {
  const Json s = experiment("acyclic-global");
  const double mc = field(s, "mean_corr");
  return {mc >= kAcyclicMinCorr, "20 trials: mean corr " + num(mc) + " (>= 0.97)"};
}

Outcome c3_descent() {
  int violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < 20; ++c) {
    const Dataset ds = make(mix_seed(3, c), 6, 8, 6, 4, GenMode::Cyclic, HeadKind::Tied);
    const double eta = 1.0 / lipschitz_log(ds);
    Mat W = Mat::Zero(8, 8);
    LossGrad cur = loss_and_grad(W, ds, LossKind::Log);
    for (int step = 0; step < 500; ++step) {
      W -= eta * cur.grad;
      const LossGrad next = loss_and_grad(W, ds, LossKind::Log);
      const double excess = next.loss - cur.loss + 0.5 * eta * cur.grad.squaredNorm();
      worst = std::max(worst, excess);
      violations += excess > kDescentSlack;
      cur = next;
    }
  }
  return {violations == 0, "20 x 500 steps: " + std::to_string(violations) + " violations, worst excess " + num(worst)};
}

Outcome c4_convexity() {
  Rng rng(4);
  int bad = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < 1000; ++c) {
    const Dataset ds = make(mix_seed(4, c % 50), 6, 8, 6, 4, GenMode::Cyclic, HeadKind::Tied);
    const Mat A = gaussian(rng, 8, 3.0), B = gaussian(rng, 8, 3.0);
    const double lam = rng.uniform();
    const double gap = oracle::straight_loss(lam * A + (1 - lam) * B, ds, LossKind::Log) -
                       (lam * oracle::straight_loss(A, ds, LossKind::Log) + (1 - lam) * oracle::straight_loss(B, ds, LossKind::Log));
    worst = std::max(worst, gap);
    bad += gap > kChordSlack;
  }
  int strict_cases = 0, strict_bad = 0;
  double min_gap = std::numeric_limits<double>::infinity();
  for (int c = 0; c < 200 && strict_cases < 50; ++c) {
    const Dataset ds = make(mix_seed(40, c), 6, 8, 6, 4, GenMode::Cyclic, HeadKind::Tied);
    const Geometry g = analyze_geometry(ds);
    if (g.subspaces.fin.dim() == 0) continue;
    ++strict_cases;
    const Mat A = g.subspaces.fin.project(gaussian(rng, 8, 1.0));
    Mat D = g.subspaces.fin.project(gaussian(rng, 8, 1.0));
    D *= std::max(1.0, 0.1 / D.norm());
    const Mat B = A + D;
    const double gap = 0.5 * (loss(A, ds, LossKind::Log) + loss(B, ds, LossKind::Log)) - loss(0.5 * (A + B), ds, LossKind::Log);
    min_gap = std::min(min_gap, gap);
    strict_bad += gap < kStrictGap;
  }
  return {bad == 0 && strict_bad == 0 && strict_cases > 0,
          "1000 chords: worst excess " + num(worst) + "; " + std::to_string(strict_cases) +
              " S_fin pairs: min midpoint gap " + num(min_gap) + " (>= 1e-8)"};
}

Outcome c5_negative_correlation() {
  Rng rng(5);
  int tested = 0, bad = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (int c = 0; tested < 200; ++c) {
    const Dataset ds = make(mix_seed(5, c), 6, 8, 6, 4, c % 2 ? GenMode::Cyclic : GenMode::Acyclic, HeadKind::Tied);
    const Geometry g = analyze_geometry(ds);
    if (g.svm.norm() == 0.0) continue;
    for (int r = 0; r < 10 && tested < 200; ++r, ++tested) {
      const Mat W = gaussian(rng, 8, 0.5 + r);
      const double ip = frob_dot(grad(W, ds, LossKind::Log), g.svm.W);
      worst = std::max(worst, ip);
      bad += !(ip < 0.0);
    }
  }
  return {bad == 0, "200 random W: max <grad, W^svm> " + num(worst)};
}

Outcome c6_svm() {
  int solved = 0, bad = 0, compared = 0, oracle_bad = 0;
  double worst_kkt = 0.0, worst_oracle = 0.0, worst_ortho = 0.0;
  for (int c = 0; c < 200; ++c) {
    const std::uint64_t s = mix_seed(6, c);
    const int K = 3 + c % 4, d = 3 + (c / 4) % 6, n = 2 + c % 5, T = 2 + (c / 3) % 4;
    const Dataset ds = make(s, K, d, n, T, c % 3 ? GenMode::Cyclic : GenMode::Acyclic, std::nullopt);
    const TpgMap tpgs = build_tpgs(ds);
    const ConstraintSet cs = build_constraints(tpgs, scc_all(tpgs));
    const SvmSolution sol = solve_graph_svm(cs, ds.embedding);
    const Indep r = independent_residuals(cs, ds.embedding, sol.W, sol.multipliers);
    const bool ok = sol.status == SvmStatus::Solved && r.eq <= kSvmEq && r.ineq >= kSvmIneq && r.kkt <= kSvmKkt;
    solved += sol.status == SvmStatus::Solved;
    bad += !ok;
    worst_kkt = std::max(worst_kkt, r.kkt);
    const Subspaces sub = build_subspaces(tpgs, cs, ds.embedding);
    const double p = sub.fin.project(sol.W).norm();
    worst_ortho = std::max(worst_ortho, p);
    bad += p > kOrtho;
    if (cs.equalities.size() + cs.inequalities.size() <= 20 && d <= 6) {
      ++compared;
      const auto ref = oracle::active_set_qp(rows_of(cs.equalities, ds.embedding), rows_of(cs.inequalities, ds.embedding));
      if (!ref) {
        ++oracle_bad;
        continue;
      }
      const Mat Wref = Eigen::Map<const Mat>(ref->data(), d, d);
      double diff = std::abs(sol.norm() - Wref.norm());
      const Mat A = rows_of(cs.inequalities, ds.embedding);
      if (A.rows() > 0) diff = std::max(diff, (A * (vec(sol.W) - *ref)).cwiseAbs().maxCoeff());
      worst_oracle = std::max(worst_oracle, diff);
      oracle_bad += diff > kSvmOracle;
    }
  }
  return {bad == 0 && oracle_bad == 0 && compared > 0,
          "200 instances: " + std::to_string(solved) + " solved, worst KKT " + num(worst_kkt) + ", worst |Pi_fin W| " +
              num(worst_ortho) + "; oracle on " + std::to_string(compared) + ": worst diff " + num(worst_oracle)};
}

Outcome c7_feasibility() {
  int ok = 0, total = 0;
  for (int c = 0; total < 100; ++c) {
    const int K = 3 + c % 6, d = K + (c / 6) % 4;
    const Dataset ds = make(mix_seed(7, c), K, d, 4 + c % 5, 3 + c % 4, GenMode::Cyclic, std::nullopt);
    if (oracle::svd_rank(ds.embedding.E()) != K) continue;
    ++total;
    const TpgMap tpgs = build_tpgs(ds);
    const SccMap dec = scc_all(tpgs);
    const ConstraintSet cs = build_constraints(tpgs, dec);
    const Feasibility f = check_feasibility(cs, ds.embedding, dec);
    if (!f.feasible || !f.from_certificate || !f.certificate) continue;
    const Indep r = independent_residuals(cs, ds.embedding, *f.certificate, {});
    ok += r.eq <= kSvmEq && r.ineq >= kSvmIneq;
  }
  const Json s = experiment("feasibility");
  const double at_K = field(s, "proportion_at_K");
  return {ok == total && std::abs(at_K - 1.0) <= kFeasGap,
          std::to_string(ok) + "/" + std::to_string(total) + " certificates verified; sweep proportion at d = K: " +
              num(at_K) + " (1 +- 0.02)"};
}

Outcome c8_reduction() {
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const int K = 3 + c % 5;
    const Dataset ds = make(mix_seed(8, c), K, K + c % 3, 5, 4, GenMode::Cyclic, std::nullopt, EmbeddingKind::Orthonormal);
    const TpgMap tpgs = build_tpgs(ds);
    const ConstraintSet cs = build_constraints(tpgs, scc_all(tpgs));
    const Mat joint = solve_graph_svm(cs, ds.embedding).W;
    Mat sum = Mat::Zero(ds.embedding.d(), ds.embedding.d());
    for (const auto& [k, Wk] : solve_per_last_token(cs, ds.embedding).parts) sum += Wk;
    worst = std::max(worst, (joint - sum).norm());
  }
  return {worst <= kReduction, "50 instances: max |W_joint - sum W_k| " + num(worst)};
}

Outcome c9_gradients() {
  Rng rng(9);
  const LossKind kinds[] = {LossKind::Log, LossKind::Squared, LossKind::CrossEntropy};
  const std::optional<HeadKind> heads[] = {HeadKind::Tied, HeadKind::GeneralArgmax, std::nullopt};
  double worst_fd = 0.0, worst_path = 0.0;
  for (int c = 0; c < 50; ++c) {
    const LossKind k = kinds[c % 3];
    std::optional<HeadKind> h = heads[(c / 3) % 3];
    if (k == LossKind::CrossEntropy && !h) h = HeadKind::Tied;
    if (k == LossKind::Log && h == HeadKind::GeneralArgmax) h = HeadKind::Tied;
    const Dataset ds = make(mix_seed(9, c), 5, 6, 4, 4, GenMode::Cyclic, h);
    const Mat W = gaussian(rng, 6, 0.5);
    const Mat g = grad(W, ds, k);
    const Mat fd = oracle::central_difference([&](const Mat& V) { return oracle::straight_loss(V, ds, k); }, W, 1e-5);
    worst_fd = std::max(worst_fd, (fd - g).norm() / std::max(g.norm(), 1e-8));
  }
  for (int c = 0; c < 50; ++c) {
    const Dataset ds = make(mix_seed(90, c), 6, 8, 6, 5, GenMode::Cyclic,
                            c % 2 ? std::optional<HeadKind>(HeadKind::Tied) : std::nullopt);
    const Mat W = gaussian(rng, 8, 1.0);
    const Mat a = loss_and_grad_reduced(W, ds, LossKind::Log).grad, b = loss_and_grad_general(W, ds, LossKind::Log).grad;
    worst_path = std::max(worst_path, (a - b).cwiseAbs().maxCoeff());
  }
  return {worst_fd < kFdRel && worst_path <= kPathAgree,
          "50 FD cases: max rel err " + num(worst_fd) + "; reduced vs general: max diff " + num(worst_path)};
}

Outcome c10_scc() {
  Rng rng(10);
  int mismatched = 0;
  for (int c = 0; c < 500; ++c) {
    const int m = 1 + static_cast<int>(rng.index(12));
    const double p = 0.05 + 0.4 * rng.uniform();
    std::vector<TokenId> nodes;
    for (int i = 0; i < m; ++i) nodes.push_back(5 * i + 2);
    std::vector<std::pair<TokenId, TokenId>> edges;
    std::vector<std::pair<int, int>> local;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        if (i != j && rng.uniform() < p) {
          edges.emplace_back(nodes[i], nodes[j]);
          local.emplace_back(i, j);
        }
    const SccDecomposition d = scc(make_graph(0, edges, nodes));
    const oracle::Reach R = oracle::closure(m, local);
    bool same = true;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) same &= (d.component(nodes[i]) == d.component(nodes[j])) == (R[i][j] && R[j][i]);
    mismatched += !same;
  }
  return {mismatched == 0, "500 graphs: " + std::to_string(mismatched) + " partition mismatches"};
}

Outcome c11_rate() {
  const Json s = experiment("rate-check");
  const double v = field(s, "bound_violations"), slack = field(s, "min_slack");
  return {v == 0.0, "5 trials to tau = 1e5: " + num(v) + " violations, min slack " + num(slack)};
}

Outcome c12_regpath() {
  const Json s = experiment("reg-path");
  const double corr = field(s, "min_final_corr"), dist = field(s, "max_final_dist"), nm = field(s, "non_monotone_trials");
  return {corr >= kRegMinCorr && dist <= kRegMaxDist && nm == 0.0,
          "10 trials: min final corr " + num(corr) + " (>= 0.95), non-monotone " + num(nm) + ", max cyclic dist " +
              num(dist) + " (<= 0.1)"};
}

Outcome c13_stasis() {
  Rng rng(13);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const Dataset ds = all_labels_dataset(make(mix_seed(13, c), 5, 8, 4, 4, GenMode::Cyclic, HeadKind::Tied));
    const Geometry g = analyze_geometry(ds);
    worst = std::max(worst, g.svm.norm());
    Mat W = gaussian(rng, 8, 0.5);
    const Mat perp0 = g.subspaces.fin.project_complement(W);
    for (int step = 0; step < 500; ++step) {
      const Mat gr = grad(W, ds, LossKind::Log);
      const double eta = c % 2 ? 0.1 : 0.01 / std::max(gr.norm(), 1e-300);
      W -= eta * gr;
      worst = std::max(worst, (g.subspaces.fin.project_complement(W) - perp0).norm());
    }
  }
  return {worst <= kStasis, "20 single-SCC datasets x 500 steps: max complement drift " + num(worst)};
}

Outcome c14_local() {
  const auto ordinal = [](const Json& s, bool& ok) {
    const double cg = field(s, "paired_mean_corr_global"), cl = field(s, "paired_mean_corr_local");
    const double dg = field(s, "mean_dist"), dl = field(s, "mean_dist_local");
    ok = cl >= cg && dl <= dg;
    return "corr local " + num(cl) + " vs global " + num(cg) + ", dist local " + num(dl) + " vs global " + num(dg);
  };
  bool sq_ok = false, ce_ok = false;
  const std::string sq = ordinal(experiment("local-squared"), sq_ok);
  const std::string ce = ordinal(experiment("local-ce"), ce_ok);
  return {sq_ok, "squared: " + sq + (sq_ok ? "" : " [ordinal violated]") + "; cross-entropy (supplementary): " + ce +
                     (ce_ok ? "" : " [ordinal violated]")};
}

Outcome s1_large_k() {
  const Json s = experiment("large-k");
  const double mc = field(s, "mean_corr");
  return {mc >= kLargeKMinCorr, "K = 1000 masked scoring, 4 trials: mean corr " + num(mc) + " (>= 0.95)"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    Outcome (*fn)();
  };
  const Criterion criteria[] = {
      {"1", "cyclic global convergence", c1_cyclic},
      {"2", "acyclic convergence", c2_acyclic},
      {"3", "descent lemma", c3_descent},
      {"4", "convexity", c4_convexity},
      {"5", "negative correlation", c5_negative_correlation},
      {"6", "SVM correctness", c6_svm},
      {"7", "feasibility", c7_feasibility},
      {"8", "reduction lemma", c8_reduction},
      {"9", "gradient correctness", c9_gradients},
      {"10", "SCC oracle", c10_scc},
      {"11", "rate bound", c11_rate},
      {"12", "regularization path", c12_regpath},
      {"13", "zero-SVM stasis", c13_stasis},
      {"14", "local convergence", c14_local},
      {"S1", "large-K masked path (supplementary)", s1_large_k},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s criterion %-2s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  fs::remove_all(run_root());
  return failed == 0 ? 0 : 1;
}
