#include "attnlab/selftest.hpp"

#include "attnlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <set>
#include <sstream>

namespace attnlab {
namespace {

struct Check {
  bool ok = true;
  double worst = -std::numeric_limits<double>::infinity();
  int cases = 0;
  int failures = 0;

  void add(bool pass, double value) {
    ++cases;
    worst = std::max(worst, value);
    if (!pass) {
      ok = false;
      ++failures;
    }
  }
  std::string detail(const char* metric) const {
    std::ostringstream os;
    os << cases << " cases, " << failures << " failed, worst " << metric << " " << worst;
    return os.str();
  }
};

Dataset small_dataset(std::uint64_t seed, int K, int d, int n, int T, GenMode mode, std::optional<HeadKind> head,
                      EmbeddingKind ek = EmbeddingKind::UnitSphere) {
  const EmbeddingTable E = make_embeddings(K, d, ek, mix_seed(seed, 1));
  std::optional<ClassifierHead> h;
  if (head) h = make_head(E, *head, 0.1, mix_seed(seed, 3));
  return gen_dataset(E, std::move(h), n, T, mode, mix_seed(seed, 2));
}

Mat gaussian(Rng& rng, int d, double scale) {
  Mat W(d, d);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) W(r, c) = scale * rng.normal();
  return W;
}

Mat central_difference(const std::function<double(const Mat&)>& f, const Mat& W, double h) {
  Mat g(W.rows(), W.cols());
  for (int c = 0; c < W.cols(); ++c)
    for (int r = 0; r < W.rows(); ++r) {
      Mat a = W, b = W;
      a(r, c) += h;
      b(r, c) -= h;
      g(r, c) = (f(a) - f(b)) / (2.0 * h);
    }
  return g;
}

PropertyResult gradient_fd(const SelftestOptions& o) {
  Check chk;
  Rng rng(mix_seed(o.seed, 101));
  struct Case {
    LossKind loss;
    std::optional<HeadKind> head;
  };
  const Case cases[] = {{LossKind::Log, HeadKind::Tied},          {LossKind::Log, std::nullopt},
                        {LossKind::Squared, HeadKind::Tied},      {LossKind::Squared, HeadKind::GeneralArgmax},
                        {LossKind::CrossEntropy, HeadKind::Tied}, {LossKind::CrossEntropy, HeadKind::GeneralArgmax}};
  int c = 0;
  for (const Case& cs : cases)
    for (int rep = 0; rep < 2; ++rep, ++c) {
      const Dataset ds = small_dataset(mix_seed(o.seed, 200 + c), 5, 6, 3, 4, GenMode::Cyclic, cs.head);
      const Mat W = gaussian(rng, 6, 0.5);
      Mat g = loss_and_grad(W, ds, cs.loss).grad;
      if (o.corrupt_gradient) g = -g;
      const Mat fd = central_difference([&](const Mat& V) { return loss(V, ds, cs.loss); }, W, 1e-5);
      const double rel = (fd - g).norm() / std::max(g.norm(), 1e-8);
      chk.add(rel < 1e-5, rel);
    }
  return {"gradient-finite-difference", chk.ok, chk.detail("relative error")};
}

PropertyResult gradient_paths(const SelftestOptions& o) {
  Check chk;
  Rng rng(mix_seed(o.seed, 102));
  for (int c = 0; c < 10; ++c) {
    const Dataset ds = small_dataset(mix_seed(o.seed, 300 + c), 5, 6, 4, 5, GenMode::Cyclic,
                                     c % 2 ? std::optional<HeadKind>(HeadKind::Tied) : std::nullopt);
    const Mat W = gaussian(rng, 6, 1.0);
    Mat a = loss_and_grad_reduced(W, ds, LossKind::Log).grad;
    const Mat b = loss_and_grad_general(W, ds, LossKind::Log).grad;
    if (o.corrupt_gradient) a = -a;
    const double diff = (a - b).cwiseAbs().maxCoeff();
    chk.add(diff <= 1e-12, diff);
  }
  return {"gradient-paths-agree", chk.ok, chk.detail("max abs difference")};
}

PropertyResult descent(const SelftestOptions& o) {
  Check chk;
  for (int c = 0; c < 4; ++c) {
    const Dataset ds = small_dataset(mix_seed(o.seed, 400 + c), 5, 6, 4, 4, GenMode::Cyclic, HeadKind::Tied);
    const double eta = 1.0 / lipschitz_log(ds);
    Mat W = Mat::Zero(6, 6);
    LossGrad cur = loss_and_grad(W, ds, LossKind::Log);
    for (int step = 0; step < 200; ++step) {
      W -= eta * cur.grad;
      const LossGrad next = loss_and_grad(W, ds, LossKind::Log);
      const double excess = next.loss - cur.loss + 0.5 * eta * cur.grad.squaredNorm();
      chk.add(excess <= 1e-10, excess);
      cur = next;
    }
  }
  return {"descent-lemma", chk.ok, chk.detail("excess")};
}

PropertyResult convexity(const SelftestOptions& o) {
  Check chords, strict;
  Rng rng(mix_seed(o.seed, 103));
  for (int c = 0; c < 200; ++c) {
    const Dataset ds = small_dataset(mix_seed(o.seed, 500 + c % 10), 5, 6, 4, 4, GenMode::Cyclic, HeadKind::Tied);
    const Mat A = gaussian(rng, 6, 2.0), B = gaussian(rng, 6, 2.0);
    const double lam = rng.uniform();
    const double gap = loss(lam * A + (1 - lam) * B, ds, LossKind::Log) -
                       (lam * loss(A, ds, LossKind::Log) + (1 - lam) * loss(B, ds, LossKind::Log));
    chords.add(gap <= 1e-9, gap);
  }
  int found = 0;
  for (int c = 0; c < 200 && found < 10; ++c) {
    const Dataset ds = small_dataset(mix_seed(o.seed, 600 + c), 5, 6, 5, 4, GenMode::Cyclic, HeadKind::Tied);
    const Geometry g = analyze_geometry(ds);
    if (g.subspaces.fin.dim() == 0) continue;
    ++found;
    const Mat A = g.subspaces.fin.project(gaussian(rng, 6, 2.0));
    Mat B = g.subspaces.fin.project(gaussian(rng, 6, 2.0));
    if ((A - B).norm() < 0.1) B = A + 0.1 * g.subspaces.fin.basis(0);
    const double gap = 0.5 * (loss(A, ds, LossKind::Log) + loss(B, ds, LossKind::Log)) -
                       loss(0.5 * (A + B), ds, LossKind::Log);
    strict.add(gap >= 1e-8, -gap);
  }
  const bool ok = chords.ok && strict.ok && found > 0;
  return {"convexity-chords", ok, chords.detail("chord excess") + "; strict: " + strict.detail("negated gap")};
}

PropertyResult svm_kkt(const SelftestOptions& o) {
  Check kkt, ortho;
  for (int c = 0; c < 20; ++c) {
    const Dataset ds = small_dataset(mix_seed(o.seed, 700 + c), 5, 6, 4, 4, c % 2 ? GenMode::Cyclic : GenMode::Acyclic,
                                     HeadKind::Tied);
    const TpgMap tpgs = build_tpgs(ds);
    const SccMap dec = scc_all(tpgs);
    const ConstraintSet cs = build_constraints(tpgs, dec, Closure::Transitive);
    const SvmSolution sol = solve_graph_svm(cs, ds.embedding);
    const SvmResiduals& r = sol.residuals;
    const double viol = std::max({r.max_eq, 1.0 - r.min_ineq, r.kkt, 0.0});
    kkt.add(sol.status == SvmStatus::Solved && r.max_eq <= 1e-6 && r.min_ineq >= 1.0 - 1e-6 && r.kkt <= 1e-5, viol);
    const Subspaces sub = build_subspaces(tpgs, cs, ds.embedding);
    const double p = sub.fin.project(sol.W).norm();
    ortho.add(p <= 1e-8, p);
  }
  return {"svm-kkt-and-orthogonality", kkt.ok && ortho.ok, kkt.detail("violation") + "; " + ortho.detail("‖Π_fin W‖")};
}

PropertyResult scc_oracle(const SelftestOptions& o) {
  Check chk;
  Rng rng(mix_seed(o.seed, 104));
  for (int c = 0; c < 100; ++c) {
    const int m = 1 + static_cast<int>(rng.index(10));
    const double p = 0.05 + 0.4 * rng.uniform();
    std::vector<std::pair<TokenId, TokenId>> edges;
    std::vector<TokenId> nodes(m);
    for (int i = 0; i < m; ++i) nodes[i] = 2 * i;
    std::vector<std::vector<bool>> R(m, std::vector<bool>(m, false));
    for (int i = 0; i < m; ++i) {
      R[i][i] = true;
      for (int j = 0; j < m; ++j)
        if (i != j && rng.uniform() < p) {
          edges.emplace_back(nodes[i], nodes[j]);
          R[i][j] = true;
        }
    }
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          if (R[i][k] && R[k][j]) R[i][j] = true;
    const SccDecomposition d = scc(make_graph(0, edges, nodes));
    int mismatches = 0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const int a = d.component(nodes[i]), b = d.component(nodes[j]);
        if ((a == b) != (R[i][j] && R[j][i])) ++mismatches;
        if (d.reach[a][b] != R[i][j]) ++mismatches;
      }
    chk.add(mismatches == 0, mismatches);
  }
  return {"scc-oracle", chk.ok, chk.detail("mismatches")};
}

PropertyResult reduction(const SelftestOptions& o) {
  Check chk;
  for (int c = 0; c < 10; ++c) {
    const Dataset ds = small_dataset(mix_seed(o.seed, 800 + c), 4, 6, 5, 4, GenMode::Cyclic, HeadKind::Tied,
                                     EmbeddingKind::Orthonormal);
    const TpgMap tpgs = build_tpgs(ds);
    const ConstraintSet cs = build_constraints(tpgs, scc_all(tpgs), Closure::Transitive);
    const SvmSolution joint = solve_graph_svm(cs, ds.embedding);
    const PerTokenSolution per = solve_per_last_token(cs, ds.embedding);
    Mat sum = Mat::Zero(6, 6);
    for (const auto& [k, Wk] : per.parts) sum += Wk;
    const double diff = (joint.W - sum).norm();
    chk.add(diff <= 1e-6, diff);
  }
  return {"reduction-lemma", chk.ok, chk.detail("‖W_joint - Σ W_k‖")};
}

PropertyResult stasis(const SelftestOptions& o) {
  Check chk;
  Rng rng(mix_seed(o.seed, 105));
  for (int c = 0; c < 5; ++c) {
    const Dataset ds =
        all_labels_dataset(small_dataset(mix_seed(o.seed, 900 + c), 5, 6, 3, 4, GenMode::Cyclic, HeadKind::Tied));
    const Geometry g = analyze_geometry(ds);
    Mat W = gaussian(rng, 6, 0.5);
    const Mat perp0 = g.subspaces.fin.project_complement(W);
    double worst = g.svm.W.norm();
    for (int step = 0; step < 200; ++step) {
      W -= 0.1 * grad(W, ds, LossKind::Log);
      worst = std::max(worst, (g.subspaces.fin.project_complement(W) - perp0).norm());
    }
    chk.add(worst <= 1e-9, worst);
  }
  return {"zero-svm-stasis", chk.ok, chk.detail("complement drift")};
}

}  // namespace

bool SelftestReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

Dataset all_labels_dataset(const Dataset& ds) {
  Dataset out{ds.embedding, ds.head, {}, ds.seed};
  for (const Sample& s : ds.samples) {
    const std::set<TokenId> distinct(s.tokens.begin(), s.tokens.end());
    for (TokenId y : distinct) {
      Sample copy = s;
      copy.label = y;
      out.samples.push_back(std::move(copy));
    }
  }
  return out;
}

SelftestReport run_selftest(const SelftestOptions& opts) {
  SelftestReport report;
  const std::pair<const char*, PropertyResult (*)(const SelftestOptions&)> props[] = {
      {"gradient-finite-difference", gradient_fd},
      {"gradient-paths-agree", gradient_paths},
      {"descent-lemma", descent},
      {"convexity-chords", convexity},
      {"svm-kkt-and-orthogonality", svm_kkt},
      {"scc-oracle", scc_oracle},
      {"reduction-lemma", reduction},
      {"zero-svm-stasis", stasis}};
  for (const auto& [name, fn] : props) {
    try {
      report.results.push_back(fn(opts));
    } catch (const std::exception& e) {
      report.results.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
  return report;
}

void print_report(const SelftestReport& report, std::ostream& os) {
  for (const auto& r : report.results) os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
  os << (report.all_passed() ? "selftest: all properties passed" : "selftest: FAILURES") << "\n";
}

}  // namespace attnlab
