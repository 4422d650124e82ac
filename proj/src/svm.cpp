#include "attnlab/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace attnlab {

ConstraintSet build_constraints(const TpgMap& tpgs, const SccMap& decomps, Closure closure) {
  ConstraintSet cs;
  for (const auto& [k, g] : tpgs) {
    const SccDecomposition& d = decomps.at(k);
    const int n = g.size();
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b)
        if (d.comp_of[a] == d.comp_of[b]) cs.equalities.push_back({g.nodes[a], g.nodes[b], k});
    }
    if (closure == Closure::Transitive) {
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const int ca = d.comp_of[a], cb = d.comp_of[b];
          if (ca != cb && d.reach[ca][cb] && !d.reach[cb][ca]) cs.inequalities.push_back({g.nodes[a], g.nodes[b], k});
        }
    } else {
      for (int a = 0; a < n; ++a)
        for (int b : g.adj[a])
          if (d.comp_of[a] != d.comp_of[b]) cs.inequalities.push_back({g.nodes[a], g.nodes[b], k});
    }
  }
  std::sort(cs.equalities.begin(), cs.equalities.end());
  std::sort(cs.inequalities.begin(), cs.inequalities.end());
  cs.inequalities.erase(std::unique(cs.inequalities.begin(), cs.inequalities.end()), cs.inequalities.end());
  return cs;
}

Vec generator(const EmbeddingTable& E, const Triple& t) {
  const int d = E.d();
  Vec g(d * d);
  Eigen::Map<Mat>(g.data(), d, d) = (E.row(t.i) - E.row(t.j)).transpose() * E.row(t.k);
  return g;
}

namespace {

Mat generator_columns(const std::vector<Triple>& triples, const EmbeddingTable& E) {
  const int D = E.d() * E.d();
  Mat A(D, static_cast<Eigen::Index>(triples.size()));
  for (std::size_t a = 0; a < triples.size(); ++a) A.col(static_cast<Eigen::Index>(a)) = generator(E, triples[a]);
  return A;
}

}  // namespace

Mat MatrixSubspace::basis(int a) const { return Eigen::Map<const Mat>(Q.col(a).data(), d, d); }

Mat MatrixSubspace::project(const Mat& W) const {
  if (dim() == 0) return Mat::Zero(d, d);
  const Eigen::Map<const Vec> w(W.data(), W.size());
  const Vec p = Q * (Q.transpose() * w);
  return Eigen::Map<const Mat>(p.data(), d, d);
}

MatrixSubspace span_vectors(int d, const Mat& columns) {
  // Gram-Schmidt with a second orthogonalisation pass against the accepted
  // basis; residuals below kSpanDrop are treated as dependent.
  MatrixSubspace S;
  S.d = d;
  Mat Q(d * d, columns.cols());
  int m = 0;
  for (int c = 0; c < columns.cols(); ++c) {
    Vec g = columns.col(c);
    for (int pass = 0; pass < 2 && m > 0; ++pass) g -= Q.leftCols(m) * (Q.leftCols(m).transpose() * g);
    const double nrm = g.norm();
    if (nrm < kSpanDrop) continue;
    Q.col(m++) = g / nrm;
  }
  S.Q = Q.leftCols(m);
  return S;
}

MatrixSubspace span(const std::vector<Triple>& triples, const EmbeddingTable& E) {
  MatrixSubspace S = span_vectors(E.d(), generator_columns(triples, E));
  S.generators = triples;
  return S;
}

MatrixSubspace complement_within(const MatrixSubspace& outer, const MatrixSubspace& inner) {
  Mat cols = outer.Q;
  if (inner.dim() > 0) cols -= inner.Q * (inner.Q.transpose() * cols);
  return span_vectors(outer.d, cols);
}

Subspaces build_subspaces(const TpgMap& tpgs, const ConstraintSet& cs, const EmbeddingTable& E) {
  std::vector<Triple> edges;
  for (const auto& [k, g] : tpgs)
    for (int a = 0; a < g.size(); ++a)
      for (int b : g.adj[a]) edges.push_back({g.nodes[a], g.nodes[b], k});
  Subspaces s;
  s.fin = span(cs.equalities, E);
  s.active = span(edges, E);
  s.svm = complement_within(s.active, s.fin);
  return s;
}

SvmResiduals svm_residuals(const ConstraintSet& cs, const EmbeddingTable& E, const Mat& W,
                           const std::vector<double>& lambda, double margin) {
  SvmResiduals r;
  r.min_ineq = std::numeric_limits<double>::infinity();
  const Eigen::Map<const Vec> w(W.data(), W.size());
  Vec stat = w;
  for (std::size_t a = 0; a < cs.inequalities.size(); ++a) {
    const Vec g = generator(E, cs.inequalities[a]);
    r.min_ineq = std::min(r.min_ineq, g.dot(w));
    if (a < lambda.size()) stat -= lambda[a] * g;
  }
  for (const auto& t : cs.equalities) r.max_eq = std::max(r.max_eq, std::abs(generator(E, t).dot(w)));
  if (!cs.equalities.empty()) {
    const MatrixSubspace B = span(cs.equalities, E);
    stat -= B.Q * (B.Q.transpose() * stat);
  }
  r.kkt = stat.norm();
  (void)margin;
  return r;
}

namespace {

bool residuals_ok(const SvmResiduals& r, double margin, bool has_ineq) {
  const double scale = std::max(1.0, margin);
  return r.max_eq <= 1e-6 * scale && (!has_ineq || r.min_ineq >= margin - 1e-6 * scale) && r.kkt <= 1e-5 * scale;
}

// Exact min-norm point for the current support: w = Ã_S μ with Ã_Sᵀ w = margin.
// Accepted only when μ ≥ 0 and every other constraint holds.
bool polish(const Mat& At, const std::vector<double>& lambda, double margin, Vec& w_out, std::vector<double>& lambda_out) {
  const double lmax = *std::max_element(lambda.begin(), lambda.end());
  if (lmax <= 0.0) return false;
  std::vector<int> support;
  for (std::size_t a = 0; a < lambda.size(); ++a)
    if (lambda[a] > 1e-12 * lmax) support.push_back(static_cast<int>(a));
  const Mat AS = At(Eigen::all, support);
  const Mat G = AS.transpose() * AS;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(G);
  const Vec mu = cod.solve(Vec::Constant(static_cast<Eigen::Index>(support.size()), margin));
  if ((G * mu - Vec::Constant(mu.size(), margin)).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, margin)) return false;
  if (mu.minCoeff() < -1e-12 * std::max(1.0, mu.cwiseAbs().maxCoeff())) return false;
  const Vec w = AS * mu;
  if ((At.transpose() * w).minCoeff() < margin * (1.0 - 1e-10)) return false;
  w_out = w;
  lambda_out.assign(lambda.size(), 0.0);
  for (std::size_t s = 0; s < support.size(); ++s) lambda_out[support[s]] = std::max(0.0, mu(static_cast<Eigen::Index>(s)));
  return true;
}

}  // namespace

SvmSolution solve_graph_svm(const ConstraintSet& cs, const EmbeddingTable& E, const SvmOptions& opts) {
  const int d = E.d();
  const int D = d * d;
  const auto m = static_cast<int>(cs.inequalities.size());
  SvmSolution sol;
  sol.W = Mat::Zero(d, d);
  sol.multipliers.assign(m, 0.0);

  const auto finish = [&](SvmStatus status, const Vec& w) {
    sol.W = Eigen::Map<const Mat>(w.data(), d, d);
    const int sweeps = sol.residuals.sweeps;
    sol.residuals = svm_residuals(cs, E, sol.W, sol.multipliers, opts.margin);
    sol.residuals.sweeps = sweeps;
    sol.eq_slack.clear();
    sol.ineq_slack.clear();
    const Eigen::Map<const Vec> wv(sol.W.data(), D);
    for (const auto& t : cs.equalities) sol.eq_slack.push_back(generator(E, t).dot(wv));
    for (const auto& t : cs.inequalities) sol.ineq_slack.push_back(generator(E, t).dot(wv) - opts.margin);
    if (status == SvmStatus::Solved && !residuals_ok(sol.residuals, opts.margin, m > 0)) status = SvmStatus::MaxIter;
    sol.status = status;
    return sol;
  };

  Vec w = Vec::Zero(D);
  if (m == 0) return finish(SvmStatus::Solved, w);

  const Mat A = generator_columns(cs.inequalities, E);
  Mat At = A;
  if (!cs.equalities.empty()) {
    const MatrixSubspace B = span(cs.equalities, E);
    At -= B.Q * (B.Q.transpose() * A);
  }
  const Vec norms2 = At.colwise().squaredNorm();
  for (int a = 0; a < m; ++a) {
    if (std::sqrt(norms2(a)) <= 1e-10 * std::max(1.0, A.col(a).norm())) return finish(SvmStatus::Infeasible, w);
  }

  std::vector<double>& lambda = sol.multipliers;
  double best_violation = std::numeric_limits<double>::infinity();
  double window_start_violation = best_violation;
  int window_start = 0;
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int a = 0; a < m; ++a) {
      const double r = opts.margin - At.col(a).dot(w);
      const double delta = std::max(-lambda[a], r / norms2(a));
      if (delta != 0.0) {
        lambda[a] += delta;
        w.noalias() += delta * At.col(a);
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    sol.residuals.sweeps = sweep;
    if (*std::max_element(lambda.begin(), lambda.end()) > opts.dual_blowup) return finish(SvmStatus::Infeasible, w);
    if (max_change < opts.tol_dual) {
      Vec wp;
      std::vector<double> lp;
      if (polish(At, lambda, opts.margin, wp, lp)) {
        lambda = lp;
        w = wp;
      }
      return finish(SvmStatus::Solved, w);
    }
    if (sweep % opts.polish_every == 0) {
      Vec wp;
      std::vector<double> lp;
      if (polish(At, lambda, opts.margin, wp, lp)) {
        lambda = lp;
        return finish(SvmStatus::Solved, wp);
      }
    }
    if (sweep % 10 == 0) {
      const double violation = std::max(0.0, opts.margin - (At.transpose() * w).minCoeff());
      best_violation = std::min(best_violation, violation);
      if (sweep - window_start >= opts.stagnation_window) {
        if (best_violation > 1e-6 * std::max(1.0, opts.margin) && best_violation > 0.99 * window_start_violation)
          return finish(SvmStatus::Infeasible, w);
        window_start = sweep;
        window_start_violation = best_violation;
      }
    }
  }
  return finish(SvmStatus::MaxIter, w);
}

Feasibility check_feasibility(const ConstraintSet& cs, const EmbeddingTable& E, const SccMap& decomps) {
  Feasibility f;
  if (!E.full_row_rank()) {
    const SvmSolution s = solve_graph_svm(cs, E);
    f.solver_status = s.status;
    f.feasible = s.status == SvmStatus::Solved;
    if (f.feasible) f.certificate = s.W;
    return f;
  }
  const Mat Ebar = (E.E() * E.E().transpose()).ldlt().solve(E.E());
  const int d = E.d();
  Mat W = Mat::Zero(d, d);
  for (const auto& [k, dec] : decomps) {
    Vec u = Vec::Zero(d);
    for (const auto& [node, level] : priority_assignment(dec)) u += level * Ebar.row(node).transpose();
    W += u * Ebar.row(k);
  }
  const Eigen::Map<const Vec> w(W.data(), W.size());
  double min_gap = std::numeric_limits<double>::infinity();
  for (const auto& t : cs.inequalities) min_gap = std::min(min_gap, generator(E, t).dot(w));
  if (!cs.inequalities.empty()) {
    if (!(min_gap > 0.0)) return f;
    W /= min_gap;
  }
  const SvmResiduals r = svm_residuals(cs, E, W, {});
  const double scale = std::max(1.0, W.norm());
  f.feasible = r.max_eq <= 1e-9 * scale && (cs.inequalities.empty() || r.min_ineq >= 1.0 - 1e-9 * scale);
  f.from_certificate = true;
  if (f.feasible) f.certificate = W;
  return f;
}

PerTokenSolution solve_per_last_token(const ConstraintSet& cs, const EmbeddingTable& E, const SvmOptions& opts) {
  if (!E.is_orthonormal()) throw Error(ErrorKind::NotOrthonormal, "per-token reduction needs E Eᵀ = I");
  std::map<TokenId, ConstraintSet> groups;
  for (const auto& t : cs.equalities) groups[t.k].equalities.push_back(t);
  for (const auto& t : cs.inequalities) groups[t.k].inequalities.push_back(t);

  const int d = E.d();
  PerTokenSolution out;
  Mat total = Mat::Zero(d, d);
  std::vector<double> lambda;
  SvmStatus status = SvmStatus::Solved;
  for (const auto& [k, sub] : groups) {
    SvmSolution s = solve_graph_svm(sub, E, opts);
    const Vec ek = E.row(k).transpose();
    const Mat off = s.W - (s.W * ek) * ek.transpose();
    if (off.norm() > 1e-8 * std::max(1.0, s.W.norm()))
      throw Error(ErrorKind::NotOrthonormal, "W_k row space left span(e_k) for k=" + std::to_string(k));
    if (s.status != SvmStatus::Solved) status = s.status;
    total += s.W;
    lambda.insert(lambda.end(), s.multipliers.begin(), s.multipliers.end());
    out.parts.emplace(k, std::move(s.W));
  }
  SvmSolution& sol = out.total;
  sol.W = total;
  sol.multipliers = lambda;
  sol.residuals = svm_residuals(cs, E, total, lambda, opts.margin);
  sol.status = status;
  return out;
}

const char* to_string(SvmStatus s) {
  switch (s) {
    case SvmStatus::Solved: return "solved";
    case SvmStatus::Infeasible: return "infeasible";
    case SvmStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

}  // namespace attnlab
