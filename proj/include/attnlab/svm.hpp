#pragma once

#include "attnlab/graph.hpp"

#include <compare>
#include <map>
#include <optional>
#include <vector>

namespace attnlab {

// (e_i - e_j)ᵀ W e_k.
struct Triple {
  TokenId i = 0, j = 0, k = 0;
  auto operator<=>(const Triple& o) const {
    if (auto c = k <=> o.k; c != 0) return c;
    if (auto c = i <=> o.i; c != 0) return c;
    return j <=> o.j;
  }
  bool operator==(const Triple&) const = default;
};

enum class Closure {
  Transitive,  // every StrictPriority pair
  DirectEdges, // only direct edges between components; same feasible set
};

struct ConstraintSet {
  std::vector<Triple> equalities;    // = 0, i < j
  std::vector<Triple> inequalities;  // >= margin
};

ConstraintSet build_constraints(const TpgMap& tpgs, const SccMap& decomps,
                                Closure closure = Closure::Transitive);

// Column-major vec of (e_i - e_j) e_kᵀ.
Vec generator(const EmbeddingTable& E, const Triple& t);

// Orthonormal basis over vectorised d×d matrices.
struct MatrixSubspace {
  int d = 0;
  Mat Q;  // d² × dim
  std::vector<Triple> generators;

  int dim() const { return static_cast<int>(Q.cols()); }
  Mat basis(int a) const;
  Mat project(const Mat& W) const;
  Mat project_complement(const Mat& W) const { return W - project(W); }
};

inline constexpr double kSpanDrop = 1e-10;

// Modified Gram-Schmidt with one reorthogonalisation pass.
MatrixSubspace span(const std::vector<Triple>& triples, const EmbeddingTable& E);
MatrixSubspace span_vectors(int d, const Mat& columns);
// Orthogonal complement of `inner` inside `outer`.
MatrixSubspace complement_within(const MatrixSubspace& outer, const MatrixSubspace& inner);
inline Mat project(const Mat& W, const MatrixSubspace& S) { return S.project(W); }

// Subspaces built from the graphs: S_fin (same-SCC pairs), S_active (direct
// edges) and S_svm (S_fin complement within S_active).
struct Subspaces {
  MatrixSubspace fin, active, svm;
};
Subspaces build_subspaces(const TpgMap& tpgs, const ConstraintSet& cs, const EmbeddingTable& E);

enum class SvmStatus { Solved, Infeasible, MaxIter };

struct SvmOptions {
  double tol_dual = 1e-10;
  int max_sweeps = 200000;
  double margin = 1.0;
  double dual_blowup = 1e8;
  int stagnation_window = 1000;
  int polish_every = 200;
};

struct SvmResiduals {
  double max_eq = 0.0;       // max |⟨B,W⟩|
  double min_ineq = 0.0;     // min ⟨A,W⟩ (+inf when none)
  double kkt = 0.0;
  int sweeps = 0;
};

struct SvmSolution {
  Mat W;
  std::vector<double> multipliers;
  std::vector<double> eq_slack;
  std::vector<double> ineq_slack;  // ⟨A,W⟩ - margin
  SvmResiduals residuals;
  SvmStatus status = SvmStatus::Solved;

  double norm() const { return W.norm(); }
};

SvmSolution solve_graph_svm(const ConstraintSet& cs, const EmbeddingTable& E, const SvmOptions& opts = {});

// Residuals of an arbitrary W against the constraints. KKT uses `lambda` on
// the inequalities and least-squares equality multipliers.
SvmResiduals svm_residuals(const ConstraintSet& cs, const EmbeddingTable& E, const Mat& W,
                           const std::vector<double>& lambda, double margin = 1.0);

struct Feasibility {
  bool feasible = false;
  std::optional<Mat> certificate;
  bool from_certificate = false;
  SvmStatus solver_status = SvmStatus::Solved;
};

Feasibility check_feasibility(const ConstraintSet& cs, const EmbeddingTable& E, const SccMap& decomps);

struct PerTokenSolution {
  SvmSolution total;
  std::map<TokenId, Mat> parts;
};

// Throws NotOrthonormal unless E Eᵀ = I.
PerTokenSolution solve_per_last_token(const ConstraintSet& cs, const EmbeddingTable& E,
                                      const SvmOptions& opts = {});

const char* to_string(SvmStatus s);

}  // namespace attnlab
