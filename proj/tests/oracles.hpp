// Brute-force reference implementations used by the tests. None of them call
// into the library code they check.
#pragma once

#include "attnlab/analysis.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace oracle {

using attnlab::Dataset;
using attnlab::LossKind;
using attnlab::Mat;
using attnlab::TokenId;
using attnlab::Vec;

// Rank from a Jacobi SVD.
int svd_rank(const Mat& m, double cutoff = 1e-10);

// Floyd–Warshall reflexive-transitive closure over local node indices.
using Reach = std::vector<std::vector<bool>>;
Reach closure(int n, const std::vector<std::pair<int, int>>& edges);

enum class Rel { Strict, Same, Unrelated };
Rel classify(const Reach& R, int i, int j);

// Per last token: the node list and the edge list (local indices) from the
// TPG rule, written out directly from the samples.
struct RawGraph {
  std::vector<TokenId> nodes;
  std::vector<std::pair<int, int>> edges;
  int local(TokenId t) const;
};
std::map<TokenId, RawGraph> raw_graphs(const Dataset& ds);

// Every (i, j, k) triple: strict pairs become inequalities, same-SCC pairs
// with i < j equalities. Sorted by (k, i, j).
struct Triples {
  std::vector<std::array<int, 3>> eq, ineq;
};
Triples brute_constraints(const Dataset& ds);

// min ½‖w‖² s.t. A_eq w = 0, A_ineq w >= margin by enumerating active sets of
// increasing size. Rows are constraint vectors. nullopt when infeasible.
std::optional<Vec> active_set_qp(const Mat& A_eq, const Mat& A_ineq, double margin = 1.0, int max_active = 20);

// (e_i - e_j) e_kᵀ flattened column-major.
Vec diff_outer(const Mat& E, int i, int j, int k);

// Loss written term by term from the ERM definition.
double straight_loss(const Mat& W, const Dataset& ds, LossKind kind);

Mat central_difference(const std::function<double(const Mat&)>& f, const Mat& W, double h = 1e-5);

// Minimiser of L̄ over span(basis) by Newton iterations in basis coordinates
// using finite-difference derivatives of straight_loss, from several starts.
// Returns all converged minimisers.
std::vector<Mat> multistart_wfin(const Dataset& sub, double full_n, const std::vector<Mat>& basis, int starts,
                                 std::uint64_t seed);

// Orthonormal basis (as d×d matrices) of the span of the given vectors.
std::vector<Mat> orthonormal_basis(const Mat& columns, int d, double cutoff = 1e-10);

}  // namespace oracle
