#pragma once

#include "attnlab/index_sets.hpp"
#include "attnlab/svm.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace attnlab {

enum class LossKind { Log, Squared, CrossEntropy };

// M0 bounds the Lipschitz constant of ℓ' and M1 bounds |ℓ'| on (0, 1].
// Log has neither bound there, so both are +inf.
struct LossConstants {
  double M0 = 0.0;
  double M1 = 0.0;
};
LossConstants loss_constants(LossKind kind);

inline constexpr double kLogGuard = 1e-300;
// Label scores this close to 1 count as exactly 1.
inline constexpr double kUnitScoreSnap = 1e-12;

struct Forward {
  Vec logits;
  Vec probs;
  Vec output;
};

Forward forward(const Mat& X, const Mat& W, const Vec& xbar);

// Dispatching entry points: indicator scores (tied or masked) use the
// reduced O-set form for Log and Squared; everything else the general form.
double loss(const Mat& W, const Dataset& ds, LossKind kind);
Mat grad(const Mat& W, const Dataset& ds, LossKind kind);

struct LossGrad {
  double loss = 0.0;
  Mat grad;
};
LossGrad loss_and_grad(const Mat& W, const Dataset& ds, LossKind kind);

// General form (1/n) Σ ℓ'(γᵀs) Xᵀ(diag(s) - ssᵀ)γ x̄ᵀ, γ = X c_y or the label
// indicator under masked scoring. CrossEntropy requires a head.
LossGrad loss_and_grad_general(const Mat& W, const Dataset& ds, LossKind kind);
// Reduced form; scores are taken to be exact label indicators whatever the
// head. Log and Squared only.
LossGrad loss_and_grad_reduced(const Mat& W, const Dataset& ds, LossKind kind);
// Sum over samples divided by `normaliser` instead of n.
LossGrad loss_and_grad_reduced(const Mat& W, const Dataset& ds, LossKind kind, double normaliser);

double lipschitz_log(const Dataset& ds);
double lipschitz_general(const Dataset& ds, double M0, double M1);

enum class InitKind { Zero, Gaussian };

struct TrainConfig {
  double eta = 0.01;
  int iters = 1000;
  bool normalized = false;
  InitKind init = InitKind::Zero;
  double init_scale = 1.0;
  std::uint64_t init_seed = 0;
  std::optional<Mat> W0;  // overrides init
  LossKind loss = LossKind::Log;
  int record_every = 10;
  std::optional<MatrixSubspace> projection;
};

struct TrainRefs {
  std::optional<Mat> W_svm;
  std::optional<MatrixSubspace> S_fin;
  std::optional<Mat> W_fin;
  std::optional<CyclicSplit> split;
};

// NaN marks an undefined metric (missing reference or zero matrix).
struct TraceRow {
  int iter = 0;
  double loss = 0.0;
  double loss_bar = 0.0;
  double grad_norm = 0.0;
  double w_norm = 0.0;
  double corr_svm = 0.0;
  double dist_fin = 0.0;
  double elapsed_ms = 0.0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  Mat W_final;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, TrainTrace trace)
      : Error(ErrorKind::NonFiniteLoss, what), trace_(std::move(trace)) {}
  const TrainTrace& trace() const { return trace_; }

 private:
  TrainTrace trace_;
};

Mat initial_weights(const TrainConfig& cfg, int d);
TrainTrace train_gd(const Dataset& ds, const TrainConfig& cfg, const TrainRefs& refs = {});

struct WfinOptions {
  double tol = 1e-9;
  long max_iters = 1000000;
  std::optional<Mat> W0;  // must lie in S_fin
};

struct WfinResult {
  Mat W;
  long iters = 0;
  double grad_norm = 0.0;
  double max_membership_residual = 0.0;  // max ‖∇L̄ - Π_{S_fin}∇L̄‖ seen
};

// Throws NoConvergence when the cap is hit.
WfinResult train_wfin(const CyclicSplit& split, const MatrixSubspace& S_fin, const WfinOptions& opts = {});

double loss_bar(const Mat& W, const CyclicSplit& split, LossKind kind = LossKind::Log);
double loss_inf(const CyclicSplit& split, const Mat& W_fin);

struct RegPathConfig {
  LossKind loss = LossKind::Log;
  double tol = 1e-7;
  int max_iters = 20000;
  int restarts = 5;  // nonconvex losses only
  std::uint64_t seed = 0;
};

struct RegPathPoint {
  double R = 0.0;
  Mat W;
  double loss = 0.0;
  double grad_map = 0.0;
  int iters = 0;
};

std::vector<RegPathPoint> reg_path(const Dataset& ds, const std::vector<double>& radii,
                                   const RegPathConfig& cfg = {});

using TokenMass = std::vector<std::pair<TokenId, double>>;
// Softmax mass aggregated by token id, sorted by id.
std::vector<TokenMass> eval_masked(const Mat& W, const Dataset& ds);

const char* to_string(LossKind k);
LossKind parse_loss(const std::string& s);

}  // namespace attnlab
