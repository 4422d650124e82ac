#include "attnlab/attention.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace attnlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vec softmax(const Vec& z) {
  Vec p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

Vec indicator(const Sample& s) {
  Vec g = Vec::Zero(s.length());
  for (int t = 0; t < s.length(); ++t)
    if (s.tokens[t] == s.label) g(t) = 1.0;
  return g;
}

void require_loss_kind(LossKind kind) {
  if (kind == LossKind::CrossEntropy)
    throw Error(ErrorKind::DomainError, "reduced path covers Log and Squared only");
}

}  // namespace

LossConstants loss_constants(LossKind kind) {
  switch (kind) {
    case LossKind::Squared: return {2.0, 2.0};
    case LossKind::Log:
    case LossKind::CrossEntropy: break;
  }
  return {kInf, kInf};
}

Forward forward(const Mat& X, const Mat& W, const Vec& xbar) {
  Forward f;
  f.logits = X * (W * xbar);
  f.probs = softmax(f.logits);
  f.output = X.transpose() * f.probs;
  return f;
}

LossGrad loss_and_grad_reduced(const Mat& W, const Dataset& ds, LossKind kind, double normaliser) {
  require_loss_kind(kind);
  const Mat& E = ds.embedding.E();
  const int d = ds.embedding.d();
  LossGrad out{0.0, Mat::Zero(d, d)};
  for (const Sample& s : ds.samples) {
    const Mat X = E(s.tokens, Eigen::all);
    const Vec xbar = E.row(s.query()).transpose();
    const Vec p = softmax(X * (W * xbar));
    double q = 0.0;  // mass off the label
    Vec g = Vec::Zero(d);
    for (int t = 0; t < s.length(); ++t) {
      if (s.tokens[t] == s.label) continue;
      q += p(t);
      g.noalias() += p(t) * X.row(t).transpose();
    }
    if (q == 0.0) continue;
    const Vec ey = E.row(s.label).transpose();
    g.noalias() -= q * ey;  // Σ_{Ō} s_t (x_t - e_y)
    const double u = 1.0 - q;
    double coeff = 1.0;
    if (kind == LossKind::Log) {
      double mass_on_label = 0.0;
      for (int t = 0; t < s.length(); ++t)
        if (s.tokens[t] == s.label) mass_on_label += p(t);
      if (mass_on_label <= kLogGuard) throw Error(ErrorKind::DomainError, "log loss argument underflow");
      out.loss += q < 0.5 ? -std::log1p(-q) : -std::log(mass_on_label);
    } else {
      out.loss += q * q;
      coeff = 2.0 * q * u;
    }
    out.grad.noalias() += coeff * g * xbar.transpose();
  }
  out.loss /= normaliser;
  out.grad /= normaliser;
  return out;
}

LossGrad loss_and_grad_reduced(const Mat& W, const Dataset& ds, LossKind kind) {
  return loss_and_grad_reduced(W, ds, kind, ds.n());
}

// p ∘ (a - pᵀa), centred on the label's entry so positions holding the label
// contribute exactly zero to the inner sum.
static Vec softmax_vjp(const Vec& p, const Vec& a, const Sample& s) {
  int ref = -1;
  for (int t = 0; t < s.length() && ref < 0; ++t)
    if (s.tokens[t] == s.label) ref = t;
  const Vec b = ref >= 0 ? Vec(a.array() - a(ref)) : a;
  double m = 0.0;
  for (int t = 0; t < s.length(); ++t)
    if (ref < 0 || s.tokens[t] != s.label) m += p(t) * b(t);
  Vec out(p.size());
  for (int t = 0; t < s.length(); ++t) out(t) = p(t) * ((ref >= 0 && s.tokens[t] == s.label ? 0.0 : b(t)) - m);
  return out;
}

LossGrad loss_and_grad_general(const Mat& W, const Dataset& ds, LossKind kind) {
  const Mat& E = ds.embedding.E();
  const int d = ds.embedding.d();
  if (kind == LossKind::CrossEntropy && !ds.head)
    throw Error(ErrorKind::DomainError, "cross-entropy needs a classifier head");
  LossGrad out{0.0, Mat::Zero(d, d)};
  for (const Sample& s : ds.samples) {
    const Mat X = E(s.tokens, Eigen::all);
    const Vec xbar = E.row(s.query()).transpose();
    const Vec p = softmax(X * (W * xbar));
    Vec dh;  // dℓ/dh
    if (kind == LossKind::CrossEntropy) {
      const Mat& C = ds.head->C;
      const Vec z = C * (X.transpose() * p);
      out.loss += log_sum_exp(z) - z(s.label);
      Vec r = softmax(z);
      r(s.label) -= 1.0;
      dh = softmax_vjp(p, X * (C.transpose() * r), s);
    } else {
      const Vec gamma = ds.head ? Vec(X * ds.head->C.row(s.label).transpose()) : indicator(s);
      const double u = gamma.dot(p);
      // 1 - u = (1 - γ_y) + Σ_{Ō} s_t (γ_y - γ_t), free of cancellation as s
      // concentrates on the label.
      const double gy = ds.head ? ds.head->C.row(s.label).dot(ds.embedding.row(s.label)) : 1.0;
      double gap = std::abs(1.0 - gy) <= kUnitScoreSnap ? 0.0 : 1.0 - gy;
      for (int t = 0; t < s.length(); ++t)
        if (s.tokens[t] != s.label) gap += p(t) * (gy - gamma(t));
      double dl;
      if (kind == LossKind::Log) {
        if (u <= kLogGuard) throw Error(ErrorKind::DomainError, "log loss argument <= 1e-300");
        out.loss += gap < 0.5 ? -std::log1p(-gap) : -std::log(u);
        dl = -1.0 / u;
      } else {
        out.loss += gap * gap;
        dl = -2.0 * gap;
      }
      dh = dl * softmax_vjp(p, gamma, s);
    }
    out.grad.noalias() += (X.transpose() * dh) * xbar.transpose();
  }
  out.loss /= ds.n();
  out.grad /= ds.n();
  return out;
}

LossGrad loss_and_grad(const Mat& W, const Dataset& ds, LossKind kind) {
  if (kind != LossKind::CrossEntropy && ds.indicator_scores()) return loss_and_grad_reduced(W, ds, kind);
  return loss_and_grad_general(W, ds, kind);
}

double loss(const Mat& W, const Dataset& ds, LossKind kind) { return loss_and_grad(W, ds, kind).loss; }
Mat grad(const Mat& W, const Dataset& ds, LossKind kind) { return loss_and_grad(W, ds, kind).grad; }

double lipschitz_log(const Dataset& ds) {
  const double e = ds.embedding.e_max();
  return 2.0 * std::pow(e, 4) * std::sqrt(static_cast<double>(ds.T_max()));
}

double lipschitz_general(const Dataset& ds, double M0, double M1) {
  if (!ds.head) throw Error(ErrorKind::DomainError, "general Lipschitz bound needs a classifier head");
  double total = 0.0;
  for (int i = 0; i < ds.n(); ++i) {
    const Sample& s = ds.samples[i];
    const Mat X = ds.X(i);
    const double xn = Eigen::JacobiSVD<Mat>(X).singularValues()(0);
    const double xb = ds.embedding.row(s.query()).norm();
    const double cy = ds.head->C.row(s.label).norm();
    const double a = cy * xb * xb * std::pow(xn, 3);
    const double b = M0 * cy * xn + 3.0 * M1;
    total += a * b;
  }
  return total / ds.n();
}

Mat initial_weights(const TrainConfig& cfg, int d) {
  if (cfg.W0) return *cfg.W0;
  if (cfg.init == InitKind::Zero) return Mat::Zero(d, d);
  Rng rng(cfg.init_seed);
  Mat W(d, d);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) W(r, c) = cfg.init_scale * rng.normal();
  return W;
}

TrainTrace train_gd(const Dataset& ds, const TrainConfig& cfg, const TrainRefs& refs) {
  if (!(cfg.eta > 0.0) || cfg.iters < 1 || cfg.record_every < 1)
    throw Error(ErrorKind::ConfigError, "train config needs eta > 0, iters >= 1, record_every >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  TrainTrace trace;
  Mat W = initial_weights(cfg, ds.embedding.d());
  const double svm_norm = refs.W_svm ? refs.W_svm->norm() : 0.0;

  const auto record = [&](int iter, const LossGrad& lg) {
    TraceRow row;
    row.iter = iter;
    row.loss = lg.loss;
    row.grad_norm = lg.grad.norm();
    row.w_norm = W.norm();
    row.loss_bar = refs.split ? loss_bar(W, *refs.split, cfg.loss == LossKind::CrossEntropy ? LossKind::Log : cfg.loss) : kNaN;
    row.corr_svm = (svm_norm > 0.0 && row.w_norm > 0.0) ? frob_dot(W, *refs.W_svm) / (row.w_norm * svm_norm) : kNaN;
    row.dist_fin = (refs.S_fin && refs.W_fin) ? (refs.S_fin->project(W) - *refs.W_fin).norm() : kNaN;
    row.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    trace.rows.push_back(row);
  };

  const auto evaluate = [&](int iter) {
    try {
      LossGrad lg = loss_and_grad(W, ds, cfg.loss);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) throw Error(ErrorKind::DomainError, "non-finite value");
      return lg;
    } catch (const Error& e) {
      trace.W_final = W;
      throw NonFiniteLossError("iteration " + std::to_string(iter) + ": " + e.what(), trace);
    }
  };

  for (int iter = 0;; ++iter) {
    LossGrad lg = evaluate(iter);
    if (iter % cfg.record_every == 0 || iter == cfg.iters) record(iter, lg);
    if (iter == cfg.iters) break;
    Mat g = cfg.projection ? cfg.projection->project(lg.grad) : lg.grad;
    if (cfg.normalized) {
      const double gn = g.norm();
      if (gn == 0.0) continue;
      g /= gn;
    }
    W.noalias() -= cfg.eta * g;
  }
  trace.W_final = W;
  return trace;
}

double loss_bar(const Mat& W, const CyclicSplit& split, LossKind kind) {
  if (split.empty()) return 0.0;
  return loss_and_grad_reduced(W, split.subdataset, kind, split.full_n).loss;
}

double loss_inf(const CyclicSplit& split, const Mat& W_fin) { return loss_bar(W_fin, split, LossKind::Log); }

WfinResult train_wfin(const CyclicSplit& split, const MatrixSubspace& S_fin, const WfinOptions& opts) {
  const int d = split.subdataset.embedding.d();
  WfinResult res;
  res.W = opts.W0 ? *opts.W0 : Mat::Zero(d, d);
  if (split.empty()) return res;
  const Dataset& sub = split.subdataset;
  const double L = lipschitz_log(sub) * static_cast<double>(sub.n()) / split.full_n;
  const double eta = 1.0 / L;
  for (res.iters = 0; res.iters <= opts.max_iters; ++res.iters) {
    const LossGrad lg = loss_and_grad_reduced(res.W, sub, LossKind::Log, split.full_n);
    const Mat g = S_fin.project(lg.grad);
    res.max_membership_residual = std::max(res.max_membership_residual, (lg.grad - g).norm());
    res.grad_norm = g.norm();
    if (res.grad_norm < opts.tol) return res;
    res.W.noalias() -= eta * g;
  }
  throw Error(ErrorKind::NoConvergence,
              "W^fin gradient norm " + std::to_string(res.grad_norm) + " after " + std::to_string(opts.max_iters) + " steps");
}

namespace {

struct LogObjective {
  double phi = 0.0;  // log of the loss
  Mat grad;          // gradient of phi
};

// log L and its gradient without forming L, so directions stay resolvable
// when the loss itself underflows.
LogObjective log_objective(const Mat& W, const Dataset& ds, LossKind kind) {
  const int d = ds.embedding.d();
  if (kind == LossKind::CrossEntropy || !ds.indicator_scores()) {
    const LossGrad lg = loss_and_grad(W, ds, kind);
    if (lg.loss <= 0.0) return {-kInf, Mat::Zero(d, d)};
    return {std::log(lg.loss), lg.grad / lg.loss};
  }
  const Mat& E = ds.embedding.E();
  std::vector<double> log_l;
  std::vector<Mat> dir;
  for (const Sample& s : ds.samples) {
    const Mat X = E(s.tokens, Eigen::all);
    const Vec xbar = E.row(s.query()).transpose();
    const Vec h = X * (W * xbar);
    std::vector<int> off;
    for (int t = 0; t < s.length(); ++t)
      if (s.tokens[t] != s.label) off.push_back(t);
    if (off.empty()) continue;
    const Vec h_off = h(off);
    const double log_q = log_sum_exp(h_off) - log_sum_exp(h);
    const double q = std::exp(log_q);
    const Vec p_off = softmax(h_off);
    Vec m = X(off, Eigen::all).transpose() * p_off - E.row(s.label).transpose();
    double log_li, scale;
    if (kind == LossKind::Log) {
      const double ratio = q > 1e-8 ? -std::log1p(-q) / q : 1.0 + 0.5 * q;
      log_li = log_q + std::log(ratio);
      scale = 1.0 / ratio;
    } else {
      log_li = 2.0 * log_q;
      scale = 2.0 * (1.0 - q);
    }
    log_l.push_back(log_li);
    dir.push_back(scale * m * xbar.transpose());
  }
  if (log_l.empty()) return {-kInf, Mat::Zero(d, d)};
  const Vec ll = Eigen::Map<const Vec>(log_l.data(), static_cast<Eigen::Index>(log_l.size()));
  const double lse = log_sum_exp(ll);
  LogObjective out{lse - std::log(static_cast<double>(ds.n())), Mat::Zero(d, d)};
  for (std::size_t i = 0; i < dir.size(); ++i) out.grad += std::exp(log_l[i] - lse) * dir[i];
  return out;
}

Mat ball_project(const Mat& W, double R) {
  const double n = W.norm();
  return n > R ? Mat(W * (R / n)) : W;
}

struct BallSolve {
  Mat W;
  double phi = 0.0;
  double grad_map = 0.0;
  int iters = 0;
};

// Projected gradient with Barzilai-Borwein steps and a nonmonotone Armijo test.
BallSolve solve_ball(const Dataset& ds, LossKind kind, double R, Mat W, const RegPathConfig& cfg) {
  W = ball_project(W, R);
  LogObjective f = log_objective(W, ds, kind);
  BallSolve out;
  std::vector<double> history{f.phi};
  double step = 0.1 * std::max(R, 1.0) / std::max(f.grad.norm(), 1e-300);
  Mat W_prev, g_prev;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (!std::isfinite(f.phi)) break;
    const double gm = (W - ball_project(W - f.grad, R)).norm();
    out.grad_map = gm;
    if (gm < cfg.tol) break;
    if (it > 0) {
      const Mat s = W - W_prev, y = f.grad - g_prev;
      const double sy = frob_dot(s, y);
      step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12) : std::min(step * 2.0, 1e12);
    }
    const double ref = *std::max_element(history.end() - std::min<std::ptrdiff_t>(10, static_cast<std::ptrdiff_t>(history.size())), history.end());
    Mat W_new;
    LogObjective f_new;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      W_new = ball_project(W - step * f.grad, R);
      f_new = log_objective(W_new, ds, kind);
      if (f_new.phi <= ref - 1e-4 * frob_dot(f.grad, W - W_new)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    W_prev = W;
    g_prev = f.grad;
    W = W_new;
    f = f_new;
    history.push_back(f.phi);
  }
  out.W = W;
  out.phi = f.phi;
  out.iters = it;
  return out;
}

}  // namespace

std::vector<RegPathPoint> reg_path(const Dataset& ds, const std::vector<double>& radii, const RegPathConfig& cfg) {
  for (std::size_t r = 1; r < radii.size(); ++r)
    if (!(radii[r] > radii[r - 1])) throw Error(ErrorKind::ConfigError, "radii must be increasing");
  const int d = ds.embedding.d();
  const bool convex = cfg.loss == LossKind::Log && ds.indicator_scores();
  std::vector<RegPathPoint> path;
  Mat warm = Mat::Zero(d, d);
  double prev_R = 0.0;
  Rng rng(cfg.seed);
  for (std::size_t r = 0; r < radii.size(); ++r) {
    const double R = radii[r];
    std::vector<Mat> starts{warm};
    if (prev_R > 0.0 && warm.norm() >= prev_R * (1.0 - 1e-9)) starts.push_back(warm * (R / prev_R));
    if (!convex) {
      Rng sub = rng.split(r);
      for (int k = 0; k < cfg.restarts; ++k) {
        Mat Z(d, d);
        for (int c = 0; c < d; ++c)
          for (int rr = 0; rr < d; ++rr) Z(rr, c) = sub.normal();
        starts.push_back(Z * (R / Z.norm()));
      }
    }
    BallSolve best;
    best.phi = kInf;
    for (const Mat& s : starts) {
      BallSolve b = solve_ball(ds, cfg.loss, R, s, cfg);
      if (b.phi < best.phi || best.W.size() == 0) best = std::move(b);
    }
    RegPathPoint pt{R, best.W, std::exp(best.phi), best.grad_map, best.iters};
    path.push_back(pt);
    warm = best.W;
    prev_R = R;
  }
  return path;
}

std::vector<TokenMass> eval_masked(const Mat& W, const Dataset& ds) {
  std::vector<TokenMass> out;
  out.reserve(ds.samples.size());
  for (int i = 0; i < ds.n(); ++i) {
    const Sample& s = ds.samples[i];
    const Forward f = forward(ds.X(i), W, ds.embedding.row(s.query()).transpose());
    std::map<TokenId, double> agg;
    for (int t = 0; t < s.length(); ++t) agg[s.tokens[t]] += f.probs(t);
    out.emplace_back(agg.begin(), agg.end());
  }
  return out;
}

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::Log: return "log";
    case LossKind::Squared: return "squared";
    case LossKind::CrossEntropy: return "ce";
  }
  return "unknown";
}

LossKind parse_loss(const std::string& s) {
  if (s == "log") return LossKind::Log;
  if (s == "squared") return LossKind::Squared;
  if (s == "ce" || s == "cross_entropy") return LossKind::CrossEntropy;
  throw Error(ErrorKind::ConfigError, "unknown loss '" + s + "'");
}

}  // namespace attnlab
