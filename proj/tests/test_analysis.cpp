#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "attnlab/selftest.hpp"
#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <set>

using namespace attnlab;

namespace {

Dataset make(std::uint64_t seed, int K, int d, int n, int T, GenMode mode, std::optional<HeadKind> head) {
  const EmbeddingTable E = make_embeddings(K, d, EmbeddingKind::UnitSphere, mix_seed(seed, 1));
  std::optional<ClassifierHead> h;
  if (head) h = make_head(E, *head, 0.1, mix_seed(seed, 3));
  return gen_dataset(E, std::move(h), n, T, mode, mix_seed(seed, 2));
}

}  // namespace

TEST_CASE("correlation examples") {
  const Dataset ds = make(1, 6, 8, 8, 4, GenMode::Cyclic, HeadKind::Tied);
  const Geometry g = analyze_geometry(ds);
  REQUIRE(g.svm.norm() > 0.0);
  CHECK(correlation(g.svm.W, g.svm.W) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(correlation(-g.svm.W, g.svm.W) == doctest::Approx(-1.0).epsilon(1e-14));
  for (int a = 0; a < g.subspaces.fin.dim(); ++a) CHECK(std::abs(correlation(g.subspaces.fin.basis(a), g.svm.W)) <= 1e-8);
  try {
    correlation(Mat::Zero(8, 8), g.svm.W);
    FAIL("expected ZeroMatrix");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroMatrix);
  }
}

TEST_CASE("rate bound reduces to T/tau without a finite part") {
  RateBoundInputs in;
  in.xi = std::numeric_limits<double>::infinity();
  in.T_max = 6;
  for (long tau : {1L, 10L, 1000L}) CHECK(rate_bound(in, tau, EtaSchedule{}) == doctest::Approx(6.0 / tau).epsilon(1e-14));
}

TEST_CASE("rate bound formula and monotone decay") {
  RateBoundInputs in{0.3, 1.0, 0.7, 4};
  const EtaSchedule eta{EtaSchedule::Kind::Constant, 0.25};
  const long tau = 500;
  const double want = 4 * std::exp(2 * 0.7) / tau + (0.49 + std::pow(std::log(500.0) / 0.3, 2)) / (2 * 0.25 * tau);
  CHECK(rate_bound(in, tau, eta) == doctest::Approx(want).epsilon(1e-12));
  double prev = rate_bound(in, 100, eta);
  for (long t = 110; t <= 1000000; t = t * 11 / 10) {
    const double cur = rate_bound(in, t, eta);
    CHECK(cur <= prev);
    prev = cur;
  }
  const EtaSchedule inv{EtaSchedule::Kind::InvSqrt, 1.0};
  CHECK(inv.sum(3) == doctest::Approx(1.0 + 1.0 / std::sqrt(2.0) + 1.0 / std::sqrt(3.0)));
}

TEST_CASE("xi is at least 1/‖W^svm‖") {
  for (int c = 0; c < 30; ++c) {
    const Dataset ds = make(100 + c, 6, 8, 6, 4, c % 2 ? GenMode::Cyclic : GenMode::Acyclic, HeadKind::Tied);
    const Geometry g = analyze_geometry(ds);
    if (g.svm.norm() == 0.0) continue;
    CHECK(compute_xi(ds, g.sets, g.svm.W) >= 1.0 / g.svm.norm() - 1e-9);
  }
}

TEST_CASE("pseudo graphs at zero weights are complete") {
  const Dataset ds = make(2, 6, 8, 5, 4, GenMode::Cyclic, HeadKind::Tied);
  const TpgMap p = pseudo_tpgs(Mat::Zero(8, 8), ds);
  std::map<TokenId, std::set<TokenId>> tokens;
  for (const auto& s : ds.samples) tokens[s.query()].insert(s.tokens.begin(), s.tokens.end());
  for (const auto& s : ds.samples) {
    const std::set<TokenId> in(s.tokens.begin(), s.tokens.end());
    for (TokenId a : in)
      for (TokenId b : in)
        if (a != b) CHECK(p.at(s.query()).has_edge(a, b));
  }
  for (const auto& [k, g] : p) CHECK(std::set<TokenId>(g.nodes.begin(), g.nodes.end()) == tokens[k]);
}

TEST_CASE("pseudo graphs of a label-selecting W match the dataset graphs") {
  // Orthonormal embeddings: W = Σ_i e_{y_i} x̄_iᵀ·100 with one sample per query selects labels exactly.
  const EmbeddingTable E = make_embeddings(5, 5, EmbeddingKind::Orthonormal, 3);
  const Dataset ds{E, std::nullopt,
                   {Sample{{1, 2, 0}, 1, std::nullopt}, Sample{{2, 3, 4}, 3, std::nullopt}, Sample{{4, 1, 3}, 4, std::nullopt}},
                   0};
  Mat W = Mat::Zero(5, 5);
  for (const auto& s : ds.samples) W += 100.0 * E.E().row(s.label).transpose() * E.E().row(s.query());
  const TpgMap p = pseudo_tpgs(W, ds);
  const TpgMap t = build_tpgs(ds);
  REQUIRE(p.size() == t.size());
  for (const auto& [k, g] : t) {
    CHECK(p.at(k).nodes == g.nodes);
    CHECK(p.at(k).adj == g.adj);
  }
  const Dataset pl = pseudo_label_dataset(W, ds);
  CHECK(pl.n() == ds.n());
}

TEST_CASE("pseudo graphs feed the SVM pipeline consistently") {
  const Dataset ds = make(4, 6, 8, 6, 4, GenMode::Cyclic, HeadKind::Tied);
  Rng rng(4);
  Mat W(8, 8);
  for (int k = 0; k < 64; ++k) W(k) = 2.0 * rng.normal();
  const Dataset pl = pseudo_label_dataset(W, ds);
  const TpgMap from_labels = build_tpgs(pl);
  const TpgMap direct = pseudo_tpgs(W, ds);
  REQUIRE(from_labels.size() == direct.size());
  for (const auto& [k, g] : direct) CHECK(from_labels.at(k).adj == g.adj);
  const Geometry pg = analyze_geometry(pl, direct);
  CHECK(pg.svm.status == SvmStatus::Solved);
}

TEST_CASE("epsilon must lie in (0, 1)") {
  const Dataset ds = make(4, 6, 8, 6, 4, GenMode::Cyclic, HeadKind::Tied);
  try {
    pseudo_tpgs(Mat::Zero(8, 8), ds, PseudoTpgConfig{1.5});
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
  }
}

TEST_CASE("convergence report on an all-label dataset") {
  const Dataset ds = all_labels_dataset(make(5, 5, 6, 1, 1, GenMode::Cyclic, HeadKind::Tied));
  const Geometry g = analyze_geometry(ds);
  TrainConfig tc;
  tc.iters = 20;
  const TrainTrace tr = train_gd(ds, tc, g.refs());
  const ConvergenceReport r = convergence_report(tr, ReportRefs{g.loss_inf});
  CHECK(r.zero_gradient);
  CHECK_FALSE(r.final_corr.has_value());
  CHECK(to_json(r)["final_corr"].is_null());
  CHECK(r.descent_violations == 0);
}

TEST_CASE("convergence report on the cyclic benchmark") {
  const Dataset ds = make(6, 6, 8, 6, 4, GenMode::Cyclic, HeadKind::Tied);
  const Geometry g = analyze_geometry(ds);
  TrainConfig tc;
  tc.normalized = true;
  tc.eta = 0.01;
  tc.iters = 4000;
  const ConvergenceReport r = convergence_report(train_gd(ds, tc, g.refs()), ReportRefs{g.loss_inf});
  REQUIRE(r.final_corr.has_value());
  CHECK(*r.final_corr > 0.9);
  CHECK(r.norm_slope > 0.0);
  CHECK(*r.loss_gap >= 0.0);
  const auto j = to_json(r);
  CHECK(j["final_corr"].get<double>() == *r.final_corr);
}

TEST_CASE("run_trials is ordered and independent of worker count") {
  const auto fn = [](int t) { return std::sqrt(static_cast<double>(t)) + t * 0.5; };
  const auto a = run_trials(17, 1, fn), b = run_trials(17, 4, fn);
  CHECK(a == b);
  for (int t = 0; t < 17; ++t) CHECK(a[t] == fn(t));
}

TEST_CASE("summarize computes mean and sample deviation") {
  const TableRow r = summarize(3.0, {1.0, 2.0, 3.0, 4.0});
  CHECK(r.x == 3.0);
  CHECK(r.mean == doctest::Approx(2.5));
  CHECK(r.trials == 4);
  CHECK(r.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("SCC counts: trivial sequences and collapse") {
  const Table t = scc_count_experiment(8, 8, 1, {1}, 5, 3);
  REQUIRE(t.size() == 1);
  // n = 1, T = 1: one graph with one node.
  CHECK(t[0].mean == 1.0);
  const Table big = scc_count_experiment(4, 4, 4, {1, 4, 512}, 5, 3);
  CHECK(big.back().mean <= big.front().mean + 4);
  CHECK(big.back().mean == doctest::Approx(4.0));
  CHECK(big.back().mean <= big[1].mean);
}

TEST_CASE("retained fraction matches explicit counting") {
  Rng rng(7);
  for (int c = 0; c < 20; ++c) {
    const Dataset ds = make(200 + c, 4, 2 + c % 4, 5, 4, GenMode::Cyclic, std::nullopt);
    const SccMap dec = scc_all(build_tpgs(ds));
    const auto graphs = oracle::raw_graphs(ds);
    Mat W(ds.embedding.d(), ds.embedding.d());
    for (int k = 0; k < W.size(); ++k) W(k) = 3.0 * rng.normal();
    double want = 0.0;
    for (int i = 0; i < ds.n(); ++i) {
      const Sample& s = ds.samples[i];
      const Vec xbar = ds.embedding.row(s.query()).transpose();
      Vec a(s.length());
      for (int t = 0; t < s.length(); ++t) a(t) = ds.embedding.row(s.tokens[t]).dot(W * xbar);
      const Vec p = (a.array() - a.maxCoeff()).exp();
      const oracle::RawGraph& g = graphs.at(s.query());
      const oracle::Reach R = oracle::closure(static_cast<int>(g.nodes.size()), g.edges);
      int both = 0, either = 0;
      for (TokenId x : std::set<TokenId>(s.tokens.begin(), s.tokens.end())) {
        double m = 0.0;
        for (int t = 0; t < s.length(); ++t)
          if (s.tokens[t] == x) m += p(t) / p.sum();
        const bool member = x == s.label || oracle::classify(R, g.local(s.label), g.local(x)) == oracle::Rel::Same;
        const bool kept = m >= 0.1;
        both += member && kept;
        either += member || kept;
      }
      want += static_cast<double>(both) / either / ds.n();
    }
    CHECK(retained_fraction(W, ds, dec, 0.1) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("feasibility sweep: small d falls short, d = K is exact") {
  FeasibilityConfig cfg;
  cfg.K = 8;
  cfg.T = 6;
  cfg.n = 6;
  cfg.d_grid = {1, 8};
  cfg.trials = 4;
  cfg.iters = 2000;
  const Table t = feasibility_experiment(cfg);
  REQUIRE(t.size() == 2);
  CHECK(t[0].mean < 0.9);
  CHECK(t[1].mean == doctest::Approx(1.0).epsilon(0.02));
}
