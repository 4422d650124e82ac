#include "attnlab/experiments.hpp"
#include "attnlab/selftest.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace attnlab;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("ATTNLAB_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, std::string("ATTNLAB_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

// Layered settings: explicit flag, then config file, then fallback.
template <class T>
T pick(const std::optional<T>& flag, const Json& file, const char* key, T fallback) {
  if (flag) return *flag;
  if (file.is_object() && file.contains(key)) {
    try {
      return file.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("config key '") + key + "': " + e.what());
    }
  }
  return fallback;
}

Json load_config(const std::string& path) { return path.empty() ? Json::object() : read_json_file(path); }

Closure parse_closure(const std::string& s) {
  if (s == "transitive") return Closure::Transitive;
  if (s == "direct") return Closure::DirectEdges;
  throw Error(ErrorKind::ConfigError, "closure must be transitive or direct, got '" + s + "'");
}

GenMode parse_mode(const std::string& s) {
  if (s == "cyclic") return GenMode::Cyclic;
  if (s == "acyclic") return GenMode::Acyclic;
  throw Error(ErrorKind::ConfigError, "mode must be cyclic or acyclic, got '" + s + "'");
}

void emit(const Json& j, const std::string& path) {
  if (path.empty() || path == "-")
    std::cout << j.dump(2) << "\n";
  else
    write_json_file(path, j);
}

Json graphs_json(const TpgMap& tpgs, const SccMap& decomps) {
  Json out = Json::array();
  for (const auto& [k, g] : tpgs) {
    const SccDecomposition& d = decomps.at(k);
    Json edges = Json::array();
    for (int a = 0; a < g.size(); ++a)
      for (int b : g.adj[a]) edges.push_back({g.nodes[a], g.nodes[b]});
    Json comps = Json::array();
    for (std::size_t c = 0; c < d.components.size(); ++c)
      comps.push_back({{"tokens", d.components[c]}, {"level", d.levels[c]}, {"successors", d.condensation[c]}});
    out.push_back({{"last_token", k}, {"nodes", g.nodes}, {"edges", edges}, {"components", comps}});
  }
  return out;
}

std::string graphs_dot(const TpgMap& tpgs, const SccMap& decomps) {
  std::ostringstream os;
  os << "digraph tpgs {\n";
  for (const auto& [k, g] : tpgs) {
    const SccDecomposition& d = decomps.at(k);
    os << "  subgraph cluster_k" << k << " {\n    label=\"last token " << k << "\";\n";
    for (std::size_t c = 0; c < d.components.size(); ++c) {
      os << "    subgraph cluster_k" << k << "_c" << c << " { label=\"level " << d.levels[c] << "\";";
      for (TokenId t : d.components[c]) os << " \"" << k << ":" << t << "\" [label=\"" << t << "\"];";
      os << " }\n";
    }
    for (int a = 0; a < g.size(); ++a)
      for (int b : g.adj[a]) os << "    \"" << k << ":" << g.nodes[a] << "\" -> \"" << k << ":" << g.nodes[b] << "\";\n";
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

Json svm_json(const Geometry& g, const Feasibility& feas) {
  Json mult = Json::array();
  for (double m : g.svm.multipliers) mult.push_back(m);
  const auto& r = g.svm.residuals;
  return {{"status", to_string(g.svm.status)},
          {"norm", g.svm.norm()},
          {"W", matrix_to_json(g.svm.W)},
          {"equalities", g.constraints.equalities.size()},
          {"inequalities", g.constraints.inequalities.size()},
          {"multipliers", mult},
          {"residuals", {{"max_eq", r.max_eq}, {"min_ineq", std::isfinite(r.min_ineq) ? Json(r.min_ineq) : Json(nullptr)},
                         {"kkt", r.kkt}, {"sweeps", r.sweeps}}},
          {"feasible", feas.feasible},
          {"feasibility_from_certificate", feas.from_certificate},
          {"dim_S_fin", g.subspaces.fin.dim()},
          {"dim_S_active", g.subspaces.active.dim()},
          {"dim_S_svm", g.subspaces.svm.dim()}};
}

Json opt_num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

struct GenArgs {
  std::string config, out;
  std::optional<int> K, d, n, T;
  std::optional<std::string> embedding, head, mode;
  std::optional<double> noise;
  std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenArgs& a) {
  const Json f = load_config(a.config);
  const int K = pick(a.K, f, "K", 6), d = pick(a.d, f, "d", 8), n = pick(a.n, f, "n", 6), T = pick(a.T, f, "T", 4);
  const std::string ek = pick(a.embedding, f, "embedding", std::string("unit_sphere"));
  const std::string hk = pick(a.head, f, "head", std::string("tied"));
  const double noise = pick(a.noise, f, "noise", 0.1);
  const GenMode mode = parse_mode(pick(a.mode, f, "mode", std::string("cyclic")));
  const std::uint64_t seed = pick(a.seed, f, "seed", default_seed());
  if (K < 1 || d < 1 || n < 1 || T < 1) throw Error(ErrorKind::ConfigError, "K, d, n, T must be positive");
  EmbeddingKind kind;
  if (ek == "unit_sphere") kind = EmbeddingKind::UnitSphere;
  else if (ek == "orthonormal") kind = EmbeddingKind::Orthonormal;
  else throw Error(ErrorKind::ConfigError, "embedding must be unit_sphere or orthonormal");
  const EmbeddingTable E = make_embeddings(K, d, kind, mix_seed(seed, 1));
  std::optional<ClassifierHead> head;
  if (hk == "tied") head = make_head(E, HeadKind::Tied, noise, mix_seed(seed, 3));
  else if (hk == "general_argmax") head = make_head(E, HeadKind::GeneralArgmax, noise, mix_seed(seed, 3));
  else if (hk != "masked") throw Error(ErrorKind::ConfigError, "head must be tied, general_argmax or masked");
  const Dataset ds = gen_dataset(E, head, n, T, mode, mix_seed(seed, 2));
  emit(dataset_to_json(ds), a.out);
  return kExitOk;
}

int cmd_graph(const std::string& data, const std::string& out, const std::string& dot) {
  const Dataset ds = load_dataset(data);
  const TpgMap tpgs = build_tpgs(ds);
  const SccMap dec = scc_all(tpgs);
  emit({{"acyclic", is_acyclic(dec)}, {"scc_count", total_scc_count(dec)}, {"graphs", graphs_json(tpgs, dec)}}, out);
  if (!dot.empty()) write_text_file(dot, graphs_dot(tpgs, dec));
  return kExitOk;
}

int cmd_svm(const std::string& data, const std::string& out, const std::string& closure) {
  const Dataset ds = load_dataset(data);
  GeometryOptions go;
  go.closure = parse_closure(closure);
  const Geometry g = analyze_geometry(ds, go);
  const Feasibility feas = check_feasibility(g.constraints, ds.embedding, g.decomps);
  emit(svm_json(g, feas), out);
  return g.svm.status == SvmStatus::Solved ? kExitOk : kExitNumeric;
}

struct TrainArgs {
  std::string config;
  std::optional<std::string> data, loss, init, closure, trace, summary, weights_out;
  std::optional<double> eta;
  std::optional<int> iters, record_every;
  std::optional<bool> normalized;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  const Json f = load_config(a.config);
  const std::string data = pick(a.data, f, "data", std::string());
  if (data.empty()) throw Error(ErrorKind::ConfigError, "train needs --data");
  const Dataset ds = load_dataset(data);
  TrainConfig tc;
  tc.loss = parse_loss(pick(a.loss, f, "loss", std::string("log")));
  tc.eta = pick(a.eta, f, "eta", 0.01);
  tc.iters = pick(a.iters, f, "iters", 4000);
  tc.normalized = pick(a.normalized, f, "normalized", false);
  tc.record_every = pick(a.record_every, f, "record_every", 10);
  tc.init_seed = pick(a.seed, f, "seed", default_seed());
  const std::string init = pick(a.init, f, "init", std::string("zero"));
  if (init == "zero") {
    tc.init = InitKind::Zero;
  } else if (init.rfind("gauss:", 0) == 0) {
    tc.init = InitKind::Gaussian;
    try {
      tc.init_scale = std::stod(init.substr(6));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "init must be zero or gauss:<sigma>");
    }
  } else {
    throw Error(ErrorKind::ConfigError, "init must be zero or gauss:<sigma>");
  }
  GeometryOptions go;
  go.closure = parse_closure(pick(a.closure, f, "closure", std::string("transitive")));
  const auto t0 = std::chrono::steady_clock::now();
  const Geometry g = analyze_geometry(ds, go);
  int code = kExitOk;
  TrainTrace trace;
  try {
    trace = train_gd(ds, tc, g.refs());
  } catch (const NonFiniteLossError& e) {
    std::cerr << "attnlab: " << e.what() << "\n";
    trace = e.trace();
    code = kExitNumeric;
  }
  const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const std::string trace_path = pick(a.trace, f, "trace", std::string());
  if (!trace_path.empty()) write_text_file(trace_path, trace_csv(trace));
  const std::string weights = pick(a.weights_out, f, "weights_out", std::string());
  if (!weights.empty()) write_json_file(weights, matrix_to_json(trace.W_final));
  const TraceRow last = trace.rows.empty() ? TraceRow{} : trace.rows.back();
  emit({{"final_corr", opt_num(last.corr_svm)},
        {"final_dist", opt_num(last.dist_fin)},
        {"final_loss", opt_num(last.loss)},
        {"loss_inf", opt_num(g.loss_inf)},
        {"wall_ms", wall}},
       pick(a.summary, f, "summary", std::string()));
  return code;
}

int cmd_analyze(const std::string& data, const std::string& weights, const std::string& out, double epsilon) {
  const Dataset ds = load_dataset(data);
  const Geometry g = analyze_geometry(ds);
  Json j = {{"n", ds.n()},
            {"T_max", ds.T_max()},
            {"acyclic", is_acyclic(g.decomps)},
            {"scc_count", total_scc_count(g.decomps)},
            {"svm_status", to_string(g.svm.status)},
            {"svm_norm", g.svm.norm()},
            {"dim_S_fin", g.subspaces.fin.dim()},
            {"w_fin_norm", g.wfin.W.norm()},
            {"loss_inf", g.loss_inf},
            {"cyclic_samples", g.split.idx_I.size()}};
  if (!weights.empty()) {
    const Mat W = matrix_from_json(read_json_file(weights), "weights");
    if (W.rows() != ds.embedding.d() || W.cols() != ds.embedding.d())
      throw Error(ErrorKind::InvalidDims, "weights must be d x d");
    const double wn = W.norm(), sn = g.svm.norm();
    j["w_norm"] = wn;
    j["corr_svm"] = (wn > 0 && sn > 0) ? Json(correlation(W, g.svm.W)) : Json(nullptr);
    j["dist_fin"] = (g.subspaces.fin.project(W) - g.wfin.W).norm();
    j["retained_fraction"] = retained_fraction(W, ds, g.decomps, epsilon);
    const PseudoTpgConfig pc{epsilon};
    const TpgMap ptpgs = pseudo_tpgs(W, ds, pc);
    const SccMap pdec = scc_all(ptpgs);
    j["pseudo"] = {{"scc_count", total_scc_count(pdec)}, {"graphs", graphs_json(ptpgs, pdec)}};
  }
  emit(j, out);
  return kExitOk;
}

struct ExpArgs {
  std::string name, config;
  std::optional<std::string> out, loss, head;
  std::optional<int> K, d, n, T, iters, trials, workers, record_every;
  std::optional<double> eta, noise;
  std::optional<bool> normalized;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> thresholds;
};

int cmd_exp(const ExpArgs& a) {
  ExperimentConfig cfg = default_experiment(a.name);
  cfg.params.seed = default_seed();
  cfg.params.workers = default_workers();
  if (!a.config.empty()) apply_json(cfg, read_json_file(a.config));
  if (cfg.name != a.name) throw Error(ErrorKind::ConfigError, "config names experiment '" + cfg.name + "'");
  ExperimentParams& p = cfg.params;
  if (a.K) p.K = *a.K;
  if (a.d) p.d = *a.d;
  if (a.n) p.n = *a.n;
  if (a.T) p.T = *a.T;
  if (a.iters) p.iters = *a.iters;
  if (a.trials) p.trials = *a.trials;
  if (a.workers) p.workers = *a.workers;
  if (a.record_every) p.record_every = *a.record_every;
  if (a.eta) p.eta = *a.eta;
  if (a.noise) p.noise = *a.noise;
  if (a.normalized) p.normalized = *a.normalized;
  if (a.seed) p.seed = *a.seed;
  if (a.loss) p.loss = parse_loss(*a.loss);
  if (a.head) p.head = *a.head;
  if (a.out) cfg.output_dir = *a.out;
  for (const std::string& kv : a.thresholds) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "threshold must be key=value: " + kv);
    const std::string key = kv.substr(0, eq);
    if (!cfg.thresholds.count(key)) throw Error(ErrorKind::ConfigError, "unknown threshold '" + key + "'");
    try {
      cfg.thresholds[key] = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "threshold value is not a number: " + kv);
    }
  }
  const ExperimentResult res = run_experiment(cfg);
  std::cout << res.summary.dump(2) << "\n";
  for (const auto& v : res.violations) std::cerr << "acceptance violation: " << v << "\n";
  return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnlab: token-priority graphs, graph SVMs and attention training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ATTNLAB_VERSION);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset as JSON");
  g->add_option("--config", gen.config, "JSON config file");
  g->add_option("--out,-o", gen.out, "Output path (stdout when omitted)");
  g->add_option("--K", gen.K, "Vocabulary size");
  g->add_option("--d", gen.d, "Embedding dimension");
  g->add_option("--n", gen.n, "Number of samples");
  g->add_option("--T", gen.T, "Sequence length");
  g->add_option("--embedding", gen.embedding, "unit_sphere | orthonormal");
  g->add_option("--head", gen.head, "tied | general_argmax | masked");
  g->add_option("--noise", gen.noise, "Head noise for general_argmax");
  g->add_option("--mode", gen.mode, "cyclic | acyclic");
  g->add_option("--seed", gen.seed, "Seed");

  std::string data, out, dot, closure = "transitive", weights;
  double epsilon = 1e-3;
  auto* bg = app.add_subcommand("build-graph", "Build token-priority graphs and their SCCs");
  bg->add_option("--data", data, "Dataset JSON")->required();
  bg->add_option("--out,-o", out, "Output JSON path");
  bg->add_option("--dot", dot, "Also write Graphviz DOT to this path");

  auto* sv = app.add_subcommand("solve-svm", "Solve the graph SVM for a dataset");
  sv->add_option("--data", data, "Dataset JSON")->required();
  sv->add_option("--out,-o", out, "Output JSON path");
  sv->add_option("--closure", closure, "transitive | direct");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train attention weights by gradient descent");
  t->add_option("--config", tr.config, "JSON config file; flags override it");
  t->add_option("--data", tr.data, "Dataset JSON");
  t->add_option("--loss", tr.loss, "log | squared | ce");
  t->add_option("--eta", tr.eta, "Step size");
  t->add_option("--iters", tr.iters, "Iterations");
  t->add_flag("--normalized{true},--plain{false}", tr.normalized, "Normalized or plain gradient steps");
  t->add_option("--init", tr.init, "zero | gauss:<sigma>");
  t->add_option("--seed", tr.seed, "Initialisation seed");
  t->add_option("--record-every", tr.record_every, "Trace cadence");
  t->add_option("--closure", tr.closure, "transitive | direct");
  t->add_option("--trace", tr.trace, "Trace CSV path");
  t->add_option("--summary", tr.summary, "Summary JSON path (stdout when omitted)");
  t->add_option("--weights-out", tr.weights_out, "Write the final W as JSON");

  auto* an = app.add_subcommand("analyze", "Report graph geometry and, given weights, convergence diagnostics");
  an->add_option("--data", data, "Dataset JSON")->required();
  an->add_option("--weights", weights, "Weights JSON written by train --weights-out");
  an->add_option("--out,-o", out, "Output JSON path");
  an->add_option("--epsilon", epsilon, "Retention threshold for pseudo graphs");

  ExpArgs ex;
  auto* e = app.add_subcommand("exp", "Run a named experiment");
  e->add_option("name", ex.name, "Experiment name")->required()->check(CLI::IsMember(experiment_names()));
  e->add_option("--config", ex.config, "JSON config or manifest; flags override it");
  e->add_option("--out,-o", ex.out, "Output directory");
  e->add_option("--K", ex.K);
  e->add_option("--d", ex.d);
  e->add_option("--n", ex.n);
  e->add_option("--T", ex.T);
  e->add_option("--eta", ex.eta);
  e->add_option("--iters", ex.iters);
  e->add_option("--trials", ex.trials);
  e->add_option("--seed", ex.seed);
  e->add_option("--loss", ex.loss);
  e->add_option("--head", ex.head);
  e->add_option("--noise", ex.noise);
  e->add_flag("--normalized{true},--plain{false}", ex.normalized);
  e->add_option("--record-every", ex.record_every);
  e->add_option("--workers", ex.workers, "Worker threads (default: available parallelism)");
  e->add_option("--threshold", ex.thresholds, "Override an acceptance threshold, key=value");

  SelftestOptions st;
  auto* s = app.add_subcommand("selftest", "Run the property self-test suite");
  s->add_option("--seed", st.seed, "Seed for the random instances");
  s->add_flag("--corrupt-gradient", st.corrupt_gradient, "Negate analytic gradients (mutation canary)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*bg) return cmd_graph(data, out, dot);
    if (*sv) return cmd_svm(data, out, closure);
    if (*t) return cmd_train(tr);
    if (*an) return cmd_analyze(data, weights, out, epsilon);
    if (*e) return cmd_exp(ex);
    if (*s) {
      const SelftestReport rep = run_selftest(st);
      print_report(rep, std::cout);
      return rep.all_passed() ? kExitOk : kExitAcceptance;
    }
  } catch (const Error& err) {
    std::cerr << "attnlab: " << err.what() << "\n";
    switch (err.kind()) {
      case ErrorKind::ConfigError:
      case ErrorKind::SchemaViolation:
      case ErrorKind::IoError:
      case ErrorKind::InvalidDims:
        return kExitConfig;
      default:
        return kExitNumeric;
    }
  } catch (const std::exception& err) {
    std::cerr << "attnlab: " << err.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
