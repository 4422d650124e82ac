#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

std::string cli() {
  const char* p = std::getenv("ATTNLAB_CLI");
  REQUIRE_MESSAGE(p != nullptr, "ATTNLAB_CLI must point at the attnlab binary");
  return p;
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("attnlab_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
  const fs::path log = scratch() / "stdout.txt";
  const std::string cmd = env + " \"" + cli() + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const char* kSmallExp = " --trials 2 --iters 300 --threshold min_mean_corr=0 --threshold max_mean_dist=100";

}  // namespace

TEST_CASE("pipeline subcommands") {
  const fs::path data = scratch() / "data.json";
  REQUIRE(run("gen-data --K 5 --d 6 --n 5 --T 4 --seed 3 --out " + q(data)).code == 0);
  const Json ds = read_json(data);
  CHECK(ds["K"] == 5);
  CHECK(ds["samples"].size() == 5);

  const fs::path graphs = scratch() / "graphs.json", dot = scratch() / "graphs.dot";
  REQUIRE(run("build-graph --data " + q(data) + " --out " + q(graphs) + " --dot " + q(dot)).code == 0);
  CHECK(read_json(graphs).dump().find("components") != std::string::npos);
  CHECK(slurp(dot).rfind("digraph", 0) == 0);

  const fs::path svm = scratch() / "svm.json";
  REQUIRE(run("solve-svm --data " + q(data) + " --out " + q(svm)).code == 0);
  const Json sj = read_json(svm);
  CHECK(sj["status"] == "solved");
  CHECK(sj.contains("norm"));

  const fs::path trace = scratch() / "trace.csv", summary = scratch() / "train.json", weights = scratch() / "W.json";
  REQUIRE(run("train --data " + q(data) + " --iters 200 --eta 0.01 --normalized --trace " + q(trace) + " --summary " +
              q(summary) + " --weights-out " + q(weights))
              .code == 0);
  CHECK(slurp(trace).rfind("iter,loss,loss_bar,grad_norm,w_norm,corr_svm,dist_fin", 0) == 0);
  const Json tj = read_json(summary);
  for (const char* k : {"final_corr", "final_dist", "final_loss", "loss_inf", "wall_ms"}) CHECK(tj.contains(k));

  const fs::path report = scratch() / "analysis.json";
  REQUIRE(run("analyze --data " + q(data) + " --weights " + q(weights) + " --out " + q(report)).code == 0);
  CHECK(read_json(report).contains("retained_fraction"));
}

TEST_CASE("configuration errors exit 2") {
  CHECK(run("").code == 2);
  CHECK(run("no-such-command").code == 2);
  CHECK(run("exp no-such-experiment").code == 2);
  CHECK(run("build-graph --data /nonexistent/data.json").code == 2);
  CHECK(run("exp cyclic-global --K 0 --out " + q(scratch() / "bad")).code == 2);
  CHECK(run("exp cyclic-global --threshold bogus=1 --out " + q(scratch() / "bad")).code == 2);
  CHECK(run("train --data /nonexistent.json").code == 2);
  const fs::path broken = scratch() / "broken.json";
  std::ofstream(broken) << "{\"K\": 2,";
  CHECK(run("solve-svm --data " + q(broken)).code == 2);
}

TEST_CASE("version flag") {
  const Run r = run("--version");
  CHECK(r.code == 0);
  CHECK(r.out.find('.') != std::string::npos);
}

TEST_CASE("acceptance violations exit 3") {
  const Run r = run("exp cyclic-global --trials 2 --iters 50 --workers 1 --threshold min_mean_corr=1.5 --out " +
                    q(scratch() / "viol"));
  CHECK(r.code == 3);
  CHECK(read_json(scratch() / "viol" / "summary.json")["passed"] == false);
}

TEST_CASE("experiment outputs are byte-identical across runs") {
  const fs::path a = scratch() / "run_a", b = scratch() / "run_b";
  REQUIRE(run("exp cyclic-global" + std::string(kSmallExp) + " --workers 1 --out " + q(a)).code == 0);
  REQUIRE(run("exp cyclic-global" + std::string(kSmallExp) + " --workers 2 --out " + q(b)).code == 0);
  for (const char* f : {"trace_000.csv", "trace_001.csv", "trials.csv", "aggregate.csv", "summary.json"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  CHECK_FALSE(slurp(a / "trace_000.csv").empty());
}

TEST_CASE("manifest round-trip reproduces the summary") {
  const fs::path a = scratch() / "man_a", b = scratch() / "man_b";
  REQUIRE(run("exp acyclic-global --trials 2 --iters 300 --threshold min_mean_corr=0 --seed 4 --workers 1 --out " + q(a)).code == 0);
  const Json manifest = read_json(a / "manifest.json");
  CHECK(manifest["params"]["seed"] == 4);
  CHECK(manifest.contains("version"));
  REQUIRE(run("exp acyclic-global --config " + q(a / "manifest.json") + " --out " + q(b)).code == 0);
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(slurp(a / "aggregate.csv") == slurp(b / "aggregate.csv"));
}

TEST_CASE("seed precedence: flag over environment over default") {
  const fs::path d0 = scratch() / "s0.json", d1 = scratch() / "s1.json", d2 = scratch() / "s2.json", d3 = scratch() / "s3.json";
  REQUIRE(run("gen-data --out " + q(d0)).code == 0);
  REQUIRE(run("gen-data --out " + q(d1), "ATTNLAB_SEED=9").code == 0);
  REQUIRE(run("gen-data --seed 9 --out " + q(d2)).code == 0);
  REQUIRE(run("gen-data --seed 0 --out " + q(d3), "ATTNLAB_SEED=9").code == 0);
  CHECK(slurp(d0) != slurp(d1));
  CHECK(slurp(d1) == slurp(d2));
  CHECK(slurp(d0) == slurp(d3));
  CHECK(run("gen-data", "ATTNLAB_SEED=abc").code == 2);
}

TEST_CASE("selftest passes, is seed-stable and catches a corrupted gradient") {
  const Run ok = run("selftest");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  const Run other = run("selftest --seed 17");
  CHECK(other.code == 0);
  const Run bad = run("selftest --corrupt-gradient");
  CHECK(bad.code == 3);
  CHECK(bad.out.find("FAIL gradient-finite-difference") != std::string::npos);
  CHECK(bad.out.find("FAIL gradient-paths-agree") != std::string::npos);
}
