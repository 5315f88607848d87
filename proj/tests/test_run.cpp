// Pipeline driver: artifact layout, the manifest contract, error capture
// with the exit-code taxonomy, and byte-identical reruns across threads.
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "pesin/cache.hpp"
#include "pesin/config.hpp"
#include "pesin/errors.hpp"
#include "pesin/run.hpp"

using namespace pesin;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct DirGuard {
  fs::path path;
  explicit DirGuard(const std::string& tag)
      : path(fs::temp_directory_path() / ("pesinlab_run_" + tag)) {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  ~DirGuard() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json slurp_json(const fs::path& p) { return json::parse(slurp(p)); }

bool lists_artifact(const json& manifest, const std::string& name) {
  for (const auto& a : manifest.at("artifacts"))
    if (a.get<std::string>() == name) return true;
  return false;
}

}  // namespace

TEST_SUITE("run") {

TEST_CASE("exit codes follow the error taxonomy") {
  CHECK(exit_code_for(config_error("x")) == 2);
  CHECK(exit_code_for(divergence_error("x")) == 3);
  CHECK(exit_code_for(capability_error("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 3);
}

TEST_CASE("simulate writes a replayable trajectory") {
  const DirGuard dir("simulate");
  json doc = {{"pipeline", "simulate"},
              {"system", {{"name", "diag"}, {"entries", {0.5}}}},
              {"out_dir", dir.path.string()},
              {"seed", 9},
              {"simulate", {{"steps", 16}, {"x0", {1.0}}}}};
  const RunResult res = run_experiment(parse_config(doc));
  CHECK(res.exit_code == 0);
  CHECK(res.manifest.at("status") == "ok");
  CHECK(lists_artifact(res.manifest, "trajectory.csv"));
  CHECK(lists_artifact(res.manifest, "trajectory.pesn"));

  // The cached binary replays the halving orbit exactly.
  const auto traj = read_trajectory_cache((dir.path / "trajectory.pesn").string());
  REQUIRE(traj.size() == 17);
  for (int k = 0; k <= 16; ++k)
    CHECK(traj[std::size_t(k)][0] == std::pow(0.5, k));

  const std::string csv = slurp(dir.path / "trajectory.csv");
  CHECK(csv.rfind("step,x0\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 18);

  // Manifest on disk matches what the call returned.
  const json manifest = slurp_json(dir.path / "manifest.json");
  CHECK(manifest.at("pipeline") == "simulate");
  CHECK(manifest.at("seed") == 9);
  CHECK(manifest.at("config_hash") == config_hash(doc));
  CHECK(manifest.at("versions").at("pesinlab") == kVersion);
  CHECK(manifest.at("wall_ms").get<long long>() >= 0);

  // cache=false drops the binary artifact.
  doc["simulate"]["cache"] = false;
  const RunResult nocache = run_experiment(parse_config(doc));
  CHECK(nocache.exit_code == 0);
  CHECK(!lists_artifact(nocache.manifest, "trajectory.pesn"));
}

TEST_CASE("pipeline failures are captured in the manifest") {
  // Divergent orbit: numeric failure, exit 3.
  const DirGuard dir("failures");
  json doc = {{"pipeline", "simulate"},
              {"system", {{"name", "diag"}, {"entries", {10.0}}}},
              {"out_dir", dir.path.string()},
              {"simulate", {{"steps", 20}, {"x0", {1.0}}}}};
  const RunResult res = run_experiment(parse_config(doc));
  CHECK(res.exit_code == 3);
  CHECK(res.manifest.at("status") == "error");
  CHECK(res.manifest.at("error").get<std::string>().find("diverged") !=
        std::string::npos);
  // The manifest still lands on disk for post-mortems.
  CHECK(slurp_json(dir.path / "manifest.json").at("status") == "error");

  // Bad budget inside a pipeline: configuration failure, exit 2.
  json bad = {{"pipeline", "entropy"},
              {"system", {{"name", "ou_map"}, {"dim", 1}}},
              {"out_dir", dir.path.string()},
              {"measure", {{"type", "gaussian"}, {"mean", {0.0}}}},
              {"entropy", {{"m_x", 999}, {"n_max", 3}}}};
  const RunResult cfg_fail = run_experiment(parse_config(bad));
  CHECK(cfg_fail.exit_code == 2);
  CHECK(cfg_fail.manifest.at("status") == "error");
}

TEST_CASE("spectrum pipeline reports the diagonal exponents") {
  const DirGuard dir("spectrum");
  json doc = {{"pipeline", "spectrum"},
              {"system", {{"name", "diag"}, {"entries", {0.5, 2.0}}}},
              {"out_dir", dir.path.string()},
              {"spectrum", {{"horizon", 400}}}};
  const RunResult res = run_experiment(parse_config(doc));
  REQUIRE(res.exit_code == 0);

  const json lam = slurp_json(dir.path / "lambda.json");
  REQUIRE(lam.at("lambda").size() == 2);
  // Clustered exponents are reported in increasing order.
  CHECK(std::abs(lam.at("lambda")[0].get<double>() + std::log(2.0)) <= 1e-9);
  CHECK(std::abs(lam.at("lambda")[1].get<double>() - std::log(2.0)) <= 1e-9);
  CHECK(std::abs(lam.at("sum_positive").get<double>() - std::log(2.0)) <=
        1e-9);
  CHECK(std::abs(lam.at("det_residual").get<double>()) <= 1e-10);
  CHECK(lam.at("n").get<int>() == 400);

  const std::string csv = slurp(dir.path / "lambda.csv");
  CHECK(csv.rfind("lambda,multiplicity\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("entropy pipeline is thread-invariant byte for byte") {
  json doc = {{"pipeline", "entropy"},
              {"system", {{"name", "ou_map"}, {"dim", 1}}},
              {"seed", 4},
              {"format", "json"},
              {"measure", {{"type", "gaussian"}, {"mean", {0.0}}}},
              {"entropy", {{"m_omega", 4}, {"m_x", 1000}, {"n_max", 4}, {"g", 8}}}};

  const DirGuard one("entropy_t1");
  doc["out_dir"] = one.path.string();
  doc["threads"] = 1;
  REQUIRE(run_experiment(parse_config(doc)).exit_code == 0);

  const DirGuard four("entropy_t4");
  doc["out_dir"] = four.path.string();
  doc["threads"] = 4;
  REQUIRE(run_experiment(parse_config(doc)).exit_code == 0);

  CHECK(slurp(one.path / "entropy.csv") == slurp(four.path / "entropy.csv"));
  CHECK(slurp(one.path / "entropy.json") == slurp(four.path / "entropy.json"));

  const json curve = slurp_json(one.path / "entropy.json");
  CHECK(curve.at("n").size() == 4);
  CHECK(curve.contains("rate"));
  CHECK(curve.contains("rate_se"));

  const std::string csv = slurp(one.path / "entropy.csv");
  CHECK(csv.rfind("n,H,SE,Momega,Mx,g\n", 0) == 0);
}

TEST_CASE("pesin pipeline reports its refinement ladder") {
  // g_max == g0 leaves a single rung; stabilization needs two, so the
  // verdict must be inconclusive no matter the numbers.
  const DirGuard dir("pesin");
  json doc = {{"pipeline", "pesin-verify"},
              {"system", {{"name", "ou_map"}, {"dim", 1}}},
              {"out_dir", dir.path.string()},
              {"measure", {{"type", "gaussian"}, {"mean", {0.0}}}},
              {"pesin",
               {{"m_omega", 4},
                {"m_x", 1000},
                {"n_max", 6},
                {"g0", 8},
                {"g_max", 8},
                {"window", 4},
                {"spectrum_samples", 2},
                {"spectrum_horizon", 200}}}};
  const RunResult res = run_experiment(parse_config(doc));
  REQUIRE(res.exit_code == 0);

  const json rep = slurp_json(dir.path / "pesin_report.json");
  CHECK(rep.at("verdict") == "inconclusive");
  CHECK(rep.at("ladder_stabilized") == false);
  REQUIRE(rep.at("ladder_g").size() == 1);
  CHECK(rep.at("ladder_g")[0] == 8);
  CHECK(rep.at("sum_positive").get<double>() == 0.0);
  CHECK(lists_artifact(res.manifest, "entropy.csv"));
}

TEST_CASE("audit pipeline writes verdict entries") {
  const DirGuard dir("audit");
  json doc = {{"pipeline", "audit"},
              {"system", {{"name", "diag"}, {"entries", {2.0}}}},
              {"out_dir", dir.path.string()},
              {"measure", {{"type", "gaussian"}, {"mean", {0.0}}}},
              {"audit", {{"samples", 64}, {"horizon", 2}}}};
  const RunResult res = run_experiment(parse_config(doc));
  REQUIRE(res.exit_code == 0);

  const json audit = slurp_json(dir.path / "audit.json");
  CHECK(audit.at("horizon") == 2);
  CHECK(audit.at("all_clear") == true);
  REQUIRE(!audit.at("entries").empty());
  CHECK(audit.at("entries")[0].at("name") == "log_dx");
  CHECK(audit.at("entries")[0].at("samples") == 64);
}

TEST_CASE("manifold and holonomy pipelines run on a split linear system") {
  const double s = std::exp(-1.2), u = std::exp(-0.2);

  const DirGuard mdir("manifold");
  json mdoc = {{"pipeline", "stable-manifold"},
               {"system", {{"name", "diag"}, {"entries", {s, u}}}},
               {"out_dir", mdir.path.string()},
               {"manifold",
                {{"degree", 2},
                 {"samples", 32},
                 {"test_horizon", 20},
                 {"back_depth", 16},
                 {"x0", {0.02, -0.01}}}}};
  const RunResult mres = run_experiment(parse_config(mdoc));
  REQUIRE(mres.exit_code == 0);
  CHECK(lists_artifact(mres.manifest, "charts/chart_0.json"));
  const json chart = slurp_json(mdir.path / "charts" / "chart_0.json");
  CHECK(chart.contains("alpha"));

  // A window with no stable directions is a configuration error, captured.
  json flat = mdoc;
  flat["system"]["entries"] = {0.9, 1.1};
  const RunResult fres = run_experiment(parse_config(flat));
  CHECK(fres.exit_code == 2);
  CHECK(fres.manifest.at("status") == "error");

  const DirGuard hdir("holonomy");
  json hdoc = {{"pipeline", "holonomy"},
               {"system", {{"name", "diag"}, {"entries", {s, u}}}},
               {"out_dir", hdir.path.string()},
               {"holonomy",
                {{"chains", 25},
                 {"disc_radius", 0.2},
                 {"disc_offset", 0.1},
                 {"q_radius", 1.0},
                 {"seed_radius", 0.05},
                 {"chart_degree", 2}}}};
  const RunResult hres = run_experiment(parse_config(hdoc));
  REQUIRE(hres.exit_code == 0);
  const json hol = slurp_json(hdir.path / "holonomy.json");
  CHECK(hol.at("chains").get<int>() == 25);
  CHECK(hol.at("dropped").get<int>() == 0);
  // Parallel flat discs in a diagonal linear system: the holonomy is a
  // translation, so the density ratio sits at one.
  CHECK(hol.at("jacobian").get<double>() > 0.7);
  CHECK(hol.at("jacobian").get<double>() < 1.4);
  CHECK(hol.at("fraction_bound").get<double>() == 1.0);
}

}  // TEST_SUITE
