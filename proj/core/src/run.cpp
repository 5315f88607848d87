#include "pesin/run.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pesin/audit.hpp"
#include "pesin/cache.hpp"
#include "pesin/entropy_mc.hpp"
#include "pesin/errors.hpp"
#include "pesin/manifolds.hpp"
#include "pesin/oseledets.hpp"
#include "pesin/rng.hpp"

namespace pesin {
namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot write " + path.string());
  out << body;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::vector<double> to_vector(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vec x0_of(const nlohmann::json& section, int d) {
  if (section.contains("x0")) {
    const auto& arr = section.at("x0");
    Vec x(Eigen::Index(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
      x(Eigen::Index(i)) = arr[i].get<double>();
    if (int(x.size()) != d)
      throw config_error("x0 dimension does not match the system");
    return x;
  }
  return Vec::Zero(d);
}

PesinParams params_of(const nlohmann::json& s) {
  PesinParams p;
  p.a = s.value("a", -1.0);
  p.b = s.value("b", -0.5);
  p.k = s.value("k", 1);
  p.eps = s.value("eps", 1e-3);
  p.l_cap = s.value("l_cap", 2.0);
  p.r_cap = s.value("r_cap", 4.0);
  p.c_cap = s.value("c_cap", 10.0);
  return p;
}

std::string entropy_csv(const EntropyCurve& curve) {
  std::string body = "n,H,SE,Momega,Mx,g\n";
  for (std::size_t i = 0; i < curve.n.size(); ++i) {
    body += std::to_string(curve.n[i]) + "," + fmt_g(curve.H[i]) + "," +
            fmt_g(curve.se[i]) + "," + std::to_string(curve.m_omega) + "," +
            std::to_string(curve.m_x) + "," + std::to_string(curve.g) + "\n";
  }
  return body;
}

void pipeline_simulate(const ExperimentConfig& cfg, const DiffeoFamily& family,
                       const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("simulate", nlohmann::json::object());
  const int steps = s.value("steps", 1000);
  if (steps < 0) throw config_error("simulate.steps must be >= 0");
  const Vec x0 = x0_of(s, family.dim());
  const OmegaPrefix omega = draw_omega(family, cfg.seed, 0, steps);

  std::vector<Vec> traj;
  traj.reserve(std::size_t(steps) + 1);
  traj.push_back(x0);
  for (int k = 0; k < steps; ++k) {
    Vec x = family.eval(omega.theta[std::size_t(k)], traj.back());
    if (!x.allFinite() || x.norm() > kDivergenceGuard)
      throw divergence_error("trajectory diverged at step " +
                             std::to_string(k));
    traj.push_back(std::move(x));
  }

  std::string csv = "step";
  for (int j = 0; j < family.dim(); ++j) csv += ",x" + std::to_string(j);
  csv += "\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    csv += std::to_string(i);
    for (int j = 0; j < family.dim(); ++j) csv += "," + fmt_g(traj[i](j));
    csv += "\n";
  }
  write_text(dir / "trajectory.csv", csv);
  manifest["artifacts"].push_back("trajectory.csv");
  if (s.value("cache", true)) {
    write_trajectory_cache((dir / "trajectory.pesn").string(), traj);
    manifest["artifacts"].push_back("trajectory.pesn");
  }
}

void pipeline_spectrum(const ExperimentConfig& cfg, const DiffeoFamily& family,
                       const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("spectrum", nlohmann::json::object());
  const int horizon = s.value("horizon", 10000);
  const int block = s.value("block", 1);
  const double gap = s.value("cluster_gap", 0.05);
  const std::uint64_t replicate = s.value("replicate", 0);
  const Vec x0 = x0_of(s, family.dim());

  const OmegaPrefix omega = draw_omega(family, cfg.seed, replicate, horizon);
  const SpectrumEstimate est =
      lyapunov_spectrum(family, omega, x0, horizon, block, gap);
  const double resid = det_identity_residual(family, omega, x0, horizon, est);

  nlohmann::json j;
  j["lambda"] = est.lambda;
  j["multiplicity"] = est.m;
  j["rho"] = to_vector(est.rho);
  j["halfwidth"] = to_vector(est.halfwidth);
  j["n"] = est.n_used;
  j["logdet_rate"] = est.logdet_rate;
  j["det_residual"] = resid;
  j["sum_positive"] = est.sum_positive();
  write_json(dir / "lambda.json", j);
  manifest["artifacts"].push_back("lambda.json");

  std::string csv = "lambda,multiplicity\n";
  for (std::size_t i = 0; i < est.lambda.size(); ++i)
    csv += fmt_g(est.lambda[i]) + "," + std::to_string(est.m[i]) + "\n";
  write_text(dir / "lambda.csv", csv);
  manifest["artifacts"].push_back("lambda.csv");
}

void pipeline_entropy(const ExperimentConfig& cfg, const DiffeoFamily& family,
                      const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("entropy", nlohmann::json::object());
  const MeasureRepr mu = make_measure(
      cfg.raw.value("measure", nlohmann::json::object()), family, cfg.seed);

  const int g = s.value("g", 8);
  PartitionSpec spec = PartitionSpec::fit(mu, g, cfg.seed);
  if (s.contains("radius") && s.at("radius").get<double>() > 0.0)
    spec.radius = s.at("radius").get<double>();
  if (s.contains("center")) {
    const auto& arr = s.at("center");
    Vec c(Eigen::Index(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
      c(Eigen::Index(i)) = arr[i].get<double>();
    spec.center = c;
  }

  std::vector<int> depths;
  if (s.contains("depths")) {
    for (const auto& v : s.at("depths")) depths.push_back(v.get<int>());
  } else {
    for (int n = 1; n <= s.value("n_max", 8); ++n) depths.push_back(n);
  }
  const BiasCorrection mode =
      s.value("bias", std::string("miller_madow")) == "jackknife"
          ? BiasCorrection::jackknife
          : (s.value("bias", std::string("miller_madow")) == "none"
                 ? BiasCorrection::none
                 : BiasCorrection::miller_madow);

  const EntropyCurve curve =
      entropy_curve(family, mu, spec, depths, s.value("m_omega", 16),
                    s.value("m_x", 2000), cfg.seed, cfg.threads, mode);
  write_text(dir / "entropy.csv", entropy_csv(curve));
  manifest["artifacts"].push_back("entropy.csv");
  if (cfg.format == "json") {
    nlohmann::json j;
    j["n"] = curve.n;
    j["H"] = curve.H;
    j["SE"] = curve.se;
    j["stray"] = curve.stray;
    j["m_omega"] = curve.m_omega;
    j["m_x"] = curve.m_x;
    j["g"] = curve.g;
    const RateEstimate rate = entropy_rate(
        curve, std::min<int>(s.value("window", 5), int(curve.n.size()) - 2));
    j["rate"] = rate.rate;
    j["rate_se"] = rate.se;
    write_json(dir / "entropy.json", j);
    manifest["artifacts"].push_back("entropy.json");
  }
}

void pipeline_pesin(const ExperimentConfig& cfg, const DiffeoFamily& family,
                    const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("pesin", nlohmann::json::object());
  const MeasureRepr mu = make_measure(
      cfg.raw.value("measure", nlohmann::json::object()), family, cfg.seed);

  PesinBudget budget;
  budget.m_omega = s.value("m_omega", 16);
  budget.m_x = s.value("m_x", 2000);
  budget.n_max = s.value("n_max", 10);
  budget.g0 = s.value("g0", 8);
  budget.g_max = s.value("g_max", 64);
  budget.window = s.value("window", 5);
  budget.spectrum_samples = s.value("spectrum_samples", 8);
  budget.spectrum_horizon = s.value("spectrum_horizon", 2000);
  budget.stabilize_tol = s.value("stabilize_tol", 0.02);
  budget.tol_floor = s.value("tol_floor", 0.05);
  budget.threads = cfg.threads;
  budget.seed = cfg.seed;

  const PesinReport rep = pesin_gap(family, mu, budget);

  nlohmann::json j;
  j["h"] = rep.h;
  j["h_halfwidth"] = rep.h_halfwidth;
  j["sum_positive"] = rep.sum_positive;
  j["sum_halfwidth"] = rep.sum_halfwidth;
  j["gap"] = rep.gap;
  j["verdict"] = verdict_name(rep.verdict);
  j["ladder_stabilized"] = rep.ladder_stabilized;
  j["ladder_g"] = rep.ladder_g;
  j["ladder_rate"] = rep.ladder_rate;
  j["ladder_rate_se"] = rep.ladder_rate_se;
  write_json(dir / "pesin_report.json", j);
  manifest["artifacts"].push_back("pesin_report.json");
  write_text(dir / "entropy.csv", entropy_csv(rep.final_curve));
  manifest["artifacts"].push_back("entropy.csv");
}

void pipeline_audit(const ExperimentConfig& cfg, const DiffeoFamily& family,
                    const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("audit", nlohmann::json::object());
  const MeasureRepr mu = make_measure(
      cfg.raw.value("measure", nlohmann::json::object()), family, cfg.seed);

  AuditOptions opts;
  opts.samples = s.value("samples", 2000);
  opts.horizon = s.value("horizon", 8);
  opts.ball_radius = s.value("ball_radius", 1.0);
  opts.xi_grid = s.value("xi_grid", 16);
  opts.need_hessian = s.value("need_hessian", family.has_hessian());
  opts.need_inverse = s.value("need_inverse", family.has_inverse());
  opts.seed = cfg.seed;
  opts.threads = cfg.threads;

  const AuditReport rep = audit_assumptions(family, mu, opts);
  nlohmann::json j;
  j["horizon"] = rep.horizon;
  j["ball_radius"] = rep.ball_radius;
  j["all_clear"] = rep.all_clear();
  j["entries"] = nlohmann::json::array();
  for (const auto& e : rep.entries) {
    nlohmann::json je;
    je["name"] = e.name;
    je["estimate"] = e.estimate;
    je["se"] = e.se;
    je["samples"] = e.samples;
    je["hill"] = std::isfinite(e.hill) ? nlohmann::json(e.hill)
                                       : nlohmann::json("inf");
    je["se_decay"] = e.se_decay;
    je["zero_fraction"] = e.zero_fraction;
    je["verdict"] = e.verdict;
    j["entries"].push_back(je);
  }
  write_json(dir / "audit.json", j);
  manifest["artifacts"].push_back("audit.json");
}

void pipeline_manifold(const ExperimentConfig& cfg, const DiffeoFamily& family,
                       const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("manifold", nlohmann::json::object());
  const PesinParams p = params_of(s);
  const Vec x0 = x0_of(s, family.dim());

  ChartOptions opts;
  opts.level = s.value("level", 0);
  opts.samples = s.value("samples", 64);
  opts.fit_radius = s.value("fit_radius", 0.0);
  opts.test_horizon = s.value("test_horizon", 30);
  opts.back_depth = s.value("back_depth", 24);
  opts.accept_cap = s.value("accept_cap", 4.0);
  opts.check_membership = s.value("check_membership", true);
  opts.seed = cfg.seed;

  const OmegaPrefix omega =
      draw_omega(family, cfg.seed, 0,
                 opts.level + std::max(opts.back_depth, opts.test_horizon) + 2);
  const ManifoldChart chart = fit_local_chart(
      family, omega, x0, p, s.value("degree", 3), opts.samples, opts);

  fs::create_directories(dir / "charts");
  write_json(dir / "charts" /
                 ("chart_" + std::to_string(opts.level) + ".json"),
             chart_to_json(chart));
  manifest["artifacts"].push_back("charts/chart_" +
                                  std::to_string(opts.level) + ".json");
}

void pipeline_holonomy(const ExperimentConfig& cfg, const DiffeoFamily& family,
                       const fs::path& dir, nlohmann::json& manifest) {
  const auto s = cfg.raw.value("holonomy", nlohmann::json::object());
  const PesinParams p = params_of(s);
  const Vec x0 = x0_of(s, family.dim());

  HolonomyOptions opts;
  opts.chains = s.value("chains", 200);
  opts.seed_radius = s.value("seed_radius", 0.05);
  opts.norm_cap = s.value("norm_cap", 1.0);
  opts.q_radius = s.value("q_radius", 1.0);
  opts.chart_degree = s.value("chart_degree", 2);
  opts.chart.fit_radius = s.value("fit_radius", 0.0);
  opts.chart.check_membership = s.value("check_membership", true);
  opts.seed = cfg.seed;

  // Two parallel transversal discs offset along the leading stable
  // direction, built on the splitting at the base point.
  const int N = std::max(opts.chart.back_depth, opts.chart.test_horizon) + 2;
  const OmegaPrefix omega = draw_omega(family, cfg.seed, 0, N);
  const CocycleData data = CocycleData::build(family, omega, x0, N, p.a);
  if (data.k < 1)
    throw config_error(
        "no stable directions below rate threshold a; holonomy undefined");
  const double disc_radius = s.value("disc_radius", 0.2);
  const double disc_offset = s.value("disc_offset", 0.1);
  const TransversalDisc W1 =
      TransversalDisc::affine(x0, data.E[0], data.H[0], disc_radius);
  const TransversalDisc W2 = TransversalDisc::affine(
      x0 + disc_offset * data.E[0].col(0), data.E[0], data.H[0], disc_radius);

  const HolonomyResult res = holonomy(family, omega, x0, W1, W2, p, opts);

  nlohmann::json j;
  j["chains"] = res.chains;
  j["dropped"] = res.dropped;
  j["drop_rate"] = res.drop_rate;
  j["jacobian"] = res.jacobian;
  j["fraction_tight"] = res.fraction_in(0.9, 1.1);
  j["fraction_bound"] = res.fraction_in(0.5, 2.0);
  write_json(dir / "holonomy.json", j);
  manifest["artifacts"].push_back("holonomy.json");
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const config_error*>(&e)) return 2;
  if (dynamic_cast<const capability_error*>(&e)) return 4;
  if (dynamic_cast<const divergence_error*>(&e)) return 3;
  return 3;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  res.manifest["pipeline"] = cfg.pipeline;
  res.manifest["config_hash"] = config_hash(cfg.raw);
  res.manifest["seed"] = cfg.seed;
  res.manifest["threads"] = cfg.threads;
  res.manifest["format"] = cfg.format;
  res.manifest["versions"] = {{"pesinlab", kVersion},
                              {"eigen", std::to_string(EIGEN_WORLD_VERSION) +
                                            "." +
                                            std::to_string(EIGEN_MAJOR_VERSION) +
                                            "." +
                                            std::to_string(EIGEN_MINOR_VERSION)}};
  res.manifest["artifacts"] = nlohmann::json::array();

  const fs::path dir(cfg.out_dir);
  try {
    fs::create_directories(dir);
    const auto family = make_family(cfg.raw.at("system"));
    if (cfg.pipeline == "simulate")
      pipeline_simulate(cfg, *family, dir, res.manifest);
    else if (cfg.pipeline == "spectrum")
      pipeline_spectrum(cfg, *family, dir, res.manifest);
    else if (cfg.pipeline == "entropy")
      pipeline_entropy(cfg, *family, dir, res.manifest);
    else if (cfg.pipeline == "pesin-verify")
      pipeline_pesin(cfg, *family, dir, res.manifest);
    else if (cfg.pipeline == "audit")
      pipeline_audit(cfg, *family, dir, res.manifest);
    else if (cfg.pipeline == "stable-manifold")
      pipeline_manifold(cfg, *family, dir, res.manifest);
    else if (cfg.pipeline == "holonomy")
      pipeline_holonomy(cfg, *family, dir, res.manifest);
    else
      throw config_error("unknown pipeline '" + cfg.pipeline + "'");
    res.manifest["status"] = "ok";
  } catch (const std::exception& e) {
    res.manifest["status"] = "error";
    res.manifest["error"] = e.what();
    res.exit_code = exit_code_for(e);
  }

  const auto t1 = std::chrono::steady_clock::now();
  res.manifest["wall_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
  try {
    write_json(dir / "manifest.json", res.manifest);
  } catch (const std::exception&) {
    if (res.exit_code == 0) res.exit_code = 2;
  }
  return res;
}

}  // namespace pesin
