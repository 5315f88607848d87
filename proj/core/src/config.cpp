#include "pesin/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

#include "pesin/errors.hpp"
#include "pesin/finite.hpp"
#include "pesin/flow.hpp"

namespace pesin {
namespace {

void check_keys(const nlohmann::json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw config_error("expected an object at " + path);
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!ok.count(key))
      throw config_error("unknown key at " + path + "." + key);
  }
}

double num(const nlohmann::json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number())
    throw config_error(std::string("expected a number for ") + key);
  return obj.at(key).get<double>();
}

Vec vec_of(const nlohmann::json& arr, const std::string& path) {
  if (!arr.is_array()) throw config_error("expected an array at " + path);
  Vec v(Eigen::Index(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number())
      throw config_error("expected numbers at " + path);
    v(Eigen::Index(i)) = arr[i].get<double>();
  }
  return v;
}

Mat mat_of(const nlohmann::json& rows, const std::string& path) {
  if (!rows.is_array() || rows.empty())
    throw config_error("expected a matrix (array of arrays) at " + path);
  const std::size_t n = rows.size();
  const Vec first = vec_of(rows[0], path);
  Mat M(Eigen::Index(n), first.size());
  M.row(0) = first.transpose();
  for (std::size_t i = 1; i < n; ++i) {
    const Vec r = vec_of(rows[i], path);
    if (r.size() != first.size())
      throw config_error("ragged matrix at " + path);
    M.row(Eigen::Index(i)) = r.transpose();
  }
  return M;
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& doc) {
  check_keys(doc, "$",
             {"pipeline", "seed", "threads", "out_dir", "format", "system",
              "measure", "spectrum", "entropy", "pesin", "audit", "manifold",
              "holonomy", "simulate"});

  ExperimentConfig cfg;
  if (!doc.contains("pipeline") || !doc.at("pipeline").is_string())
    throw config_error("config needs a string 'pipeline'");
  cfg.pipeline = doc.at("pipeline").get<std::string>();
  static const std::set<std::string> pipelines = {
      "simulate",        "spectrum", "entropy", "pesin-verify",
      "audit",           "stable-manifold",     "holonomy"};
  if (!pipelines.count(cfg.pipeline))
    throw config_error("unknown pipeline '" + cfg.pipeline + "'");

  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned())
      throw config_error("seed must be a nonnegative integer");
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  }
  if (doc.contains("threads")) {
    if (!doc.at("threads").is_number_integer() ||
        doc.at("threads").get<int>() < 1)
      throw config_error("threads must be a positive integer");
    cfg.threads = doc.at("threads").get<int>();
  }
  if (doc.contains("out_dir")) cfg.out_dir = doc.at("out_dir").get<std::string>();
  if (doc.contains("format")) {
    cfg.format = doc.at("format").get<std::string>();
    if (cfg.format != "csv" && cfg.format != "json")
      throw config_error("format must be 'csv' or 'json'");
  }
  if (!doc.contains("system"))
    throw config_error("config needs a 'system' block");

  // Validate the section schemas up front so errors carry paths.
  if (doc.contains("measure"))
    check_keys(doc.at("measure"), "$.measure",
               {"type", "dim", "mean", "sd", "cov", "center", "radius", "x0",
                "count", "burnin", "thin"});
  if (doc.contains("spectrum"))
    check_keys(doc.at("spectrum"), "$.spectrum",
               {"horizon", "block", "x0", "cluster_gap", "replicate"});
  if (doc.contains("entropy"))
    check_keys(doc.at("entropy"), "$.entropy",
               {"m_omega", "m_x", "depths", "n_max", "g", "center", "radius",
                "window", "bias"});
  if (doc.contains("pesin"))
    check_keys(doc.at("pesin"), "$.pesin",
               {"m_omega", "m_x", "n_max", "g0", "g_max", "window",
                "spectrum_samples", "spectrum_horizon", "stabilize_tol",
                "tol_floor"});
  if (doc.contains("audit"))
    check_keys(doc.at("audit"), "$.audit",
               {"samples", "horizon", "ball_radius", "xi_grid", "need_hessian",
                "need_inverse"});
  if (doc.contains("manifold"))
    check_keys(doc.at("manifold"), "$.manifold",
               {"a", "b", "eps", "k", "l_cap", "r_cap", "c_cap", "degree",
                "samples", "level", "fit_radius", "test_horizon", "back_depth",
                "accept_cap", "x0", "check_membership"});
  if (doc.contains("holonomy"))
    check_keys(doc.at("holonomy"), "$.holonomy",
               {"a", "b", "eps", "k", "l_cap", "r_cap", "c_cap", "chains",
                "seed_radius", "norm_cap", "q_radius", "disc_radius",
                "disc_offset", "chart_degree", "x0", "fit_radius",
                "check_membership"});
  if (doc.contains("simulate"))
    check_keys(doc.at("simulate"), "$.simulate", {"steps", "x0", "cache"});

  make_family(doc.at("system"));  // validates the system block eagerly
  cfg.raw = doc;
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(doc);
}

std::shared_ptr<DiffeoFamily> make_family(const nlohmann::json& system) {
  if (!system.is_object() || !system.contains("name") ||
      !system.at("name").is_string())
    throw config_error("system block needs a string 'name'");
  const std::string name = system.at("name").get<std::string>();

  if (name == "diag") {
    check_keys(system, "$.system", {"name", "entries"});
    const Vec e = vec_of(system.at("entries"), "$.system.entries");
    return std::make_shared<ConstantLinearFamily>(Mat(e.asDiagonal()));
  }
  if (name == "constant_linear") {
    check_keys(system, "$.system", {"name", "matrix"});
    return std::make_shared<ConstantLinearFamily>(
        mat_of(system.at("matrix"), "$.system.matrix"));
  }
  if (name == "scalar_iid") {
    check_keys(system, "$.system", {"name", "factors", "probs"});
    const Vec f = vec_of(system.at("factors"), "$.system.factors");
    const Vec p = vec_of(system.at("probs"), "$.system.probs");
    return std::make_shared<ScalarFactorFamily>(
        std::vector<double>(f.data(), f.data() + f.size()),
        std::vector<double>(p.data(), p.data() + p.size()));
  }
  if (name == "ou_map") {
    check_keys(system, "$.system", {"name", "dim", "dt", "rate", "sigma"});
    return std::make_shared<AffineRandomFamily>(AffineRandomFamily::ou(
        int(num(system, "dim", 1)), num(system, "dt", 1.0),
        num(system, "rate", 1.0), num(system, "sigma", 1.0)));
  }
  if (name == "tanh1d") {
    check_keys(system, "$.system", {"name", "c"});
    return std::make_shared<Tanh1dFamily>(num(system, "c", 0.5));
  }
  if (name == "half_square") {
    check_keys(system, "$.system", {"name"});
    return std::make_shared<HalfSquare1dFamily>();
  }
  if (name == "quad_skew") {
    check_keys(system, "$.system", {"name"});
    return std::make_shared<QuadSkewFamily>();
  }
  if (name == "table_embed") {
    check_keys(system, "$.system", {"name", "maps", "nu", "slope"});
    FiniteRds table;
    const auto& maps = system.at("maps");
    if (!maps.is_array() || maps.empty())
      throw config_error("table_embed needs a nonempty 'maps' array");
    for (const auto& m : maps) {
      std::vector<int> row;
      for (const auto& v : m) row.push_back(v.get<int>());
      table.maps.push_back(std::move(row));
    }
    table.nstates = int(table.maps.front().size());
    const Vec nu = vec_of(system.at("nu"), "$.system.nu");
    table.nu.assign(nu.data(), nu.data() + nu.size());
    return std::make_shared<TableEmbedFamily>(std::move(table),
                                              num(system, "slope", 0.05));
  }

  // Discretized stochastic flows share the integration parameters.
  const auto flow_common = [&](std::shared_ptr<const SdeFlowModel> model) {
    return std::make_shared<DiscretizedFlowFamily>(
        discretize(std::move(model), num(system, "horizon", 1.0),
                   int(num(system, "substeps", 64)),
                   int(num(system, "order", 1))));
  };
  if (name == "ou_flow") {
    check_keys(system, "$.system",
               {"name", "dim", "rate", "sigma", "horizon", "substeps", "order"});
    return flow_common(std::make_shared<OuFlow>(int(num(system, "dim", 1)),
                                                num(system, "rate", 1.0),
                                                num(system, "sigma", 1.0)));
  }
  if (name == "double_well") {
    check_keys(system, "$.system",
               {"name", "sigma", "horizon", "substeps", "order"});
    return flow_common(
        std::make_shared<GradientDoubleWellFlow>(num(system, "sigma", 0.5)));
  }
  if (name == "duffing_vdp") {
    check_keys(system, "$.system",
               {"name", "alpha", "beta", "sigma_add", "sigma_mult", "horizon",
                "substeps", "order"});
    return flow_common(std::make_shared<DuffingVdpFlow>(
        num(system, "alpha", 1.0), num(system, "beta", -1.0),
        num(system, "sigma_add", 0.2), num(system, "sigma_mult", 0.0)));
  }
  throw config_error("unknown system '" + name + "'");
}

MeasureRepr make_measure(const nlohmann::json& measure,
                         const DiffeoFamily& family, std::uint64_t seed) {
  const int d = family.dim();
  if (measure.is_null() || measure.empty()) {
    // Default: the family's long-run cloud from the origin.
    return empirical_stationary(family, Vec::Zero(d), 4000, seed);
  }
  const std::string type = measure.value("type", "gaussian");
  if (type == "gaussian") {
    Vec mean = measure.contains("mean")
                   ? vec_of(measure.at("mean"), "$.measure.mean")
                   : Vec::Zero(d);
    Mat cov;
    if (measure.contains("cov")) {
      cov = mat_of(measure.at("cov"), "$.measure.cov");
    } else {
      const double sd = num(measure, "sd", 1.0);
      cov = sd * sd * Mat::Identity(mean.size(), mean.size());
    }
    return MeasureRepr::gaussian(mean, cov);
  }
  if (type == "uniform_box") {
    Vec center = measure.contains("center")
                     ? vec_of(measure.at("center"), "$.measure.center")
                     : Vec::Zero(d);
    return MeasureRepr::uniform_box(center, num(measure, "radius", 1.0));
  }
  if (type == "stationary") {
    Vec x0 = measure.contains("x0") ? vec_of(measure.at("x0"), "$.measure.x0")
                                    : Vec::Zero(d);
    return empirical_stationary(family, x0, int(num(measure, "count", 4000)),
                                seed, int(num(measure, "burnin", 10000)),
                                int(num(measure, "thin", 10)));
  }
  throw config_error("unknown measure type '" + type + "'");
}

std::string config_hash(const nlohmann::json& doc) {
  const std::string s = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return std::string(buf);
}

}  // namespace pesin
