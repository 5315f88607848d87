// Experiment configuration: strict schema with path-naming errors, the
// system and measure registries, file loading, and the stable config hash.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pesin/config.hpp"
#include "pesin/errors.hpp"
#include "pesin/rds.hpp"

using namespace pesin;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal(const std::string& pipeline) {
  return json{{"pipeline", pipeline},
              {"system", {{"name", "diag"}, {"entries", {0.5, 2.0}}}}};
}

// Runs the parse and reports whether the error message mentions the needle.
bool fails_mentioning(const json& doc, const std::string& needle) {
  try {
    parse_config(doc);
  } catch (const config_error& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("minimal configs parse with defaults") {
  const ExperimentConfig cfg = parse_config(minimal("spectrum"));
  CHECK(cfg.pipeline == "spectrum");
  CHECK(cfg.seed == 1);
  CHECK(cfg.threads == 1);
  CHECK(cfg.out_dir == "out");
  CHECK(cfg.format == "csv");
  CHECK(cfg.raw.at("pipeline") == "spectrum");

  for (const char* p : {"simulate", "spectrum", "entropy", "pesin-verify",
                        "audit", "stable-manifold", "holonomy"})
    CHECK_NOTHROW(parse_config(minimal(p)));

  json doc = minimal("entropy");
  doc["seed"] = 42;
  doc["threads"] = 8;
  doc["out_dir"] = "elsewhere";
  doc["format"] = "json";
  const ExperimentConfig over = parse_config(doc);
  CHECK(over.seed == 42);
  CHECK(over.threads == 8);
  CHECK(over.out_dir == "elsewhere");
  CHECK(over.format == "json");
}

TEST_CASE("unknown keys are named by path") {
  json doc = minimal("spectrum");
  doc["typo"] = 1;
  CHECK(fails_mentioning(doc, "$.typo"));

  json nested = minimal("entropy");
  nested["entropy"] = {{"m_omegaa", 4}};
  CHECK(fails_mentioning(nested, "$.entropy.m_omegaa"));

  json sys = minimal("spectrum");
  sys["system"]["extra"] = true;
  CHECK(fails_mentioning(sys, "$.system.extra"));

  CHECK_THROWS_AS(parse_config(json{{"pipeline", "spectrum"}}), config_error);
  CHECK_THROWS_AS(
      parse_config(json{
          {"pipeline", "dance"},
          {"system", {{"name", "diag"}, {"entries", {1.0}}}}}),
      config_error);
  CHECK_THROWS_AS(
      parse_config(json{{"system", {{"name", "diag"}, {"entries", {1.0}}}}}),
      config_error);

  json bad_seed = minimal("spectrum");
  bad_seed["seed"] = -5;
  CHECK_THROWS_AS(parse_config(bad_seed), config_error);
  json bad_threads = minimal("spectrum");
  bad_threads["threads"] = 0;
  CHECK_THROWS_AS(parse_config(bad_threads), config_error);
  json bad_format = minimal("spectrum");
  bad_format["format"] = "xml";
  CHECK_THROWS_AS(parse_config(bad_format), config_error);
}

TEST_CASE("the system registry builds every family") {
  auto fam = make_family(json{{"name", "diag"}, {"entries", {0.5, 2.0}}});
  CHECK(fam->dim() == 2);
  Vec x(2);
  x << 1.0, 1.0;
  const Vec y = fam->eval(Vec(0), x);
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 2.0);

  auto swap = make_family(
      json{{"name", "constant_linear"}, {"matrix", {{0.0, 1.0}, {1.0, 0.0}}}});
  const Vec sy = swap->eval(Vec(0), x * 2.0);
  CHECK(sy[0] == 2.0);
  CHECK(sy[1] == 2.0);

  CHECK(make_family(json{{"name", "scalar_iid"},
                         {"factors", {2.0, 0.5}},
                         {"probs", {0.5, 0.5}}})
            ->dim() == 1);
  CHECK(make_family(json{{"name", "ou_map"}, {"dim", 2}})->dim() == 2);
  CHECK(make_family(json{{"name", "tanh1d"}, {"c", 0.3}})->dim() == 1);
  CHECK(make_family(json{{"name", "half_square"}})->dim() == 1);
  CHECK(make_family(json{{"name", "quad_skew"}})->dim() == 2);
  CHECK(make_family(json{{"name", "table_embed"},
                         {"maps", {{1, 0}, {0, 1}}},
                         {"nu", {0.6, 0.4}},
                         {"slope", 0.1}})
            ->dim() == 1);
  CHECK(make_family(json{{"name", "ou_flow"}, {"substeps", 8}})->dim() == 1);
  CHECK(make_family(json{{"name", "double_well"}, {"substeps", 8}})->dim() ==
        1);
  CHECK(make_family(json{{"name", "duffing_vdp"}, {"substeps", 8}})->dim() ==
        2);

  CHECK_THROWS_AS(make_family(json{{"name", "warp_drive"}}), config_error);
  CHECK_THROWS_AS(make_family(json{{"entries", {1.0}}}), config_error);
  CHECK_THROWS_AS(
      make_family(json{{"name", "constant_linear"},
                       {"matrix", {{1.0, 0.0}, {1.0}}}}),
      config_error);
  CHECK_THROWS_AS(make_family(json{{"name", "diag"},
                                   {"entries", {1.0}},
                                   {"stowaway", 1}}),
                  config_error);
}

TEST_CASE("measures come from the registry") {
  auto fam = make_family(json{{"name", "diag"}, {"entries", {0.5}}});

  // Default: the family's own long-run cloud.
  const MeasureRepr st = make_measure(json::object(), *fam, 7);
  CHECK(st.kind == MeasureRepr::Kind::empirical);
  CHECK(st.cloud.size() == 4000);
  CHECK(st.dim() == 1);

  const MeasureRepr g = make_measure(
      json{{"type", "gaussian"}, {"mean", {1.0, 2.0}}, {"sd", 0.5}}, *fam, 7);
  CHECK(g.kind == MeasureRepr::Kind::gaussian);
  CHECK(g.mean.size() == 2);
  CHECK(g.mean[1] == 2.0);
  CHECK(g.chol.isApprox(0.5 * Mat::Identity(2, 2), 1e-12));

  const MeasureRepr gc = make_measure(
      json{{"type", "gaussian"},
           {"mean", {0.0, 0.0}},
           {"cov", {{4.0, 0.0}, {0.0, 4.0}}}},
      *fam, 7);
  CHECK(gc.chol.isApprox(2.0 * Mat::Identity(2, 2), 1e-12));

  const MeasureRepr ub = make_measure(
      json{{"type", "uniform_box"}, {"center", {3.0}}, {"radius", 2.0}}, *fam,
      7);
  CHECK(ub.kind == MeasureRepr::Kind::uniform_box);
  CHECK(ub.box_center[0] == 3.0);
  CHECK(ub.box_radius == 2.0);

  const MeasureRepr chain = make_measure(json{{"type", "stationary"},
                                              {"x0", {1.0}},
                                              {"count", 1200},
                                              {"burnin", 100},
                                              {"thin", 2}},
                                         *fam, 7);
  CHECK(chain.kind == MeasureRepr::Kind::empirical);
  CHECK(chain.cloud.size() == 1200);

  CHECK_THROWS_AS(make_measure(json{{"type", "lebesgue"}}, *fam, 7),
                  config_error);
}

TEST_CASE("files load with JSON diagnostics") {
  const fs::path good = fs::temp_directory_path() / "pesinlab_cfg_good.json";
  const fs::path bad = fs::temp_directory_path() / "pesinlab_cfg_bad.json";
  {
    std::ofstream out(good);
    out << minimal("audit").dump();
  }
  {
    std::ofstream out(bad);
    out << "{ this is not json";
  }
  const ExperimentConfig cfg = load_config_file(good.string());
  CHECK(cfg.pipeline == "audit");
  CHECK_THROWS_AS(load_config_file(bad.string()), config_error);
  CHECK_THROWS_AS(load_config_file("/nonexistent/cfg.json"), config_error);
  std::error_code ec;
  fs::remove(good, ec);
  fs::remove(bad, ec);
}

TEST_CASE("config hashes are canonical") {
  // nlohmann objects iterate in key order, so logically-equal documents
  // serialize (and hash) identically.
  const json a = {{"alpha", 1}, {"beta", {{"x", 2.5}}}};
  json b;
  b["beta"]["x"] = 2.5;
  b["alpha"] = 1;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash(json{{"alpha", 2}}));

  // FNV-1a of the seven bytes {"a":1}, computed independently.
  CHECK(config_hash(json{{"a", 1}}) == "9c3e82dd6fcae8b1");
}

}  // TEST_SUITE
