#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "pesin/rds.hpp"

namespace pesin {

// One experiment: a pipeline name, a system, budgets, and output plumbing.
// The schema is strict: unknown keys anywhere raise a configuration error
// naming the offending path, so typos cannot silently change a run.
struct ExperimentConfig {
  std::string pipeline;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
  std::string format = "csv";  // csv | json
  nlohmann::json raw;          // the validated document
};

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config_file(const std::string& path);

// Built-in system registry ("system" block of the config).
std::shared_ptr<DiffeoFamily> make_family(const nlohmann::json& system);

// Measure registry ("measure" block); "stationary" runs the family's own
// long-run chain.
MeasureRepr make_measure(const nlohmann::json& measure,
                         const DiffeoFamily& family, std::uint64_t seed);

// Stable 64-bit hash of the canonical serialized config (FNV-1a), hex.
std::string config_hash(const nlohmann::json& doc);

}  // namespace pesin
