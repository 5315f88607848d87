#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "pesin/config.hpp"

namespace pesin {

inline constexpr const char* kVersion = "0.1.0";

// Exit-code convention: 0 success, 2 configuration, 3 numeric divergence,
// 4 missing capability.
int exit_code_for(const std::exception& e);

struct RunResult {
  int exit_code = 0;
  nlohmann::json manifest;
};

// Executes the configured pipeline, writes its artifacts plus manifest.json
// into the output directory.  Failures are captured in the manifest (and the
// exit code), not thrown.  Identical config + seed produce byte-identical
// CSV bodies regardless of thread count.
RunResult run_experiment(const ExperimentConfig& cfg);

}  // namespace pesin
