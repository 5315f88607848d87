#pragma once

#include <stdexcept>
#include <string>

namespace pesin {

// Bad inputs: malformed configs, parameter windows out of range, mismatched
// ground sets, enumeration caps.  The CLI maps this to exit code 2.
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numeric failure at runtime: trajectories leaving the guard box, degenerate
// cocycle factors, non-summable series, geometry breakdowns.  Exit code 3.
struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The selected system lacks a required capability (Hessians, inverse maps,
// Milstein with non-diagonal noise, ...).  Exit code 4.
struct capability_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pesin
