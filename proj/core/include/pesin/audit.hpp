#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pesin/rds.hpp"

namespace pesin {

// One audited integrability statistic.  Sample means cannot prove an
// expectation finite, so the verdicts are "finite-consistent" /
// "heavy-tail-suspect" (Hill index at most 1.1 on the top tail, or standard
// errors not shrinking like M^{-1/2}), with "degenerate-zero" for
// identically-vanishing quantities (e.g. second derivatives of affine maps).
struct AuditEntry {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  int samples = 0;
  double hill = 0.0;        // tail index of the top 5% (inf = no tail seen)
  double se_decay = 0.0;    // slope of log SE vs log M across doublings
  double zero_fraction = 0.0;
  std::string verdict;      // finite-consistent | heavy-tail-suspect | degenerate-zero
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  int horizon = 0;      // composition length used by the growth statistic
  double ball_radius = 0.0;
  bool all_clear() const;

  const AuditEntry* find(const std::string& name) const;
};

struct AuditOptions {
  int samples = 2000;
  int horizon = 8;          // n in the n-step growth statistic
  double ball_radius = 1.0; // radius of the sup ball around each sample
  int xi_grid = 16;         // points for the Hessian sup over the unit ball
  std::uint64_t seed = 1;
  int threads = 1;
  bool need_hessian = true;  // audit the second-derivative moments
  bool need_inverse = true;  // audit the inverse-derivative moments
};

// Monte Carlo audit of the moment assumptions over (omega, x) ~ nu x mu:
//   log_dx:        log+ operator norm of the one-step derivative
//   log_d2:        log sup-ball norm of the second derivative
//   log_d2_inv:    same for the inverse map
//   log_dx_inv:    log operator norm of the inverse derivative at the image
//   log_det:       log |det| of the one-step derivative
//   growth_n:      sup over B(x, r) of log+ |D f^n| (lower bound of the sup)
//   mu_log_moment: E sqrt(log(|x| + 1))
AuditReport audit_assumptions(const DiffeoFamily& family, const MeasureRepr& mu,
                              AuditOptions opts = {});

}  // namespace pesin
