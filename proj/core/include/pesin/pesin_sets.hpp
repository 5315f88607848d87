#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pesin/oseledets.hpp"
#include "pesin/rds.hpp"

namespace pesin {

// Hyperbolicity window and caps: exponents are assumed to avoid [a, b],
// stable directions (rate < a) have dimension k, and the distortion caps
// l', r', C' bound the orbit-uniform constants.
struct PesinParams {
  double a = -1.0;
  double b = -0.5;
  int k = 1;
  double eps = 1e-3;
  double l_cap = 1.0;  // cap on the growth/angle constant
  double r_cap = 1.0;  // cap on the derivative-Lipschitz constant
  double c_cap = 1.0;  // cap on the inverse-derivative growth constant
};

// All violated constraints, in order checked; empty means valid.
std::vector<std::string> validate_params(const PesinParams& p, int d);

// One orbit segment with everything the hyperbolicity estimates need:
// cocycle factors, trajectory, and the stable/unstable bases pushed forward
// level by level (orthonormalized images; the spans are the invariant
// subspaces E_n = Df^n E_0, H_n = Df^n H_0).
struct CocycleData {
  OmegaPrefix omega;
  std::vector<Vec> traj;     // x_0 .. x_N
  std::vector<Mat> factors;  // J_0 .. J_{N-1}
  std::vector<Mat> E, H;     // per level 0..N, orthonormal columns
  int k = 0;                 // dim E
  double a = 0.0;            // splitting threshold

  int horizon() const { return int(factors.size()); }

  static CocycleData build(const DiffeoFamily& family, const OmegaPrefix& omega,
                           const Vec& x, int N, double a, double gap = 0.05);

  // Restriction matrices of the l-step cocycle starting at level n:
  // S maps E_n coordinates into R^d, U maps H_n coordinates into R^d.
  Mat stable_block(int n, int l) const;    // d x k
  Mat unstable_block(int n, int l) const;  // d x (d-k)

  // Oblique decomposition v = E_n cE + H_n cH at level n.
  void split(int n, const Vec& v, Vec& xi, Vec& eta) const;
};

// Smallest orbit-uniform constants for the growth / co-growth / angle
// estimates: per level n, l_table[n] is the least c >= 1 with
//   |S^l_n xi|  <= c e^{(a+eps)l} |xi|,
//   |U^l_n eta| >= c^{-1} e^{(b-eps)l} |eta|,
//   angle(E_{n+l}, H_{n+l}) >= c^{-1} e^{-eps l}
// for all l with n + l <= N.  The taming certificate is
// l_table[n+l] <= l_table[n] e^{eps l}.
struct LEstimate {
  double l0 = 1.0;         // smallest l with the tamed bounds l(n) = l e^{eps n}
  double l_uniform = 1.0;  // smallest single constant valid at every level
  std::vector<double> table;
  bool cert_ok = true;        // taming certificate over the sampled table
  double cert_margin = 0.0;   // worst log-violation (<= 0 when cert_ok)
  bool short_horizon = false; // horizon too short to constrain anything
};
LEstimate estimate_l(const CocycleData& data, const PesinParams& p);
LEstimate estimate_l(const DiffeoFamily& family, const OmegaPrefix& omega,
                     const Vec& x, const PesinParams& p, int N);

// Derivative-Lipschitz constants: rprime_table[n] is the larger of the
// sup-Hessian norms over the unit ball of the centered step map at level n
// and of its inverse; r = max_n rprime_table[n] e^{-eps n}.  forward_only
// skips the inverse branch for families without one.
struct REstimate {
  double r = 0.0;
  std::vector<double> rprime_table;
  bool forward_only = false;
};
REstimate estimate_r(const DiffeoFamily& family, const CocycleData& data,
                     double eps, int N, bool forward_only = false);
REstimate estimate_r(const DiffeoFamily& family, const OmegaPrefix& omega,
                     const Vec& x, double eps, int N,
                     bool forward_only = false);

// The orbit-adapted inner product at one level: stable side is the forward
// series sum_l e^{-2(a+2eps)l} |S^l_n xi|^2 truncated at L with a geometric
// tail bound, unstable side the finite pullback sum
// sum_{l<=n} e^{2(b-2eps)l} |[U^l_{n-l}]^{-1} eta|^2.
struct LyapunovMetric {
  std::shared_ptr<const CocycleData> data;
  PesinParams params;
  int n = 0;       // level
  int L = 0;       // stable-series truncation
  double rho = 0.0;  // estimated geometric decay of the stable series terms
  double tol = 1e-10;
};
LyapunovMetric make_metric(std::shared_ptr<const CocycleData> data,
                           const PesinParams& p, int n, double tol = 1e-10);

struct LyapNorm {
  double value = 0.0;
  double tail = 0.0;  // analytic bound on the truncated stable-series tail
};
// Norm of a tangent vector at the metric's level: max of the stable and
// unstable components' primed norms.
LyapNorm lyapunov_norm(const LyapunovMetric& metric, const Vec& v);

// Checks the one-step contraction / expansion / comparison bounds of the
// adapted metric on sampled vectors:
//   i)   ||S^1 xi||'_{n+1} <= e^{a+2eps} ||xi||'_n
//   ii)  ||U^1 eta||'_{n+1} >= e^{b-2eps} ||eta||'_n
//   iii) |zeta|/2 <= ||zeta||'_n <= A e^{2 eps n} |zeta|,
//        A = 4 l'^2 (1 - e^{-2eps})^{-1/2}.
struct MetricBoundsReport {
  bool pass = true;
  double A = 0.0;
  // Worst margins, all normalized so that <= 0 (or >= 0 for lower bounds)
  // means the inequality held; sign conventions per field.
  double worst_contraction = 0.0;  // max of ||S xi||' - e^{a+2e}||xi||' (<=0 ok)
  double worst_expansion = 0.0;    // min of ||U eta||' - e^{b-2e}||eta||' (>=0 ok)
  double worst_lower = 0.0;        // min of ||z||' - |z|/2 (>=0 ok)
  double worst_upper = 0.0;        // max of ||z||' - A e^{2en}|z| (<=0 ok)
  int samples = 0;
};
MetricBoundsReport check_metric_bounds(std::shared_ptr<const CocycleData> data,
                                       const PesinParams& p, int n, int samples,
                                       std::uint64_t seed);

// Empirical inverse-derivative growth: C = sup_n |[J_n]^{-1}| e^{-delta n}
// over the horizon, with the per-level certificate table.
struct CdeltaEstimate {
  double c_delta = 0.0;
  std::vector<double> table;  // |[J_n]^{-1}| per level
};
CdeltaEstimate cdelta_certificate(const CocycleData& data, double delta);

}  // namespace pesin
