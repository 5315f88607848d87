#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pesin/pesin_sets.hpp"
#include "pesin/rds.hpp"

namespace pesin {

// Domain radius, Lipschitz budget and contraction constant of a local chart;
// pushing a chart forward one level rescales them by e^{-5 eps}, e^{7 eps},
// e^{2 eps} respectively.
struct ChartConstants {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};
ChartConstants push_constants(const ChartConstants& c, double eps, int steps);

// Local stable-manifold graph at orbit level n: the manifold is
// { center + E xi + H h(xi) : |xi| <= alpha } with h a polynomial without
// constant term, so h(0) = 0 exactly and tangency at the center is measured
// by the fitted linear part.
struct ManifoldChart {
  int level = 0;
  Vec center;
  Mat E, H;  // d x k and d x (d-k) orthonormal-column bases
  int degree = 0;
  std::vector<std::vector<int>> monomials;  // exponent rows, graded order
  Mat coeffs;                               // (#monomials) x (d-k)
  ChartConstants constants;                 // alpha certified, beta/gamma fitted
  double fit_radius = 0.0;  // radius of the sampled neighborhood actually used
  double lip_h = 0.0;       // sup ||Dh|| over the fitted region
  double lip_dh = 0.0;      // sup ||D2h|| over the fitted region
  double tangent_norm = 0.0;  // ||Dh(0)||
  double residual = 0.0;      // worst graph residual over accepted samples
  int accepted = 0;

  Vec eval(const Vec& xi) const;    // h(xi)
  Mat d_eval(const Vec& xi) const;  // Dh(xi), (d-k) x k
  Vec point(const Vec& xi) const;   // embedding into R^d
};

struct ChartOptions {
  int level = 0;          // fit the chart at orbit level n
  int samples = 64;       // candidate points requested
  int min_accepted = 16;  // sparse-acceptance threshold (also >= #coeffs + 2)
  int back_depth = 24;    // backward-shooting depth for invertible families
  int test_horizon = 30;  // forward contraction-test length
  double accept_cap = 4.0;   // allowed constant in the contraction test
  double fit_radius = 0.0;   // sampling radius; 0 = the certified alpha
  double beta_cap = std::numeric_limits<double>::infinity();
  bool check_membership = true;  // enforce l <= l', r <= r' before fitting
  std::uint64_t seed = 1;
};

ManifoldChart fit_local_chart(const DiffeoFamily& family,
                              const OmegaPrefix& omega, const Vec& x,
                              const PesinParams& p, int degree, int samples,
                              ChartOptions opts = {});
// Same fit against a prebuilt orbit/splitting record (reused by holonomy).
ManifoldChart fit_local_chart(const DiffeoFamily& family,
                              const CocycleData& data, const PesinParams& p,
                              int degree, ChartOptions opts = {});

nlohmann::json chart_to_json(const ManifoldChart& chart);

// Distance along the chart between two parameter points: chord length when
// the curvature certificate is small, else a 64-segment polyline.
double chart_distance(const ManifoldChart& chart, const Vec& xi1,
                      const Vec& xi2);

// Trailing-window decay rate of |f^n x - f^n y|; membership in the global
// stable set of x means the estimated rate sits below a negative cutoff.
struct MembershipResult {
  bool member = false;
  double rate = 0.0;
  bool degenerate = false;  // orbits coincide (distance underflow)
  bool diverged = false;    // an orbit left the guard region
};
MembershipResult global_membership(const DiffeoFamily& family,
                                   const OmegaPrefix& omega, const Vec& x,
                                   const Vec& y, int N, double cutoff);

// Disc transversal to the stable family: a graph over the unstable
// directions, { q + H u + E psi(u) : |u| <= radius }, with psi polynomial
// (constant term allowed; an affine disc has no coefficients at all).
struct TransversalDisc {
  Vec q;
  Mat E, H;  // d x k and d x (d-k)
  double radius = 0.0;
  std::vector<std::vector<int>> monomials;  // exponents in u, degree >= 0
  Mat coeffs;                               // (#monomials) x k

  static TransversalDisc affine(const Vec& q, const Mat& E, const Mat& H,
                                double radius);

  Vec eval(const Vec& u) const;    // psi(u)
  Mat d_eval(const Vec& u) const;  // Dpsi(u), k x (d-k)
  Vec point(const Vec& u) const;
  // sup ||psi|| + sup ||Dpsi|| over the disc, optionally in the adapted
  // metric of `metric` (Euclidean when null).
  double norm(const LyapunovMetric* metric = nullptr) const;
};

struct HolonomyOptions {
  int chains = 200;
  double seed_radius = 0.05;  // spread of the nearby chain base points
  double norm_cap = 1.0;      // cap on the disc norms
  double q_radius = 1.0;      // both discs must sit in this ball around x
  double newton_tol = 1e-11;
  int newton_iters = 60;
  double drop_cap = 0.2;  // dropped-chain fraction above this is an error
  int chart_degree = 2;
  ChartOptions chart;
  std::uint64_t seed = 1;
};

// Slides local stable manifolds through nearby points from one transversal
// disc to the other; Jacobian of the induced map estimated by the ratio of
// kernel density estimates in disc coordinates.
struct HolonomyResult {
  Mat u1, u2;      // paired disc coordinates, one row per surviving chain
  Mat p1, p2;      // the intersection points in R^d
  std::vector<double> jacobian;
  int chains = 0;
  int dropped = 0;
  double drop_rate = 0.0;

  double fraction_in(double lo, double hi) const;
};
HolonomyResult holonomy(const DiffeoFamily& family, const OmegaPrefix& omega,
                        const Vec& x, const TransversalDisc& W1,
                        const TransversalDisc& W2, const PesinParams& p,
                        HolonomyOptions opts = {});

}  // namespace pesin
