#pragma once

#include <utility>
#include <vector>

#include "pesin/rds.hpp"

namespace pesin {

// Lyapunov spectrum of one (omega, x) realization, per unit step in nats.
struct SpectrumEstimate {
  Vec rho;        // d exponents, ascending
  Vec halfwidth;  // 2 x SE over block means, aligned with rho
  std::vector<double> lambda;  // clustered distinct exponents, increasing
  std::vector<int> m;          // multiplicities, sum = d
  int n_used = 0;
  // (1/n) of the accumulated log |R_ii| over every direction: algebraically
  // equal to the per-step log-determinant rate of the cocycle product.
  double logdet_rate = 0.0;

  // Integrand of the entropy bound: sum of positive clustered exponents with
  // multiplicity.
  double sum_positive() const;
};

// Threshold splitting of the tangent space at time 0: E collects the
// directions with growth rate below a, H is its orthogonal complement.
struct FiltrationEstimate {
  Mat E;            // d x k, orthonormal columns (k may be 0)
  Mat H;            // d x (d-k), orthonormal columns
  double a = 0.0;   // rate threshold
  Vec exps;         // singular-value exponents, descending (H-block first)
};

// Benettin QR accumulation: push an orthonormal frame through the cocycle,
// re-orthonormalize every `block` steps, average the log R-diagonals.
// frame0 optionally replaces the identity as the initial frame (the limit is
// frame-independent; tests exercise that).
SpectrumEstimate lyapunov_spectrum(const DiffeoFamily& family,
                                   const OmegaPrefix& omega, const Vec& x,
                                   int n, int block = 1,
                                   double cluster_gap = 0.05,
                                   const Mat* frame0 = nullptr);

// Greedy gap clustering of sorted exponents: a new cluster starts whenever
// successive values differ by more than `gap`; returns cluster means + sizes.
std::pair<std::vector<double>, std::vector<int>> cluster_multiplicities(
    const std::vector<double>& rho_sorted, double gap);

// E = span of right-singular directions of D_x f^n_omega with singular-value
// exponent below a, H = the rest.  Computed as the orthonormal QR frame of
// the transposed factor product, whose leading columns converge to the
// dominant right-singular subspace; the naive SVD of the accumulated product
// loses every sub-dominant direction once the spread exceeds ~30 e-folds.
// Requires a spectral gap at a: no exponent within `gap` of the threshold.
FiltrationEstimate stable_filtration(const DiffeoFamily& family,
                                     const OmegaPrefix& omega, const Vec& x,
                                     int n, double a, double gap = 0.05);

// | (1/n) sum_k log|det J_k|  -  sum_i lambda_i m_i |, the determinant side
// of the spectrum sum rule, with the log-dets accumulated stably per step
// (log |R_ii| of each factor's own QR).
double det_identity_residual(const DiffeoFamily& family,
                             const OmegaPrefix& omega, const Vec& x, int n,
                             const SpectrumEstimate& spectrum);

// Principal angle between the spans: arccos of the largest singular value of
// E^T H.  pi/2 for orthogonal subspaces, 0 for equal ones.  Either span empty
// returns pi/2 (vacuous infimum).
double subspace_angle(const Mat& E, const Mat& H);

}  // namespace pesin
