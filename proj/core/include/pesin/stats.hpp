#pragma once

#include <cstddef>
#include <vector>

namespace pesin {

// Streaming mean / variance (Welford).
struct Accumulator {
  long long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / double(n);
    m2 += d * (x - mean);
  }
  double var() const { return n > 1 ? m2 / double(n - 1) : 0.0; }
  double sd() const;
  double se() const;
};

// Deterministic pairwise tree reduction: the association depends only on the
// vector length, never on how or where the entries were produced, so sums are
// byte-identical across worker counts.
double tree_sum(const std::vector<double>& xs);
double tree_mean(const std::vector<double>& xs);

// Confidence half-width as 2x the standard error of contiguous block means.
double block_halfwidth(const std::vector<double>& xs, int blocks = 20);

// Ordinary least squares y ~ intercept + slope * t.
struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};
SlopeFit fit_slope(const std::vector<double>& t, const std::vector<double>& y);

// Hill tail-index estimator over the top `top_frac` order statistics of the
// positive samples.  Returns +inf when the top block is degenerate (all equal),
// which reads as "no heavy tail detected".
double hill_index(std::vector<double> xs, double top_frac = 0.05);

// Two-sample Kolmogorov-Smirnov asymptotic p-value.
double ks_two_sample_p(std::vector<double> a, std::vector<double> b);

}  // namespace pesin
