#include "pesin/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pesin/errors.hpp"

namespace pesin {

double Accumulator::sd() const { return std::sqrt(var()); }
double Accumulator::se() const {
  return n > 0 ? sd() / std::sqrt(double(n)) : 0.0;
}

namespace {
double tree_sum_range(const double* xs, std::size_t n) {
  if (n == 0) return 0.0;
  if (n == 1) return xs[0];
  const std::size_t half = n / 2;
  return tree_sum_range(xs, half) + tree_sum_range(xs + half, n - half);
}
}  // namespace

double tree_sum(const std::vector<double>& xs) {
  return tree_sum_range(xs.data(), xs.size());
}

double tree_mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return tree_sum(xs) / double(xs.size());
}

double block_halfwidth(const std::vector<double>& xs, int blocks) {
  if (blocks < 2 || xs.size() < std::size_t(2 * blocks)) return 0.0;
  const std::size_t per = xs.size() / std::size_t(blocks);
  Accumulator acc;
  for (int b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (std::size_t i = std::size_t(b) * per; i < std::size_t(b + 1) * per; ++i)
      s += xs[i];
    acc.add(s / double(per));
  }
  return 2.0 * acc.se();
}

SlopeFit fit_slope(const std::vector<double>& t, const std::vector<double>& y) {
  if (t.size() != y.size() || t.size() < 2)
    throw config_error("fit_slope: need >= 2 matched points");
  const std::size_t n = t.size();
  double tm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tm += t[i];
    ym += y[i];
  }
  tm /= double(n);
  ym /= double(n);
  double stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    stt += (t[i] - tm) * (t[i] - tm);
    sty += (t[i] - tm) * (y[i] - ym);
  }
  if (stt <= 0.0) throw config_error("fit_slope: degenerate abscissae");
  SlopeFit fit;
  fit.slope = sty / stt;
  fit.intercept = ym - fit.slope * tm;
  if (n > 2) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - fit.intercept - fit.slope * t[i];
      sse += r * r;
    }
    fit.slope_se = std::sqrt(sse / double(n - 2) / stt);
  }
  return fit;
}

double hill_index(std::vector<double> xs, double top_frac) {
  std::erase_if(xs, [](double v) { return !(v > 0.0); });
  if (xs.size() < 20) return std::numeric_limits<double>::infinity();
  std::sort(xs.begin(), xs.end(), std::greater<double>());
  std::size_t k = std::size_t(std::floor(top_frac * double(xs.size())));
  k = std::max<std::size_t>(k, 5);
  if (k + 1 >= xs.size()) k = xs.size() - 1;
  const double ref = xs[k];
  if (!(ref > 0.0)) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += std::log(xs[i] / ref);
  if (s <= 0.0) return std::numeric_limits<double>::infinity();
  return double(k) / s;
}

double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw config_error("ks_two_sample_p: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = double(a.size()), nb = double(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  const double lambda = (en + 0.12 + 0.11 / en) * d;
  // Asymptotic Kolmogorov distribution tail sum.
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term =
        2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace pesin
