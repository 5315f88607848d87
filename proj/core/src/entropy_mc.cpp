#include "pesin/entropy_mc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <thread>
#include <unordered_map>

#include "pesin/errors.hpp"
#include "pesin/oseledets.hpp"
#include "pesin/rng.hpp"
#include "pesin/stats.hpp"

namespace pesin {
namespace {

// Static index partition + join; bit-stable because each index owns its
// output slot and all aggregation happens in index order afterwards.
void parallel_for_index(int total, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, total));
  if (threads == 1) {
    for (int i = 0; i < total; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      for (int i = t; i < total; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

std::uint32_t PartitionSpec::cells() const {
  if (g <= 0) return 1;
  const int d = int(center.size());
  std::uint64_t total = 1;
  for (int i = 0; i < d; ++i) {
    total *= std::uint64_t(g);
    if (total > (1ULL << 31))
      throw config_error("partition too fine: g^d exceeds the cell budget");
  }
  return std::uint32_t(total) + 1;
}

std::uint32_t PartitionSpec::stray_cell() const { return cells() - 1; }

std::uint32_t PartitionSpec::cell(const Vec& x) const {
  if (g <= 0) return 0;
  const int d = int(center.size());
  std::uint64_t id = 0;
  for (int i = 0; i < d; ++i) {
    const double dx = x(i) - center(i);
    if (std::abs(dx) > radius) return stray_cell();
    int idx = int((dx + radius) / (2.0 * radius) * g);
    idx = std::min(std::max(idx, 0), g - 1);
    id = id * std::uint64_t(g) + std::uint64_t(idx);
  }
  return std::uint32_t(id);
}

PartitionSpec PartitionSpec::fit(const MeasureRepr& mu, int g,
                                 std::uint64_t seed, double sd_multiple,
                                 int samples) {
  PartitionSpec spec;
  spec.g = g;
  Prng prng(seed, stream_id(kStreamMu, 0xB0C5ULL));
  Vec mean;
  for (int i = 0; i < samples; ++i) {
    const Vec x = mu.sample(prng);
    if (i == 0)
      mean = x;
    else
      mean += x;
  }
  mean /= double(samples);
  spec.center = mean;
  spec.radius = sd_multiple * mu.sample_sd(seed ^ 0x51D5ULL);
  if (!(spec.radius > 0.0)) spec.radius = 1.0;
  return spec;
}

double itinerary_batch_entropy(
    const std::vector<std::vector<std::uint32_t>>& codes, BiasCorrection mode) {
  const int M = int(codes.size());
  if (M == 0) throw config_error("entropy of an empty itinerary batch");

  std::unordered_map<std::string, int> counts;
  counts.reserve(std::size_t(M) * 2);
  std::string key;
  for (const auto& code : codes) {
    key.assign(reinterpret_cast<const char*>(code.data()),
               code.size() * sizeof(std::uint32_t));
    ++counts[key];
  }

  double sum_clogc = 0.0;
  for (const auto& [k, c] : counts) sum_clogc += double(c) * std::log(double(c));
  const double H = std::log(double(M)) - sum_clogc / double(M);
  const int K = int(counts.size());

  switch (mode) {
    case BiasCorrection::none:
      return H;
    case BiasCorrection::miller_madow:
      return H + double(K - 1) / (2.0 * M);
    case BiasCorrection::jackknife: {
      if (M < 2) return H;
      // Closed-form leave-one-out: removing one sample from a bin of count c
      // changes only that bin's contribution.
      double mean_loo = 0.0;
      for (const auto& [k, c] : counts) {
        const double cc = double(c);
        const double drop =
            sum_clogc - cc * std::log(cc) +
            (c > 1 ? (cc - 1.0) * std::log(cc - 1.0) : 0.0);
        const double Hl = std::log(double(M - 1)) - drop / double(M - 1);
        mean_loo += cc / double(M) * Hl;
      }
      return double(M) * H - double(M - 1) * mean_loo;
    }
  }
  return H;
}

EntropyEstimate itinerary_entropy(const DiffeoFamily& family,
                                  const MeasureRepr& mu,
                                  const PartitionSpec& spec, int n, int m_omega,
                                  int m_x, std::uint64_t seed, int threads,
                                  BiasCorrection mode) {
  if (n < 1) throw config_error("itinerary depth must be >= 1");
  if (m_omega < 1) throw config_error("need at least one noise draw");
  if (m_x < 1000) throw config_error("itinerary entropy needs m_x >= 1000");
  spec.cells();  // validates the cell budget

  std::vector<double> H(std::size_t(m_omega), 0.0);
  std::vector<double> stray(std::size_t(m_omega), 0.0);
  std::vector<std::string> failure{std::size_t(m_omega)};

  parallel_for_index(m_omega, threads, [&](int r) {
    try {
      const OmegaPrefix omega =
          draw_omega(family, seed, std::uint64_t(r), n);
      std::vector<std::vector<std::uint32_t>> codes(
          std::size_t(m_x), std::vector<std::uint32_t>(std::size_t(n), 0u));
      long long stray_hits = 0;
      const std::uint32_t strayid = spec.stray_cell();
      for (int i = 0; i < m_x; ++i) {
        Prng prng(seed,
                  stream_id(stream_id(kStreamMu, std::uint64_t(r) + 1),
                            std::uint64_t(i)));
        Vec x = mu.sample(prng);
        for (int k = 0; k < n; ++k) {
          const std::uint32_t c = spec.cell(x);
          codes[std::size_t(i)][std::size_t(k)] = c;
          if (c == strayid && spec.g > 0) ++stray_hits;
          if (k + 1 < n) {
            x = family.eval(omega.theta[std::size_t(k)], x);
            if (!x.allFinite() || x.norm() > kDivergenceGuard)
              throw divergence_error("itinerary orbit diverged");
          }
        }
      }
      H[std::size_t(r)] = itinerary_batch_entropy(codes, mode);
      stray[std::size_t(r)] =
          double(stray_hits) / (double(m_x) * double(n));
    } catch (const std::exception& e) {
      failure[std::size_t(r)] = e.what();
    }
  });

  for (const auto& f : failure)
    if (!f.empty()) throw divergence_error(f);

  EntropyEstimate out;
  out.H = tree_mean(H);
  Accumulator acc;
  for (double h : H) acc.add(h);
  out.se = acc.se();
  out.stray_mass = tree_mean(stray);
  out.m_omega = m_omega;
  out.m_x = m_x;
  if (out.stray_mass > 0.5)
    throw config_error(
        "partition coverage: over half the itinerary mass fell outside the "
        "box; increase the radius");
  return out;
}

EntropyCurve entropy_curve(const DiffeoFamily& family, const MeasureRepr& mu,
                           const PartitionSpec& spec,
                           const std::vector<int>& depths, int m_omega, int m_x,
                           std::uint64_t seed, int threads,
                           BiasCorrection mode) {
  EntropyCurve curve;
  curve.m_omega = m_omega;
  curve.m_x = m_x;
  curve.g = spec.g;
  int prev = 0;
  for (int n : depths) {
    if (n <= prev) throw config_error("depths must be strictly increasing");
    prev = n;
    const EntropyEstimate est =
        itinerary_entropy(family, mu, spec, n, m_omega, m_x, seed, threads,
                          mode);
    curve.n.push_back(n);
    curve.H.push_back(est.H);
    curve.se.push_back(est.se);
    curve.stray.push_back(est.stray_mass);
  }
  return curve;
}

RateEstimate entropy_rate(const EntropyCurve& curve, int window) {
  const int m = int(curve.n.size());
  if (window < 2) throw config_error("rate window must be >= 2");
  if (m < window + 2)
    throw config_error("entropy curve shorter than window + 2 points");
  std::vector<double> xs, ys;
  for (int i = m - (window + 1); i < m; ++i) {
    xs.push_back(double(curve.n[std::size_t(i)]));
    ys.push_back(curve.H[std::size_t(i)]);
  }
  const SlopeFit fit = fit_slope(xs, ys);
  RateEstimate out;
  out.rate = fit.slope;
  out.se = fit.slope_se;
  if (out.rate < -3.0 * out.se) {
    out.rate = 0.0;
    out.clamped = true;
  }
  return out;
}

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::equality_consistent:
      return "equality-consistent";
    case Verdict::inequality_consistent:
      return "inequality-consistent";
    case Verdict::violation:
      return "violation";
    case Verdict::inconclusive:
      return "inconclusive";
  }
  return "inconclusive";
}

PesinReport pesin_gap(const DiffeoFamily& family, const MeasureRepr& mu,
                      const PesinBudget& budget) {
  PesinReport rep;

  // Exponent side: average the clustered positive sums over mu-samples.
  {
    std::vector<double> sums(std::size_t(budget.spectrum_samples), 0.0);
    std::vector<double> hws(std::size_t(budget.spectrum_samples), 0.0);
    std::vector<std::string> failure{std::size_t(budget.spectrum_samples)};
    parallel_for_index(budget.spectrum_samples, budget.threads, [&](int j) {
      try {
        Prng prng(budget.seed,
                  stream_id(stream_id(kStreamMu, 0x5A5AULL),
                            std::uint64_t(j)));
        const Vec x = mu.sample(prng);
        const OmegaPrefix omega =
            draw_omega(family, budget.seed, 0xA000ULL + std::uint64_t(j),
                       budget.spectrum_horizon);
        const SpectrumEstimate spec = lyapunov_spectrum(
            family, omega, x, budget.spectrum_horizon);
        sums[std::size_t(j)] = spec.sum_positive();
        double hw = 0.0;
        for (Eigen::Index i = 0; i < spec.rho.size(); ++i)
          if (spec.rho(i) > 0.0) hw += spec.halfwidth(i);
        hws[std::size_t(j)] = hw;
      } catch (const std::exception& e) {
        failure[std::size_t(j)] = e.what();
      }
    });
    for (const auto& f : failure)
      if (!f.empty()) throw divergence_error(f);
    rep.sum_positive = tree_mean(sums);
    Accumulator acc;
    for (double s : sums) acc.add(s);
    rep.sum_halfwidth = 2.0 * acc.se() +
                        tree_mean(hws) /
                            std::sqrt(double(budget.spectrum_samples));
  }

  // Entropy side: refinement ladder, g doubling until the rate stabilizes.
  PartitionSpec spec = PartitionSpec::fit(mu, budget.g0, budget.seed);
  std::vector<int> depths;
  for (int n = 1; n <= budget.n_max; ++n) depths.push_back(n);

  double prev_rate = 0.0;
  bool have_prev = false;
  for (int g = budget.g0; g <= budget.g_max; g *= 2) {
    spec.g = g;
    const EntropyCurve curve =
        entropy_curve(family, mu, spec, depths, budget.m_omega, budget.m_x,
                      budget.seed, budget.threads);
    const RateEstimate rate = entropy_rate(curve, budget.window);
    rep.ladder_g.push_back(g);
    rep.ladder_rate.push_back(rate.rate);
    rep.ladder_rate_se.push_back(rate.se);
    rep.h = rate.rate;
    rep.h_halfwidth = 2.0 * rate.se;
    rep.final_curve = curve;
    if (have_prev && std::abs(rate.rate - prev_rate) < budget.stabilize_tol) {
      rep.ladder_stabilized = true;
      break;
    }
    have_prev = true;
    prev_rate = rate.rate;
  }

  rep.gap = rep.h - rep.sum_positive;
  const double combined =
      rep.h_halfwidth + rep.sum_halfwidth + budget.tol_floor;
  if (!rep.ladder_stabilized) {
    rep.verdict = Verdict::inconclusive;
  } else if (rep.gap > combined) {
    rep.verdict = Verdict::violation;
  } else if (rep.gap < -combined) {
    rep.verdict = Verdict::inequality_consistent;
  } else {
    rep.verdict = Verdict::equality_consistent;
  }
  return rep;
}

ScalingResult scaling_check(const FiniteRds& rds, const FinitePartition& xi,
                            const FiniteMeasure& mu, int n, int t,
                            std::uint64_t cap) {
  if (n < 1 || t < 1) throw config_error("scaling check needs n, t >= 1");
  ScalingResult out;
  const FiniteRds composed = compose_rds(rds, t, cap);
  out.rate_composed = kifer_n_step(composed, xi, mu, n, cap) / double(t);
  out.rate_base = kifer_n_step(rds, xi, mu, n * t, cap);
  if (std::abs(out.rate_base) < 1e-15 && std::abs(out.rate_composed) < 1e-15) {
    out.ratio = 1.0;
    out.degenerate = true;
  } else {
    out.ratio = out.rate_composed / out.rate_base;
  }
  return out;
}

}  // namespace pesin
