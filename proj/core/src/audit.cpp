#include "pesin/audit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>

#include <Eigen/Dense>

#include "pesin/errors.hpp"
#include "pesin/rng.hpp"
#include "pesin/stats.hpp"

namespace pesin {
namespace {

constexpr double kZeroFloor = 1e-300;

double op_norm(const Mat& M) {
  return M.size() ? M.jacobiSvd().singularValues()(0) : 0.0;
}

double log_plus(double v) { return std::max(0.0, std::log(std::max(v, 1.0))); }

// Inner estimate of sup_{|u|,|v|<=1} |T(u, v)| over signed axes plus a fixed
// low-discrepancy direction set.
double tensor_norm(const Tensor3& T, const std::vector<Vec>& dirs) {
  const int d = int(T.size());
  double best = 0.0;
  for (const Vec& u : dirs) {
    for (const Vec& v : dirs) {
      double s2 = 0.0;
      for (int i = 0; i < d; ++i) {
        const double w = u.dot(T[std::size_t(i)] * v);
        s2 += w * w;
      }
      best = std::max(best, std::sqrt(s2));
    }
  }
  return best;
}

std::vector<Vec> directions(int d, int extra, std::uint64_t salt) {
  std::vector<Vec> dirs;
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  Prng prng(0x6a09e667f3bcc909ULL, stream_id(kStreamScratch, salt));
  for (int i = 0; i < extra; ++i) {
    Vec v(d);
    for (int j = 0; j < d; ++j) v(j) = prng.normal();
    const double nrm = v.norm();
    if (nrm > kZeroFloor) dirs.push_back(v / nrm);
  }
  return dirs;
}

std::vector<Vec> ball_offsets(int d, int count, double radius,
                              std::uint64_t salt) {
  std::vector<Vec> out;
  out.push_back(Vec::Zero(d));
  Prng prng(0xbb67ae8584caa73bULL, stream_id(kStreamScratch, salt));
  for (int i = 1; i < count; ++i) {
    Vec v(d);
    for (int j = 0; j < d; ++j) v(j) = prng.normal();
    const double nrm = v.norm();
    if (nrm < kZeroFloor) continue;
    out.push_back(v * (radius * std::pow(prng.uniform(), 1.0 / d) / nrm));
  }
  return out;
}

// Sample slots filled per index; entry assembled afterwards in index order.
struct Samples {
  std::vector<double> value;
  std::vector<std::uint8_t> zero;  // quantity identically zero at this sample

  explicit Samples(int M)
      : value(std::size_t(M), 0.0), zero(std::size_t(M), 0) {}
};

AuditEntry summarize(const std::string& name, const Samples& s) {
  AuditEntry e;
  e.name = name;
  const int M = int(s.value.size());
  e.samples = M;

  std::vector<double> vals;
  int zeros = 0;
  for (int i = 0; i < M; ++i) {
    if (s.zero[std::size_t(i)])
      ++zeros;
    else
      vals.push_back(s.value[std::size_t(i)]);
  }
  e.zero_fraction = double(zeros) / std::max(1, M);
  if (vals.empty()) {
    e.estimate = 0.0;
    e.se = 0.0;
    e.hill = std::numeric_limits<double>::infinity();
    e.se_decay = -0.5;
    e.verdict = "degenerate-zero";
    return e;
  }

  e.estimate = tree_mean(vals);
  Accumulator acc;
  for (double v : vals) acc.add(v);
  e.se = acc.se();
  e.hill = hill_index(vals, 0.05);

  // SE against sample count across nested prefixes: light tails shrink like
  // M^{-1/2}; a flat slope reads as variance that never settles.
  std::vector<double> logm, logse;
  for (int denom = 4; denom >= 1; denom /= 2) {
    const int m = int(vals.size()) / denom;
    if (m < 8) continue;
    Accumulator a;
    for (int i = 0; i < m; ++i) a.add(vals[std::size_t(i)]);
    if (a.se() > 0.0) {
      logm.push_back(std::log(double(m)));
      logse.push_back(std::log(a.se()));
    }
  }
  e.se_decay =
      logm.size() >= 2 ? fit_slope(logm, logse).slope : -0.5;

  const bool constant_sample = e.se == 0.0;
  const bool heavy = (std::isfinite(e.hill) && e.hill <= 1.1) ||
                     (!constant_sample &&
                      (e.se_decay < -0.65 || e.se_decay > -0.35));
  e.verdict = heavy ? "heavy-tail-suspect" : "finite-consistent";
  return e;
}

}  // namespace

bool AuditReport::all_clear() const {
  for (const auto& e : entries)
    if (e.verdict == "heavy-tail-suspect") return false;
  return true;
}

const AuditEntry* AuditReport::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

AuditReport audit_assumptions(const DiffeoFamily& family,
                              const MeasureRepr& mu, AuditOptions opts) {
  if (opts.samples < 64) throw config_error("audit needs at least 64 samples");
  if (opts.horizon < 1) throw config_error("audit horizon must be >= 1");
  const int d = family.dim();
  const bool do_hess = opts.need_hessian && family.has_hessian();
  if (opts.need_hessian && !family.has_hessian())
    throw capability_error("audit of second-derivative moments needs Hessians");
  const bool do_inv = opts.need_inverse;

  const auto dirs = directions(d, 16, 0xA0D1ULL);
  const auto xi_grid = ball_offsets(d, opts.xi_grid, 1.0, 0xA0D2ULL);
  const auto sup_ball = ball_offsets(d, 33, opts.ball_radius, 0xA0D3ULL);

  const int M = opts.samples;
  Samples log_dx(M), log_d2(M), log_d2_inv(M), log_dx_inv(M), log_det(M),
      growth(M), mu_mom(M);
  std::vector<std::string> failure{std::size_t(M)};

  auto worker = [&](int i) {
    try {
      Prng prng(opts.seed,
                stream_id(stream_id(kStreamMu, 0xA0D17ULL),
                          std::uint64_t(i)));
      const Vec x = mu.sample(prng);
      mu_mom.value[std::size_t(i)] = std::sqrt(std::log(x.norm() + 1.0));

      const OmegaPrefix omega =
          draw_omega(family, opts.seed ^ 0xA0D17ULL, std::uint64_t(i),
                     opts.horizon);
      const Vec& th = omega.theta.front();

      const Mat J = family.jacobian(th, x);
      log_dx.value[std::size_t(i)] = log_plus(op_norm(J));

      const double det = J.determinant();
      if (std::abs(det) < kZeroFloor)
        throw divergence_error("singular derivative in the determinant audit");
      log_det.value[std::size_t(i)] = std::log(std::abs(det));

      if (do_hess) {
        double sup = 0.0, sup_inv = 0.0;
        for (const Vec& off : xi_grid) {
          sup = std::max(sup, tensor_norm(family.hessian(th, x + off), dirs));
          if (do_inv && family.has_inverse_hessian()) {
            const Vec img = family.eval(th, x + off);
            sup_inv = std::max(
                sup_inv, tensor_norm(family.inverse_hessian(th, img), dirs));
          }
        }
        if (sup < kZeroFloor)
          log_d2.zero[std::size_t(i)] = 1;
        else
          log_d2.value[std::size_t(i)] = std::log(sup);
        if (sup_inv < kZeroFloor)
          log_d2_inv.zero[std::size_t(i)] = 1;
        else
          log_d2_inv.value[std::size_t(i)] = std::log(sup_inv);
      }

      if (do_inv) {
        const Vec y = family.eval(th, x);
        log_dx_inv.value[std::size_t(i)] =
            std::log(std::max(op_norm(family.inverse_jacobian(th, y)),
                              kZeroFloor));
      }

      // n-step growth statistic: sup over the radius ball of log+ |D f^n|,
      // reported as a lower bound of the sup (finite point set).
      double sup_growth = 0.0;
      for (const Vec& off : sup_ball) {
        Vec y = x + off;
        Mat Jn = Mat::Identity(d, d);
        for (int k = 0; k < opts.horizon; ++k) {
          const Vec& tk = omega.theta[std::size_t(k)];
          Jn = family.jacobian(tk, y) * Jn;
          y = family.eval(tk, y);
          if (!y.allFinite() || y.norm() > kDivergenceGuard)
            throw divergence_error("audit orbit diverged");
        }
        sup_growth = std::max(sup_growth, log_plus(op_norm(Jn)));
      }
      growth.value[std::size_t(i)] = sup_growth;
    } catch (const std::exception& e) {
      failure[std::size_t(i)] = e.what();
    }
  };

  const int threads = std::max(1, std::min(opts.threads, M));
  if (threads == 1) {
    for (int i = 0; i < M; ++i) worker(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t]() {
        for (int i = t; i < M; i += threads) worker(i);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failure)
    if (!f.empty()) throw divergence_error(f);

  AuditReport rep;
  rep.horizon = opts.horizon;
  rep.ball_radius = opts.ball_radius;
  rep.entries.push_back(summarize("log_dx", log_dx));
  if (do_hess) {
    rep.entries.push_back(summarize("log_d2", log_d2));
    if (do_inv && family.has_inverse_hessian())
      rep.entries.push_back(summarize("log_d2_inv", log_d2_inv));
  }
  if (do_inv) rep.entries.push_back(summarize("log_dx_inv", log_dx_inv));
  rep.entries.push_back(summarize("log_det", log_det));
  rep.entries.push_back(summarize("growth_n", growth));
  rep.entries.push_back(summarize("mu_log_moment", mu_mom));
  return rep;
}

}  // namespace pesin
