#include "pesin/pesin_sets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "pesin/errors.hpp"
#include "pesin/rng.hpp"

namespace pesin {
namespace {

constexpr double kTiny = 1e-300;

// Orthonormal basis of the column span, deterministic sign convention.
Mat orth_columns(const Mat& B) {
  if (B.cols() == 0) return B;
  Eigen::HouseholderQR<Mat> qr(B);
  Mat Q = qr.householderQ() * Mat::Identity(B.rows(), B.cols());
  Mat R = qr.matrixQR().topRows(B.cols());
  for (int j = 0; j < B.cols(); ++j) {
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
    if (std::abs(R(j, j)) < kTiny)
      throw divergence_error("degenerate basis while pushing splitting forward");
  }
  return Q;
}

double sigma_max(const Mat& M) {
  if (M.size() == 0) return 0.0;
  return M.jacobiSvd().singularValues()(0);
}

double sigma_min(const Mat& M) {
  if (M.size() == 0) return std::numeric_limits<double>::infinity();
  const auto sv = M.jacobiSvd().singularValues();
  return sv(sv.size() - 1);
}

// Principal-angle gap between two subspaces given by orthonormal bases,
// as the sine of the smallest principal angle; 1 for empty factors.
double angle_gap(const Mat& E, const Mat& H) {
  if (E.cols() == 0 || H.cols() == 0) return 1.0;
  const double c = std::min(1.0, sigma_max(E.transpose() * H));
  return std::sqrt(std::max(0.0, 1.0 - c * c));
}

// Low-discrepancy unit vectors: Halton-angle sphere points plus signed axes,
// so axis-aligned extremes are probed exactly.
std::vector<Vec> probe_directions(int d, int extra, std::uint64_t salt) {
  std::vector<Vec> dirs;
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  Prng prng(0x9e3779b97f4a7c15ULL, stream_id(kStreamScratch, salt));
  for (int i = 0; i < extra; ++i) {
    Vec v(d);
    for (int j = 0; j < d; ++j) v(j) = prng.normal();
    const double nrm = v.norm();
    if (nrm > kTiny) dirs.push_back(v / nrm);
  }
  return dirs;
}

// Largest |u^T T(.) v| over probe pairs, where T is a d-vector of d x d
// symmetric blocks (component Hessians); returns the Euclidean norm of the
// bilinear image, i.e. an inner estimate of sup_{|u|,|v|<=1} |T(u,v)|.
double bilinear_norm(const Tensor3& T, const std::vector<Vec>& dirs) {
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

}  // namespace

std::vector<std::string> validate_params(const PesinParams& p, int d) {
  std::vector<std::string> bad;
  if (d < 1) bad.push_back("state dimension must be positive");
  if (!(p.a < p.b)) bad.push_back("window requires a < b");
  if (!(p.b <= 0.0)) bad.push_back("window requires b <= 0");
  if (p.k < 1 || p.k > d)
    bad.push_back("stable dimension k must lie in [1, d]");
  if (!(p.eps > 0.0))
    bad.push_back("eps must be positive");
  else if (p.eps > 1.0)
    bad.push_back("eps must be <= 1");
  else if (p.eps > (p.b - p.a) / (200.0 * std::max(1, d)))
    bad.push_back("eps exceeds (b - a) / (200 d)");
  if (!(p.l_cap >= 1.0)) bad.push_back("growth cap l' must be >= 1");
  if (!(p.r_cap >= 1.0)) bad.push_back("derivative cap r' must be >= 1");
  if (!(p.c_cap >= 1.0)) bad.push_back("inverse cap C' must be >= 1");
  return bad;
}

CocycleData CocycleData::build(const DiffeoFamily& family,
                               const OmegaPrefix& omega, const Vec& x, int N,
                               double a, double gap) {
  if (N < 1) throw config_error("cocycle horizon must be positive");
  if (omega.length() < N)
    throw config_error("noise prefix shorter than requested horizon");
  const int d = family.dim();

  CocycleData data;
  data.omega = omega;
  data.a = a;

  const FiltrationEstimate filt = stable_filtration(family, omega, x, N, a, gap);
  data.k = int(filt.E.cols());

  data.traj.reserve(std::size_t(N) + 1);
  data.factors.reserve(std::size_t(N));
  data.E.reserve(std::size_t(N) + 1);
  data.H.reserve(std::size_t(N) + 1);

  data.traj.push_back(x);
  data.E.push_back(filt.E);
  data.H.push_back(filt.H);
  Vec xn = x;
  for (int n = 0; n < N; ++n) {
    const Vec& th = omega.theta[std::size_t(n)];
    Mat J = family.jacobian(th, xn);
    xn = family.eval(th, xn);
    if (!xn.allFinite() || xn.norm() > kDivergenceGuard)
      throw divergence_error("orbit diverged at step " + std::to_string(n));
    data.traj.push_back(xn);
    data.E.push_back(data.E.back().cols() ? orth_columns(J * data.E.back())
                                          : Mat(d, 0));
    data.H.push_back(data.H.back().cols() ? orth_columns(J * data.H.back())
                                          : Mat(d, 0));
    data.factors.push_back(std::move(J));
  }
  return data;
}

Mat CocycleData::stable_block(int n, int l) const {
  if (n < 0 || l < 0 || n + l > horizon())
    throw config_error("stable_block indices out of range");
  Mat M = E[std::size_t(n)];
  for (int j = 0; j < l; ++j) M = factors[std::size_t(n + j)] * M;
  return M;
}

Mat CocycleData::unstable_block(int n, int l) const {
  if (n < 0 || l < 0 || n + l > horizon())
    throw config_error("unstable_block indices out of range");
  Mat M = H[std::size_t(n)];
  for (int j = 0; j < l; ++j) M = factors[std::size_t(n + j)] * M;
  return M;
}

void CocycleData::split(int n, const Vec& v, Vec& xi, Vec& eta) const {
  const int d = int(v.size());
  const Mat& En = E[std::size_t(n)];
  const Mat& Hn = H[std::size_t(n)];
  Mat B(d, d);
  if (En.cols()) B.leftCols(En.cols()) = En;
  if (Hn.cols()) B.rightCols(Hn.cols()) = Hn;
  const Vec c = B.colPivHouseholderQr().solve(v);
  xi = c.head(En.cols());
  eta = c.tail(Hn.cols());
}

LEstimate estimate_l(const CocycleData& data, const PesinParams& p) {
  const int N = data.horizon();
  LEstimate out;
  out.table.assign(std::size_t(N) + 1, 1.0);
  if (N < 2) out.short_horizon = true;

  for (int n = 0; n <= N; ++n) {
    double c = std::max(1.0, 1.0 / angle_gap(data.E[std::size_t(n)],
                                             data.H[std::size_t(n)]));
    Mat ME = data.E[std::size_t(n)];
    Mat MH = data.H[std::size_t(n)];
    for (int l = 1; n + l <= N; ++l) {
      const Mat& J = data.factors[std::size_t(n + l - 1)];
      if (ME.cols()) {
        ME = J * ME;
        c = std::max(c, sigma_max(ME) * std::exp(-(p.a + p.eps) * l));
      }
      if (MH.cols()) {
        MH = J * MH;
        const double smin = sigma_min(MH);
        if (smin < kTiny)
          throw divergence_error("unstable block collapsed in growth table");
        c = std::max(c, std::exp((p.b - p.eps) * l) / smin);
      }
      c = std::max(c, std::exp(-p.eps * l) /
                          angle_gap(data.E[std::size_t(n + l)],
                                    data.H[std::size_t(n + l)]));
    }
    out.table[std::size_t(n)] = c;
  }

  out.l0 = 0.0;
  out.l_uniform = 0.0;
  for (int n = 0; n <= N; ++n) {
    out.l0 = std::max(out.l0, out.table[std::size_t(n)] * std::exp(-p.eps * n));
    out.l_uniform = std::max(out.l_uniform, out.table[std::size_t(n)]);
  }

  // Taming certificate: the constants may grow along the orbit only at the
  // slow rate e^{eps l}.
  out.cert_margin = -std::numeric_limits<double>::infinity();
  for (int n = 0; n <= N; ++n) {
    for (int l = 1; n + l <= N; ++l) {
      const double m = std::log(out.table[std::size_t(n + l)]) -
                       std::log(out.table[std::size_t(n)]) - p.eps * l;
      out.cert_margin = std::max(out.cert_margin, m);
    }
  }
  out.cert_ok = !(out.cert_margin > 1e-9);
  return out;
}

LEstimate estimate_l(const DiffeoFamily& family, const OmegaPrefix& omega,
                     const Vec& x, const PesinParams& p, int N) {
  return estimate_l(CocycleData::build(family, omega, x, N, p.a), p);
}

namespace {

REstimate estimate_r_impl(const DiffeoFamily& family,
                          const std::vector<Vec>& traj,
                          const std::vector<Vec>& theta, double eps, int N,
                          bool forward_only) {
  if (!family.has_hessian())
    throw capability_error(
        "derivative-Lipschitz estimate requires second derivatives");
  if (!forward_only && !family.has_inverse_hessian()) forward_only = true;
  if (N < 1) throw config_error("horizon must be positive");

  const int d = family.dim();
  const auto dirs = probe_directions(d, 32, 0xB111);
  // Ball offsets for the sup over |xi| <= 1 around each orbit point.
  std::vector<Vec> offsets;
  offsets.push_back(Vec::Zero(d));
  {
    Prng prng(0x5851f42dULL, stream_id(kStreamScratch, 0xB112));
    for (int i = 0; i < 32; ++i) {
      Vec v(d);
      for (int j = 0; j < d; ++j) v(j) = prng.normal();
      const double nrm = v.norm();
      const double rad = std::pow(prng.uniform(), 1.0 / d);
      if (nrm > kTiny) offsets.push_back(v * (rad / nrm));
    }
  }

  REstimate out;
  out.forward_only = forward_only;
  out.rprime_table.assign(std::size_t(N), 0.0);
  for (int n = 0; n < N; ++n) {
    const Vec& th = theta[std::size_t(n)];
    const Vec& xn = traj[std::size_t(n)];
    double rp = 0.0;
    for (const Vec& off : offsets) {
      const Vec pt = xn + off;
      rp = std::max(rp, bilinear_norm(family.hessian(th, pt), dirs));
      if (!forward_only) {
        const Vec img = family.eval(th, pt);
        rp = std::max(rp, bilinear_norm(family.inverse_hessian(th, img), dirs));
      }
    }
    out.rprime_table[std::size_t(n)] = rp;
    out.r = std::max(out.r, rp * std::exp(-eps * n));
  }
  return out;
}

}  // namespace

REstimate estimate_r(const DiffeoFamily& family, const CocycleData& data,
                     double eps, int N, bool forward_only) {
  N = std::min(N, data.horizon());
  return estimate_r_impl(family, data.traj, data.omega.theta, eps, N,
                         forward_only);
}

REstimate estimate_r(const DiffeoFamily& family, const OmegaPrefix& omega,
                     const Vec& x, double eps, int N, bool forward_only) {
  if (omega.length() < N)
    throw config_error("noise prefix shorter than requested horizon");
  std::vector<Vec> traj;
  traj.reserve(std::size_t(N) + 1);
  traj.push_back(x);
  for (int n = 0; n < N; ++n) {
    Vec xn = family.eval(omega.theta[std::size_t(n)], traj.back());
    if (!xn.allFinite() || xn.norm() > kDivergenceGuard)
      throw divergence_error("orbit diverged at step " + std::to_string(n));
    traj.push_back(std::move(xn));
  }
  return estimate_r_impl(family, traj, omega.theta, eps, N, forward_only);
}

LyapunovMetric make_metric(std::shared_ptr<const CocycleData> data,
                           const PesinParams& p, int n, double tol) {
  if (!data) throw config_error("metric requires cocycle data");
  if (n < 0 || n > data->horizon())
    throw config_error("metric level outside cocycle horizon");
  LyapunovMetric m;
  m.data = std::move(data);
  m.params = p;
  m.n = n;
  m.tol = tol;

  const int avail = m.data->horizon() - n;
  if (m.data->k == 0 || avail == 0) {
    m.L = 0;
    m.rho = 0.0;
    return m;
  }

  // Estimate the geometric decay of the stable-series terms from the first
  // few operator norms of the restricted cocycle blocks.
  const double w = std::exp(-2.0 * (p.a + 2.0 * p.eps));
  Mat ME = m.data->E[std::size_t(n)];
  double prev = 1.0;  // sigma_max at l = 0 (orthonormal basis)
  double rho = 0.0;
  const int probes = std::min(avail, 8);
  for (int l = 1; l <= probes; ++l) {
    ME = m.data->factors[std::size_t(n + l - 1)] * ME;
    const double cur = sigma_max(ME);
    if (cur < kTiny) {
      rho = 0.0;
      break;
    }
    rho = std::max(rho, w * (cur * cur) / (prev * prev));
    prev = cur;
  }
  if (rho >= 1.0)
    throw divergence_error(
        "stable block does not contract below the window rate; adapted "
        "series diverges");
  m.rho = rho;
  if (rho <= 0.0) {
    m.L = std::min(avail, probes);
  } else {
    const double L = std::ceil(std::log(tol * (1.0 - rho)) / std::log(rho));
    m.L = std::min(avail, std::max(1, int(L)));
  }
  return m;
}

LyapNorm lyapunov_norm(const LyapunovMetric& metric, const Vec& v) {
  const CocycleData& data = *metric.data;
  const PesinParams& p = metric.params;
  const int n = metric.n;

  Vec xi, eta;
  data.split(n, v, xi, eta);

  // Stable side: forward series with weight e^{-2(a+2eps)l}.
  double sE = 0.0, last = 0.0;
  if (xi.size()) {
    Vec w = data.E[std::size_t(n)] * xi;
    sE = w.squaredNorm();
    for (int l = 1; l <= metric.L; ++l) {
      w = data.factors[std::size_t(n + l - 1)] * w;
      last = std::exp(-2.0 * (p.a + 2.0 * p.eps) * l) * w.squaredNorm();
      sE += last;
    }
  }
  const double tailE =
      (metric.rho > 0.0 && metric.rho < 1.0) ? last * metric.rho / (1.0 - metric.rho)
                                             : 0.0;

  // Unstable side: finite pullback sum with weight e^{2(b-2eps)l}.
  double sH = 0.0;
  if (eta.size()) {
    Vec w = data.H[std::size_t(n)] * eta;
    sH = w.squaredNorm();
    for (int l = 1; l <= n; ++l) {
      w = data.factors[std::size_t(n - l)].partialPivLu().solve(w);
      sH += std::exp(2.0 * (p.b - 2.0 * p.eps) * l) * w.squaredNorm();
    }
  }

  LyapNorm out;
  out.value = std::max(std::sqrt(sE), std::sqrt(sH));
  out.tail = tailE / (2.0 * std::max(out.value, kTiny));
  return out;
}

MetricBoundsReport check_metric_bounds(std::shared_ptr<const CocycleData> data,
                                       const PesinParams& p, int n, int samples,
                                       std::uint64_t seed) {
  if (!data) throw config_error("metric bounds require cocycle data");
  if (n < 0 || n + 1 > data->horizon())
    throw config_error("metric bounds need one step of headroom");
  const int d = int(data->traj.front().size());
  const LyapunovMetric mn = make_metric(data, p, n);
  const LyapunovMetric mn1 = make_metric(data, p, n + 1);

  MetricBoundsReport rep;
  rep.A = 4.0 * p.l_cap * p.l_cap /
          std::sqrt(1.0 - std::exp(-2.0 * p.eps));
  rep.samples = samples;
  rep.worst_contraction = -std::numeric_limits<double>::infinity();
  rep.worst_expansion = std::numeric_limits<double>::infinity();
  rep.worst_lower = std::numeric_limits<double>::infinity();
  rep.worst_upper = -std::numeric_limits<double>::infinity();

  const Mat& En = data->E[std::size_t(n)];
  const Mat& Hn = data->H[std::size_t(n)];
  const Mat& J = data->factors[std::size_t(n)];
  Prng prng(seed, stream_id(kStreamScratch, 0xAB0));

  auto unit = [&](int m) {
    Vec v(m);
    double nrm = 0.0;
    do {
      for (int j = 0; j < m; ++j) v(j) = prng.normal();
      nrm = v.norm();
    } while (nrm < kTiny);
    return Vec(v / nrm);
  };

  for (int i = 0; i < samples; ++i) {
    if (En.cols()) {
      const Vec v = En * unit(int(En.cols()));
      const double lhs = lyapunov_norm(mn1, J * v).value;
      const double rhs = std::exp(p.a + 2.0 * p.eps) * lyapunov_norm(mn, v).value;
      rep.worst_contraction =
          std::max(rep.worst_contraction, (lhs - rhs) / std::max(rhs, kTiny));
    }
    if (Hn.cols()) {
      const Vec v = Hn * unit(int(Hn.cols()));
      const double lhs = lyapunov_norm(mn1, J * v).value;
      const double rhs = std::exp(p.b - 2.0 * p.eps) * lyapunov_norm(mn, v).value;
      rep.worst_expansion =
          std::min(rep.worst_expansion, (lhs - rhs) / std::max(rhs, kTiny));
    }
    const Vec z = unit(d);
    const double nz = lyapunov_norm(mn, z).value;
    rep.worst_lower = std::min(rep.worst_lower, nz - 0.5);
    const double cap = rep.A * std::exp(2.0 * p.eps * n);
    rep.worst_upper = std::max(rep.worst_upper, (nz - cap) / cap);
  }

  const double tol = 1e-8;
  rep.pass = rep.worst_contraction <= tol &&
             (!Hn.cols() || rep.worst_expansion >= -tol) &&
             rep.worst_lower >= -tol && rep.worst_upper <= tol;
  if (!En.cols()) rep.worst_contraction = 0.0;
  if (!Hn.cols()) rep.worst_expansion = 0.0;
  return rep;
}

CdeltaEstimate cdelta_certificate(const CocycleData& data, double delta) {
  if (!(delta > 0.0)) throw config_error("delta must be positive");
  CdeltaEstimate out;
  out.table.reserve(data.factors.size());
  for (std::size_t n = 0; n < data.factors.size(); ++n) {
    const double smin = sigma_min(data.factors[n]);
    if (smin < kTiny)
      throw divergence_error("singular step derivative in inverse growth table");
    const double inv_norm = 1.0 / smin;
    out.table.push_back(inv_norm);
    out.c_delta = std::max(out.c_delta, inv_norm * std::exp(-delta * double(n)));
  }
  return out;
}

}  // namespace pesin
