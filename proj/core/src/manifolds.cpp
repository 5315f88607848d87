#include "pesin/manifolds.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pesin/errors.hpp"
#include "pesin/rng.hpp"
#include "pesin/stats.hpp"

namespace pesin {
namespace {

constexpr double kTiny = 1e-300;

// Multi-indices with total degree in [dmin, dmax], graded lexicographic.
std::vector<std::vector<int>> monomial_exponents(int k, int dmin, int dmax) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(std::size_t(k), 0);
  auto rec = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == k - 1) {
      cur[std::size_t(pos)] = remaining;
      out.push_back(cur);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[std::size_t(pos)] = e;
      self(self, pos + 1, remaining - e);
    }
  };
  for (int deg = dmin; deg <= dmax; ++deg) {
    if (k == 0) break;
    rec(rec, 0, deg);
  }
  return out;
}

double mono_eval(const std::vector<int>& m, const Vec& xi) {
  double v = 1.0;
  for (std::size_t j = 0; j < m.size(); ++j)
    for (int e = 0; e < m[j]; ++e) v *= xi(Eigen::Index(j));
  return v;
}

// Partial derivative of the monomial with respect to variable j.
double mono_deriv(const std::vector<int>& m, const Vec& xi, int j) {
  if (m[std::size_t(j)] == 0) return 0.0;
  std::vector<int> mm = m;
  mm[std::size_t(j)] -= 1;
  return double(m[std::size_t(j)]) * mono_eval(mm, xi);
}

double mono_deriv2(const std::vector<int>& m, const Vec& xi, int j, int l) {
  std::vector<int> mm = m;
  double c = double(mm[std::size_t(j)]);
  if (c == 0.0) return 0.0;
  mm[std::size_t(j)] -= 1;
  const double c2 = double(mm[std::size_t(l)]);
  if (c2 == 0.0) return 0.0;
  mm[std::size_t(l)] -= 1;
  return c * c2 * mono_eval(mm, xi);
}

Vec poly_eval(const std::vector<std::vector<int>>& monos, const Mat& coeffs,
              const Vec& xi, int out_dim) {
  Vec v = Vec::Zero(out_dim);
  for (std::size_t r = 0; r < monos.size(); ++r)
    v += coeffs.row(Eigen::Index(r)).transpose() * mono_eval(monos[r], xi);
  return v;
}

Mat poly_jacobian(const std::vector<std::vector<int>>& monos, const Mat& coeffs,
                  const Vec& xi, int out_dim) {
  const int k = int(xi.size());
  Mat J = Mat::Zero(out_dim, k);
  for (std::size_t r = 0; r < monos.size(); ++r)
    for (int j = 0; j < k; ++j)
      J.col(j) += coeffs.row(Eigen::Index(r)).transpose() *
                  mono_deriv(monos[r], xi, j);
  return J;
}

// Hessian of output component i as a k x k matrix.
Mat poly_hessian(const std::vector<std::vector<int>>& monos, const Mat& coeffs,
                 const Vec& xi, int i) {
  const int k = int(xi.size());
  Mat H = Mat::Zero(k, k);
  for (std::size_t r = 0; r < monos.size(); ++r)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l)
        H(j, l) += coeffs(Eigen::Index(r), i) * mono_deriv2(monos[r], xi, j, l);
  return H;
}

// Deterministic cloud of points in the unit ball of R^k, boundary included.
std::vector<Vec> ball_cloud(int k, int count, std::uint64_t seed) {
  std::vector<Vec> pts;
  pts.push_back(Vec::Zero(k));
  for (int j = 0; j < k; ++j) {
    Vec e = Vec::Zero(k);
    e(j) = 1.0;
    pts.push_back(e);
    pts.push_back(-e);
  }
  Prng prng(seed, stream_id(kStreamScratch, 0xC10D));
  while (int(pts.size()) < count) {
    Vec v(k);
    for (int j = 0; j < k; ++j) v(j) = prng.normal();
    const double nrm = v.norm();
    if (nrm < kTiny) continue;
    v /= nrm;
    pts.push_back(v);                                  // boundary
    if (int(pts.size()) < count)
      pts.push_back(v * std::pow(prng.uniform(), 1.0 / k));  // interior
  }
  return pts;
}

double bilinear_sup(const Mat& H) {
  return H.size() ? H.jacobiSvd().singularValues()(0) : 0.0;
}

}  // namespace

ChartConstants push_constants(const ChartConstants& c, double eps, int steps) {
  ChartConstants out = c;
  out.alpha *= std::exp(-5.0 * eps * steps);
  out.beta *= std::exp(7.0 * eps * steps);
  out.gamma *= std::exp(2.0 * eps * steps);
  return out;
}

Vec ManifoldChart::eval(const Vec& xi) const {
  return poly_eval(monomials, coeffs, xi, int(H.cols()));
}

Mat ManifoldChart::d_eval(const Vec& xi) const {
  return poly_jacobian(monomials, coeffs, xi, int(H.cols()));
}

Vec ManifoldChart::point(const Vec& xi) const {
  Vec p = center + E * xi;
  if (H.cols()) p += H * eval(xi);
  return p;
}

double chart_distance(const ManifoldChart& chart, const Vec& xi1,
                      const Vec& xi2) {
  const double sep = (xi1 - xi2).norm();
  // Curvature certificate: small Lip(Dh) over the separation means the chord
  // tracks arc length to second order.
  if (chart.lip_dh * sep <= 0.1)
    return (chart.point(xi1) - chart.point(xi2)).norm();
  const int segs = 64;
  double len = 0.0;
  Vec prev = chart.point(xi1);
  for (int i = 1; i <= segs; ++i) {
    const double t = double(i) / segs;
    const Vec cur = chart.point(xi1 + t * (xi2 - xi1));
    len += (cur - prev).norm();
    prev = cur;
  }
  return len;
}

namespace {

struct ChartFitContext {
  const DiffeoFamily& family;
  const CocycleData& data;
  const PesinParams& p;
  int level;
};

// Candidate points near the orbit level that should lie on the stable leaf.
std::vector<Vec> shoot_candidates(const ChartFitContext& ctx, double radius,
                                  const ChartOptions& opts) {
  const CocycleData& data = ctx.data;
  const int n = ctx.level;
  const int k = data.k;
  const Vec& xn = data.traj[std::size_t(n)];
  std::vector<Vec> dirs = ball_cloud(k, std::max(8, opts.samples / 2),
                                     opts.seed ^ 0xD1E5ULL);
  // Keep only unit directions (drop interior points and the origin).
  std::vector<Vec> units;
  for (const Vec& v : dirs)
    if (std::abs(v.norm() - 1.0) < 1e-9) units.push_back(v);

  std::vector<Vec> out;
  if (ctx.family.has_inverse()) {
    // Perturb along the pushed-forward stable directions at a deep level and
    // pull back: transverse error contracts backward, so candidates converge
    // onto the leaf exponentially in the shooting depth.
    const int D = std::min(n + opts.back_depth, data.horizon());
    const Vec& xD = data.traj[std::size_t(D)];
    const Mat& ED = data.E[std::size_t(D)];
    auto pull = [&](const Vec& z) {
      Vec y = z;
      for (int j = D - 1; j >= n; --j) {
        y = ctx.family.inverse(data.omega.theta[std::size_t(j)], y);
        if (!y.allFinite() || y.norm() > kDivergenceGuard)
          throw divergence_error("backward shooting diverged");
      }
      return y;
    };
    for (int i = 0; i < opts.samples; ++i) {
      const Vec& u = units[std::size_t(i) % units.size()];
      const double target = radius * double(i % opts.samples + 1) /
                            double(opts.samples);
      // Calibrate the backward gain with a tiny probe in the same direction.
      const double probe = 1e-9;
      double gain = 1.0;
      try {
        const Vec yp = pull(xD + ED * (probe * u));
        const double dp = (yp - xn).norm();
        if (dp > kTiny) gain = dp / probe;
      } catch (const divergence_error&) {
        continue;
      }
      const double s = target / std::max(gain, kTiny);
      try {
        out.push_back(pull(xD + ED * (s * u)));
      } catch (const divergence_error&) {
      }
    }
  } else if (k == int(xn.size())) {
    // Everything contracts below the window: any nearby point is on the leaf.
    const auto cloud = ball_cloud(k, opts.samples + 1, opts.seed ^ 0xBA11ULL);
    for (std::size_t i = 1; i < cloud.size(); ++i)
      out.push_back(xn + radius * cloud[i]);
  } else {
    // No inverse available: shoot by Newton on the unstable coordinate at a
    // moderate depth, correcting an H-offset until the forward image returns
    // to the orbit's unstable fiber.
    const int L = std::min({opts.back_depth, data.horizon() - n, 14});
    const Mat& BL = data.H[std::size_t(n + L)];
    const Mat& Hn = data.H[std::size_t(n)];
    auto forward = [&](Vec y, Mat* Jout) {
      Mat J = Mat::Identity(int(y.size()), int(y.size()));
      for (int j = 0; j < L; ++j) {
        const Vec& th = data.omega.theta[std::size_t(n + j)];
        if (Jout) J = ctx.family.jacobian(th, y) * J;
        y = ctx.family.eval(th, y);
        if (!y.allFinite() || y.norm() > kDivergenceGuard)
          throw divergence_error("newton shooting diverged");
      }
      if (Jout) *Jout = J;
      return y;
    };
    const Vec& xL = data.traj[std::size_t(n + L)];
    for (int i = 0; i < opts.samples; ++i) {
      const Vec& u = units[std::size_t(i) % units.size()];
      const double target =
          radius * double(i % opts.samples + 1) / double(opts.samples);
      Vec base = xn + data.E[std::size_t(n)] * (target * u);
      Vec delta = Vec::Zero(int(Hn.cols()));
      bool ok = false;
      try {
        for (int it = 0; it < 40; ++it) {
          Mat J;
          const Vec img = forward(base + Hn * delta, &J);
          const Vec G = BL.transpose() * (img - xL);
          if (G.norm() <= 1e-12 * (1.0 + xL.norm())) {
            ok = true;
            break;
          }
          const Mat JG = BL.transpose() * J * Hn;
          delta -= JG.colPivHouseholderQr().solve(G);
        }
      } catch (const divergence_error&) {
        ok = false;
      }
      if (ok) out.push_back(base + Hn * delta);
    }
  }
  return out;
}

}  // namespace

ManifoldChart fit_local_chart(const DiffeoFamily& family,
                              const CocycleData& data, const PesinParams& p,
                              int degree, ChartOptions opts) {
  const int d = family.dim();
  {
    const auto bad = validate_params(p, d);
    if (!bad.empty()) throw config_error("invalid parameters: " + bad.front());
  }
  if (degree < 1) throw config_error("chart degree must be >= 1");
  const int n = opts.level;
  if (n < 0 || n + opts.test_horizon > data.horizon())
    throw config_error(
        "cocycle horizon too short for the requested level and test length");
  const int k = data.k;
  if (k == 0)
    throw config_error("no stable directions below the window; nothing to chart");
  const int kc = d - k;

  if (opts.check_membership) {
    const LEstimate le = estimate_l(data, p);
    if (le.l0 > p.l_cap)
      throw config_error("point fails membership: growth constant " +
                         std::to_string(le.l0) + " exceeds cap");
    if (family.has_hessian()) {
      const REstimate re =
          estimate_r(family, data, p.eps, data.horizon(),
                     /*forward_only=*/!family.has_inverse_hessian());
      if (re.r > p.r_cap)
        throw config_error("point fails membership: derivative constant " +
                           std::to_string(re.r) + " exceeds cap");
    }
  }

  // Certified domain radius from the construction constants.
  const double A =
      4.0 * p.l_cap * p.l_cap / std::sqrt(1.0 - std::exp(-2.0 * p.eps));
  const double eps0 =
      std::exp(p.a + 4.0 * p.eps) - std::exp(p.a + 2.0 * p.eps);
  const double c0 = 4.0 * A * p.r_cap * std::exp(2.0 * p.eps);
  const double r0 = eps0 / c0;
  const double alpha = (r0 / A) * std::exp(-5.0 * p.eps * n);
  const double radius = opts.fit_radius > 0.0 ? opts.fit_radius : alpha;

  // Candidates, then the finite-horizon contraction filter against the
  // center orbit.
  const std::vector<Vec> cand = shoot_candidates({family, data, p, n}, radius,
                                                 opts);
  const Vec& xn = data.traj[std::size_t(n)];
  const double rate = p.a + 4.0 * p.eps;
  std::vector<Vec> accepted;
  double gamma = 0.0;
  for (const Vec& y0 : cand) {
    const double d0 = (y0 - xn).norm();
    if (d0 < 1e-15 || d0 > 1.25 * radius) continue;
    Vec y = y0;
    bool ok = true;
    double worst = 0.0;
    for (int l = 1; l <= opts.test_horizon; ++l) {
      y = family.eval(data.omega.theta[std::size_t(n + l - 1)], y);
      if (!y.allFinite() || y.norm() > kDivergenceGuard) {
        ok = false;
        break;
      }
      const double ratio =
          (y - data.traj[std::size_t(n + l)]).norm() / d0 * std::exp(-rate * l);
      worst = std::max(worst, ratio);
      if (ratio > opts.accept_cap) {
        ok = false;
        break;
      }
    }
    if (ok) {
      accepted.push_back(y0);
      gamma = std::max(gamma, worst);
    }
  }

  const auto monos = monomial_exponents(k, 1, degree);
  const int ncoef = int(monos.size());
  const int need = std::max(opts.min_accepted, kc > 0 ? ncoef + 2 : 1);
  if (int(accepted.size()) < need)
    throw divergence_error(
        "sparse acceptance: only " + std::to_string(accepted.size()) +
        " of " + std::to_string(cand.size()) + " candidates passed (need " +
        std::to_string(need) + ")");

  ManifoldChart chart;
  chart.level = n;
  chart.center = xn;
  chart.E = data.E[std::size_t(n)];
  chart.H = data.H[std::size_t(n)];
  chart.degree = degree;
  chart.monomials = monos;
  chart.fit_radius = radius;
  chart.accepted = int(accepted.size());

  // Regress the unstable coordinates on scaled stable coordinates; no
  // constant column, so the graph passes through the center exactly.
  if (kc > 0) {
    const int M = int(accepted.size());
    Mat X(M, ncoef);
    Mat Y(M, kc);
    for (int i = 0; i < M; ++i) {
      Vec xi, eta;
      data.split(n, accepted[std::size_t(i)] - xn, xi, eta);
      const Vec t = xi / radius;
      for (int r = 0; r < ncoef; ++r)
        X(i, r) = mono_eval(monos[std::size_t(r)], t);
      Y.row(i) = eta.transpose();
    }
    Mat chat = X.colPivHouseholderQr().solve(Y);
    for (int r = 0; r < ncoef; ++r) {
      int deg = 0;
      for (int e : monos[std::size_t(r)]) deg += e;
      chat.row(r) /= std::pow(radius, deg);
    }
    chart.coeffs = chat;
    double res = 0.0;
    for (int i = 0; i < M; ++i) {
      Vec xi, eta;
      data.split(n, accepted[std::size_t(i)] - xn, xi, eta);
      res = std::max(res, (eta - chart.eval(xi)).norm());
    }
    chart.residual = res;
  } else {
    chart.coeffs = Mat::Zero(ncoef, 0);
  }

  // Lipschitz certificates over the fitted region.
  const auto grid = ball_cloud(k, 129, opts.seed ^ 0x9C1DULL);
  double lip_h = 0.0, lip_dh = 0.0;
  for (const Vec& g : grid) {
    const Vec xi = radius * g;
    lip_h = std::max(lip_h, bilinear_sup(chart.d_eval(xi)));
    for (int i = 0; i < kc; ++i)
      lip_dh = std::max(lip_dh,
                        bilinear_sup(poly_hessian(monos, chart.coeffs, xi, i)));
  }
  chart.lip_h = lip_h;
  chart.lip_dh = lip_dh;
  chart.tangent_norm = bilinear_sup(chart.d_eval(Vec::Zero(k)));
  const double beta = std::max(lip_h, lip_dh);
  if (beta > opts.beta_cap)
    throw divergence_error("chart certification failed: Lipschitz estimate " +
                           std::to_string(beta) + " exceeds the budget");
  chart.constants = {alpha, beta, gamma};
  return chart;
}

ManifoldChart fit_local_chart(const DiffeoFamily& family,
                              const OmegaPrefix& omega, const Vec& x,
                              const PesinParams& p, int degree, int samples,
                              ChartOptions opts) {
  opts.samples = samples;
  const int N = opts.level + std::max(opts.back_depth, opts.test_horizon) + 2;
  const CocycleData data = CocycleData::build(family, omega, x, N, p.a);
  return fit_local_chart(family, data, p, degree, opts);
}

nlohmann::json chart_to_json(const ManifoldChart& chart) {
  nlohmann::json j;
  j["level"] = chart.level;
  j["center"] = std::vector<double>(chart.center.data(),
                                    chart.center.data() + chart.center.size());
  auto mat_rows = [](const Mat& M) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      rows.emplace_back();
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        rows.back().push_back(M(i, c));
    }
    return rows;
  };
  j["E"] = mat_rows(chart.E);
  j["H"] = mat_rows(chart.H);
  j["coeffs"] = mat_rows(chart.coeffs);
  j["monomials"] = chart.monomials;
  j["alpha"] = chart.constants.alpha;
  j["beta"] = chart.constants.beta;
  j["gamma"] = chart.constants.gamma;
  j["fit_radius"] = chart.fit_radius;
  j["residual"] = chart.residual;
  j["tangent_norm"] = chart.tangent_norm;
  j["accepted"] = chart.accepted;
  return j;
}

MembershipResult global_membership(const DiffeoFamily& family,
                                   const OmegaPrefix& omega, const Vec& x,
                                   const Vec& y, int N, double cutoff) {
  if (!(cutoff < 0.0)) throw config_error("membership cutoff must be negative");
  if (N < 4) throw config_error("membership horizon too short");
  if (omega.length() < N)
    throw config_error("noise prefix shorter than requested horizon");

  MembershipResult out;
  std::vector<double> logd;
  logd.reserve(std::size_t(N) + 1);
  Vec xc = x, yc = y;
  for (int l = 0; l <= N; ++l) {
    const double dist = (xc - yc).norm();
    if (dist == 0.0) {
      out.member = true;
      out.degenerate = true;
      out.rate = -std::numeric_limits<double>::infinity();
      return out;
    }
    logd.push_back(std::log(dist));
    if (l == N) break;
    const Vec& th = omega.theta[std::size_t(l)];
    xc = family.eval(th, xc);
    yc = family.eval(th, yc);
    if (!xc.allFinite() || !yc.allFinite() || xc.norm() > kDivergenceGuard ||
        yc.norm() > kDivergenceGuard) {
      out.member = false;
      out.diverged = true;
      out.rate = std::numeric_limits<double>::quiet_NaN();
      return out;
    }
  }

  // Trailing-window regression of log distance on step index.
  const int lo = N / 2;
  std::vector<double> xs, ys;
  for (int l = lo; l <= N; ++l) {
    xs.push_back(double(l));
    ys.push_back(logd[std::size_t(l)]);
  }
  out.rate = fit_slope(xs, ys).slope;
  out.member = out.rate < cutoff;
  return out;
}

TransversalDisc TransversalDisc::affine(const Vec& q, const Mat& E,
                                        const Mat& H, double radius) {
  TransversalDisc disc;
  disc.q = q;
  disc.E = E;
  disc.H = H;
  disc.radius = radius;
  disc.coeffs = Mat::Zero(0, E.cols());
  return disc;
}

Vec TransversalDisc::eval(const Vec& u) const {
  if (!monomials.empty()) return poly_eval(monomials, coeffs, u, int(E.cols()));
  return Vec::Zero(E.cols());
}

Mat TransversalDisc::d_eval(const Vec& u) const {
  if (!monomials.empty())
    return poly_jacobian(monomials, coeffs, u, int(E.cols()));
  return Mat::Zero(E.cols(), H.cols());
}

Vec TransversalDisc::point(const Vec& u) const {
  return q + H * u + E * eval(u);
}

double TransversalDisc::norm(const LyapunovMetric* metric) const {
  const int kc = int(H.cols());
  if (kc == 0) return 0.0;
  const auto grid = ball_cloud(kc, 65, 0x415CULL);
  double sup_psi = 0.0, sup_dpsi = 0.0;
  for (const Vec& g : grid) {
    const Vec u = radius * g;
    const Vec psi = eval(u);
    const Mat dpsi = d_eval(u);
    if (metric) {
      sup_psi = std::max(sup_psi, lyapunov_norm(*metric, E * psi).value);
      for (int j = 0; j < kc; ++j)
        sup_dpsi =
            std::max(sup_dpsi, lyapunov_norm(*metric, E * dpsi.col(j)).value);
    } else {
      sup_psi = std::max(sup_psi, psi.norm());
      sup_dpsi = std::max(sup_dpsi, bilinear_sup(dpsi));
    }
  }
  return sup_psi + sup_dpsi;
}

namespace {

// Gaussian-product kernel density with per-coordinate Silverman bandwidths.
struct Kde {
  Mat pts;  // one row per sample
  Vec bw;

  static Kde fit(const Mat& pts) {
    Kde k;
    k.pts = pts;
    const int M = int(pts.rows());
    const int dd = int(pts.cols());
    k.bw = Vec(dd);
    const double factor =
        std::pow(4.0 / (double(dd) + 2.0) / double(M), 1.0 / (double(dd) + 4.0));
    for (int j = 0; j < dd; ++j) {
      const double mean = pts.col(j).mean();
      const double var =
          (pts.col(j).array() - mean).square().sum() / std::max(1, M - 1);
      k.bw(j) = std::max(std::sqrt(var) * factor, 1e-8);
    }
    return k;
  }

  double density(const Vec& u) const {
    const int M = int(pts.rows());
    const int dd = int(pts.cols());
    double acc = 0.0;
    for (int i = 0; i < M; ++i) {
      double e = 0.0;
      for (int j = 0; j < dd; ++j) {
        const double z = (u(j) - pts(i, j)) / bw(j);
        e += z * z;
      }
      acc += std::exp(-0.5 * e);
    }
    double norm = double(M);
    for (int j = 0; j < dd; ++j) norm *= bw(j) * std::sqrt(2.0 * M_PI);
    return acc / norm;
  }
};

// Damped Newton for chart-disc intersection in (xi, u) coordinates.
bool intersect_chart_disc(const ManifoldChart& chart,
                          const TransversalDisc& disc, double tol, int iters,
                          Vec& xi, Vec& u) {
  const int d = int(chart.center.size());
  const int k = int(chart.E.cols());
  const int kc = d - k;
  Mat B(d, d);
  B.leftCols(k) = chart.E;
  B.rightCols(kc) = -disc.H;
  Vec init = B.colPivHouseholderQr().solve(disc.q - chart.center);
  xi = init.head(k);
  u = init.tail(kc);

  auto residual = [&](const Vec& xv, const Vec& uv) {
    return Vec(chart.point(xv) - disc.point(uv));
  };
  Vec R = residual(xi, u);
  for (int it = 0; it < iters; ++it) {
    if (R.lpNorm<Eigen::Infinity>() <= tol) return true;
    Mat J(d, d);
    J.leftCols(k) = chart.E + chart.H * chart.d_eval(xi);
    J.rightCols(kc) = -(disc.H + disc.E * disc.d_eval(u));
    const Vec step = J.colPivHouseholderQr().solve(-R);
    double lam = 1.0;
    bool improved = false;
    for (int h = 0; h < 25; ++h) {
      const Vec xin = xi + lam * step.head(k);
      const Vec un = u + lam * step.tail(kc);
      const Vec Rn = residual(xin, un);
      if (Rn.norm() <= (1.0 - 0.25 * lam) * R.norm() || Rn.norm() < tol) {
        xi = xin;
        u = un;
        R = Rn;
        improved = true;
        break;
      }
      lam *= 0.5;
    }
    if (!improved) return false;
  }
  return R.lpNorm<Eigen::Infinity>() <= tol;
}

}  // namespace

double HolonomyResult::fraction_in(double lo, double hi) const {
  if (jacobian.empty()) return 0.0;
  int in = 0;
  for (double j : jacobian)
    if (j >= lo && j <= hi) ++in;
  return double(in) / double(jacobian.size());
}

HolonomyResult holonomy(const DiffeoFamily& family, const OmegaPrefix& omega,
                        const Vec& x, const TransversalDisc& W1,
                        const TransversalDisc& W2, const PesinParams& p,
                        HolonomyOptions opts) {
  const int d = family.dim();
  if (W1.H.cols() == 0 || W2.H.cols() == 0)
    throw config_error("holonomy requires unstable directions");
  for (const TransversalDisc* W : {&W1, &W2}) {
    const double nrm = W->norm();
    if (nrm > opts.norm_cap)
      throw config_error("transversal disc norm " + std::to_string(nrm) +
                         " exceeds the cap");
    if ((W->q - x).norm() + W->radius * (1.0 + nrm) > opts.q_radius)
      throw config_error("transversal disc leaves the holonomy ball");
  }

  ChartOptions copt = opts.chart;
  if (copt.fit_radius <= 0.0)
    copt.fit_radius = 1.5 * (opts.q_radius + opts.seed_radius);
  const int N = copt.level + std::max(copt.back_depth, copt.test_horizon) + 2;

  const auto seeds = ball_cloud(d, opts.chains + 1, opts.seed ^ 0x5EEDULL);

  std::vector<Vec> u1s, u2s, p1s, p2s;
  int dropped = 0;
  for (int c = 0; c < opts.chains; ++c) {
    const Vec z = x + opts.seed_radius * seeds[std::size_t(c + 1)];
    copt.seed = opts.seed + std::uint64_t(c) * 1000003ULL;
    ManifoldChart chart;
    try {
      const CocycleData data = CocycleData::build(family, omega, z, N, p.a);
      chart = fit_local_chart(family, data, p, opts.chart_degree, copt);
    } catch (const divergence_error&) {
      ++dropped;
      continue;
    }
    Vec xi1, u1, xi2, u2;
    const bool ok1 = intersect_chart_disc(chart, W1, opts.newton_tol,
                                          opts.newton_iters, xi1, u1);
    const bool ok2 = intersect_chart_disc(chart, W2, opts.newton_tol,
                                          opts.newton_iters, xi2, u2);
    const double span = 1.05 * chart.fit_radius;
    if (!ok1 || !ok2 || xi1.norm() > span || xi2.norm() > span ||
        u1.norm() > W1.radius * (1.0 + 1e-9) ||
        u2.norm() > W2.radius * (1.0 + 1e-9)) {
      ++dropped;
      continue;
    }
    u1s.push_back(u1);
    u2s.push_back(u2);
    p1s.push_back(chart.point(xi1));
    p2s.push_back(chart.point(xi2));
  }

  HolonomyResult out;
  out.chains = opts.chains;
  out.dropped = dropped;
  out.drop_rate = double(dropped) / std::max(1, opts.chains);
  if (out.drop_rate > opts.drop_cap)
    throw divergence_error("holonomy geometry: " + std::to_string(dropped) +
                           " of " + std::to_string(opts.chains) +
                           " chains dropped");

  const int M = int(u1s.size());
  const int kc = int(W1.H.cols());
  out.u1 = Mat(M, kc);
  out.u2 = Mat(M, kc);
  out.p1 = Mat(M, d);
  out.p2 = Mat(M, d);
  for (int i = 0; i < M; ++i) {
    out.u1.row(i) = u1s[std::size_t(i)].transpose();
    out.u2.row(i) = u2s[std::size_t(i)].transpose();
    out.p1.row(i) = p1s[std::size_t(i)].transpose();
    out.p2.row(i) = p2s[std::size_t(i)].transpose();
  }

  // Jacobian of the induced map by density transport: the chain seeds give
  // one cloud on each disc; the pointwise density ratio estimates |det D|.
  const Kde k1 = Kde::fit(out.u1);
  const Kde k2 = Kde::fit(out.u2);
  out.jacobian.reserve(std::size_t(M));
  for (int i = 0; i < M; ++i) {
    const double rho1 = k1.density(out.u1.row(i).transpose());
    const double rho2 = k2.density(out.u2.row(i).transpose());
    out.jacobian.push_back(rho1 / std::max(rho2, kTiny));
  }
  return out;
}

}  // namespace pesin
