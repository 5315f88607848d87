#include "pesin/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pesin/errors.hpp"

namespace pesin {

namespace {

void guard_state(const Vec& x, int substep) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceGuard)
    throw divergence_error("flow state left the guard box at substep " +
                           std::to_string(substep));
}

Vec encode_segment_id(std::uint64_t id) {
  Vec t(2);
  t[0] = double(id & 0xFFFFFFFFull);
  t[1] = double(id >> 32);
  return t;
}

std::uint64_t decode_segment_id(const Vec& theta) {
  if (theta.size() != 2 || !theta.allFinite() || theta[0] < 0.0 ||
      theta[1] < 0.0 || theta[0] >= 4294967296.0 || theta[1] >= 4294967296.0)
    throw config_error("flow family: malformed segment-key parameter record");
  return std::uint64_t(theta[0]) | (std::uint64_t(theta[1]) << 32);
}

// All multi-indices over d axes with |alpha| = order (order 1 or 2), encoded
// as the list of differentiated axes.
std::vector<std::vector<int>> multi_indices(int d, int order) {
  std::vector<std::vector<int>> out;
  if (order == 1) {
    for (int k = 0; k < d; ++k) out.push_back({k});
  } else if (order == 2) {
    for (int k = 0; k < d; ++k)
      for (int l = k; l < d; ++l) out.push_back({k, l});
  }
  return out;
}

double spectral_norm(const Mat& A) {
  if (A.size() == 0) return 0.0;
  return A.jacobiSvd().singularValues()[0];
}

}  // namespace

Tensor3 SdeFlowModel::drift_hessian(const Vec&) const {
  throw capability_error("flow model provides no drift second derivatives");
}

std::vector<Tensor3> SdeFlowModel::sigma_hessian(const Vec&) const {
  throw capability_error("flow model provides no diffusion second derivatives");
}

NoiseSegment NoiseSegment::draw(int noise_dim, double horizon, int substeps,
                                std::uint64_t seed, std::uint64_t id) {
  if (substeps < 1) throw config_error("noise segment: substeps >= 1 required");
  if (!(horizon > 0.0)) throw config_error("noise segment: horizon > 0 required");
  NoiseSegment seg;
  seg.horizon = horizon;
  seg.substeps = substeps;
  seg.seed = seed;
  seg.id = id;
  seg.dW.resize(noise_dim, substeps);
  Prng prng(seed, stream_id(kStreamNoise, id));
  const double sd = std::sqrt(horizon / double(substeps));
  for (int j = 0; j < substeps; ++j)
    for (int c = 0; c < noise_dim; ++c) seg.dW(c, j) = sd * prng.normal();
  return seg;
}

NoiseSegment NoiseSegment::reversed_negated() const {
  NoiseSegment out = *this;
  out.dW = -dW.rowwise().reverse();
  return out;
}

NoiseSegment NoiseSegment::concat(const NoiseSegment& tail) const {
  if (tail.dW.rows() != dW.rows())
    throw config_error("noise segment concat: noise dimensions differ");
  if (std::abs(h() - tail.h()) > 1e-15 * std::max(h(), tail.h()))
    throw config_error("noise segment concat: substep sizes differ");
  NoiseSegment out;
  out.horizon = horizon + tail.horizon;
  out.substeps = substeps + tail.substeps;
  out.seed = seed;
  out.id = id;
  out.dW.resize(dW.rows(), out.substeps);
  out.dW << dW, tail.dW;
  return out;
}

FlowStep integrate_flow(const SdeFlowModel& model, const Vec& x0,
                        const NoiseSegment& seg, int order, int deriv_level) {
  const int d = model.dim();
  const int m = model.noise_dim();
  if (seg.dW.rows() != m)
    throw config_error("integrate_flow: segment noise dimension mismatch");
  if (order != 1 && order != 2)
    throw config_error("integrate_flow: order must be 1 or 2");
  if (order == 2 && !model.diagonal_noise())
    throw capability_error(
        "Milstein scheme needs diagonal or scalar noise (iterated integrals "
        "not simulated)");
  if (order == 2 && deriv_level >= 1 && !model.has_second_order())
    throw capability_error(
        "Milstein variational equation needs diffusion second derivatives");
  if (deriv_level >= 2 && !model.has_second_order())
    throw capability_error("flow Hessian needs model second derivatives");

  const int K = seg.substeps;
  const double h = seg.h();

  Vec x = x0;
  guard_state(x, 0);
  Mat D = Mat::Identity(d, d);
  Tensor3 Hf(std::size_t(d), Mat::Zero(d, d));

  for (int j = 0; j < K; ++j) {
    const Vec dw = seg.dW.col(j);
    const Vec b = model.drift(x);
    const Mat s = model.sigma(x);

    std::vector<Mat> sj;
    if (deriv_level >= 1 || order == 2) sj = model.sigma_jacobian(x);
    std::vector<Tensor3> sH;
    if (deriv_level >= 2 || (order == 2 && deriv_level >= 1))
      sH = model.sigma_hessian(x);

    Vec xn = x + h * b + s * dw;
    if (order == 2) {
      for (int c = 0; c < m; ++c) {
        const Vec g = sj[std::size_t(c)] * s.col(c);
        xn += 0.5 * (dw[c] * dw[c] - h) * g;
      }
    }

    Mat A;
    if (deriv_level >= 1) {
      A = Mat::Identity(d, d) + h * model.drift_jacobian(x);
      for (int c = 0; c < m; ++c) A += dw[c] * sj[std::size_t(c)];
      if (order == 2) {
        for (int c = 0; c < m; ++c) {
          // Dg = (D2 sigma . sigma) + Dsigma Dsigma for column c.
          Mat Dg = sj[std::size_t(c)] * sj[std::size_t(c)];
          for (int i = 0; i < d; ++i)
            Dg.row(i) += (s.col(c).transpose() * sH[std::size_t(c)][std::size_t(i)]);
          A += 0.5 * (dw[c] * dw[c] - h) * Dg;
        }
      }
    }

    if (deriv_level >= 2) {
      const Tensor3 bH = model.drift_hessian(x);
      Tensor3 Hn{std::size_t(d)};
      for (int i = 0; i < d; ++i) {
        // Step-map Hessian component i at x.
        Mat Ti = h * bH[std::size_t(i)];
        for (int c = 0; c < m; ++c) Ti += dw[c] * sH[std::size_t(c)][std::size_t(i)];
        if (order == 2) {
          for (int c = 0; c < m; ++c) {
            // Second derivative of the Milstein correction; the D3-sigma
            // term is omitted (exact whenever sigma is at most quadratic,
            // which covers every built-in model).
            Mat D2g = Mat::Zero(d, d);
            for (int l = 0; l < d; ++l) {
              const Mat& Hl = sH[std::size_t(c)][std::size_t(l)];
              D2g += sH[std::size_t(c)][std::size_t(i)].col(l) *
                         sj[std::size_t(c)].row(l) +
                     sj[std::size_t(c)].row(l).transpose() *
                         sH[std::size_t(c)][std::size_t(i)].col(l).transpose() +
                     sj[std::size_t(c)](i, l) * Hl;
            }
            Ti += 0.5 * (dw[c] * dw[c] - h) * D2g;
          }
        }
        Mat acc = D.transpose() * Ti * D;
        for (int l = 0; l < d; ++l) acc += A(i, l) * Hf[std::size_t(l)];
        Hn[std::size_t(i)] = std::move(acc);
      }
      Hf = std::move(Hn);
    }

    if (deriv_level >= 1) D = A * D;
    x = std::move(xn);
    guard_state(x, j + 1);
  }

  FlowStep out;
  out.y = std::move(x);
  if (deriv_level >= 1) out.jacobian = std::move(D);
  if (deriv_level >= 2) out.hessian = std::move(Hf);
  out.deriv_level = deriv_level;
  out.step_size = h;
  out.order = order;
  return out;
}

Vec correction_term(const SdeFlowModel& model, const Vec& x) {
  const Mat s = model.sigma(x);
  const std::vector<Mat> sj = model.sigma_jacobian(x);
  Vec c = Vec::Zero(model.dim());
  for (int j = 0; j < model.noise_dim(); ++j)
    c += sj[std::size_t(j)] * s.col(j);
  return c;
}

CharNorms characteristic_norms(const SdeFlowModel& model, const Vec& center,
                               double radius, int m_order, double delta,
                               int grid) {
  const int d = model.dim();
  if (grid < 8) throw config_error("characteristic_norms: grid >= 8 per axis");
  if (!(delta > 0.0 && delta <= 1.0))
    throw config_error("characteristic_norms: delta in (0, 1]");
  if (m_order < 0 || m_order > 2)
    throw capability_error("characteristic_norms: derivative order beyond 2");
  double total = std::pow(double(grid), d);
  if (total > 65536.0)
    throw config_error("characteristic_norms: grid too large for dimension");

  // Tensor grid over the box, plus the exact center (weighted sups often
  // peak there).
  std::vector<Vec> pts;
  const int npts = int(total);
  for (int idx = 0; idx < npts; ++idx) {
    Vec p(d);
    int rem = idx;
    for (int ax = 0; ax < d; ++ax) {
      const int i = rem % grid;
      rem /= grid;
      p[ax] = center[ax] + radius * (-1.0 + 2.0 * double(i) / double(grid - 1));
    }
    pts.push_back(std::move(p));
  }
  pts.push_back(center);
  const int N = int(pts.size());

  // alpha-derivatives of b and of sigma at every point, |alpha| <= m_order.
  // sigma-derivative norms give the a-norms: for any family A(x) appearing
  // in both slots of a product A(x) A(y)^T, the pair-sup equals the square
  // of the single-point sup of ||A||_2.
  CharNorms out;
  out.box_radius = radius;
  out.grid = grid;

  double b_weighted = 0.0, s_weighted = 0.0;
  for (const Vec& p : pts) {
    b_weighted = std::max(b_weighted,
                          model.drift(p).norm() / (1.0 + p.norm()));
    s_weighted = std::max(s_weighted,
                          spectral_norm(model.sigma(p)) / (1.0 + p.norm()));
  }
  out.b_norm = b_weighted;
  out.a_norm = s_weighted * s_weighted;

  // Derivative records at |alpha| = m_order for the Hölder sweep.
  std::vector<std::vector<Vec>> top_b{std::size_t(N)};
  std::vector<std::vector<Mat>> top_s{std::size_t(N)};

  for (int order = 1; order <= m_order; ++order) {
    const auto alphas = multi_indices(d, order);
    double b_sup = 0.0, s_sup = 0.0;
    for (int pi = 0; pi < N; ++pi) {
      const Vec& p = pts[std::size_t(pi)];
      Mat bj;
      Tensor3 bh;
      std::vector<Mat> sjac;
      std::vector<Tensor3> shes;
      if (order == 1) {
        bj = model.drift_jacobian(p);
        sjac = model.sigma_jacobian(p);
      } else {
        bh = model.drift_hessian(p);
        shes = model.sigma_hessian(p);
      }
      for (const auto& alpha : alphas) {
        Vec db(d);
        Mat ds(d, model.noise_dim());
        if (order == 1) {
          db = bj.col(alpha[0]);
          for (int c = 0; c < model.noise_dim(); ++c)
            ds.col(c) = sjac[std::size_t(c)].col(alpha[0]);
        } else {
          for (int i = 0; i < d; ++i) db[i] = bh[std::size_t(i)](alpha[0], alpha[1]);
          for (int c = 0; c < model.noise_dim(); ++c)
            for (int i = 0; i < d; ++i)
              ds(i, c) = shes[std::size_t(c)][std::size_t(i)](alpha[0], alpha[1]);
        }
        b_sup = std::max(b_sup, db.norm());
        s_sup = std::max(s_sup, spectral_norm(ds));
        if (order == m_order) {
          top_b[std::size_t(pi)].push_back(db);
          top_s[std::size_t(pi)].push_back(ds);
        }
      }
    }
    out.b_norm += b_sup;
    out.a_norm += s_sup * s_sup;
  }

  if (m_order == 0) {
    // Hölder terms quotient the characteristics themselves.
    for (int pi = 0; pi < N; ++pi) {
      top_b[std::size_t(pi)].push_back(model.drift(pts[std::size_t(pi)]));
      top_s[std::size_t(pi)].push_back(model.sigma(pts[std::size_t(pi)]));
    }
  }

  // Hölder quotients over a subsampled pair sweep.
  const int stride = std::max(1, N / 512);
  double b_holder = 0.0, s_holder = 0.0;
  for (int i = 0; i < N; i += stride) {
    for (int j = i + stride; j < N; j += stride) {
      const double dist = (pts[std::size_t(i)] - pts[std::size_t(j)]).norm();
      if (dist < 1e-12) continue;
      const double w = std::pow(dist, delta);
      for (std::size_t t = 0; t < top_b[std::size_t(i)].size(); ++t) {
        b_holder = std::max(
            b_holder,
            (top_b[std::size_t(i)][t] - top_b[std::size_t(j)][t]).norm() / w);
        s_holder = std::max(
            s_holder,
            spectral_norm(top_s[std::size_t(i)][t] - top_s[std::size_t(j)][t]) / w);
      }
    }
  }
  out.b_norm += b_holder;
  out.a_norm += s_holder * s_holder;
  return out;
}

DiscretizedFlowFamily::DiscretizedFlowFamily(
    std::shared_ptr<const SdeFlowModel> model, double horizon, int substeps,
    int order)
    : model_(std::move(model)), horizon_(horizon), substeps_(substeps),
      order_(order) {
  if (!model_) throw config_error("flow family: null model");
  if (substeps_ < 1) throw config_error("flow family: substeps >= 1 required");
  if (!(horizon_ > 0.0)) throw config_error("flow family: horizon > 0 required");
  if (order_ != 1 && order_ != 2)
    throw config_error("flow family: order must be 1 or 2");

  // Inverse-consistency probe on a few points; failures flag, never throw.
  const int d = model_->dim();
  std::vector<Vec> probes = {Vec::Zero(d), Vec::Constant(d, 0.5),
                             Vec::Constant(d, -0.5)};
  for (std::uint64_t pid = 1; pid <= 3; ++pid) {
    const Vec theta = encode_segment_id(0xFEED0000ull + pid);
    for (const Vec& p : probes) {
      try {
        const Vec y = eval(theta, p);
        const Vec back = inverse(theta, y);
        probe_residual_ =
            std::max(probe_residual_, (back - p).cwiseAbs().maxCoeff());
      } catch (const divergence_error&) {
        probe_residual_ = std::max(probe_residual_, 1.0);
      }
    }
  }
}

DiscretizedFlowFamily discretize(std::shared_ptr<const SdeFlowModel> model,
                                 double horizon, int substeps, int order) {
  return DiscretizedFlowFamily(std::move(model), horizon, substeps, order);
}

Vec DiscretizedFlowFamily::sample_param(Prng& prng) const {
  return encode_segment_id(prng.next_u64());
}

NoiseSegment DiscretizedFlowFamily::segment_for(const Vec& theta) const {
  const std::uint64_t id = decode_segment_id(theta);
  return NoiseSegment::draw(model_->noise_dim(), horizon_, substeps_, id, 0);
}

Vec DiscretizedFlowFamily::eval(const Vec& theta, const Vec& x) const {
  return integrate_flow(*model_, x, segment_for(theta), order_, 0).y;
}

Mat DiscretizedFlowFamily::jacobian(const Vec& theta, const Vec& x) const {
  return integrate_flow(*model_, x, segment_for(theta), order_, 1).jacobian;
}

Tensor3 DiscretizedFlowFamily::hessian(const Vec& theta, const Vec& x) const {
  return integrate_flow(*model_, x, segment_for(theta), order_, 2).hessian;
}

Vec DiscretizedFlowFamily::inverse(const Vec& theta, const Vec& y) const {
  // Backward Euler-Maruyama: reversed, negated increments with the drift
  // replaced by -b + c (the backward-flow characteristics).
  const NoiseSegment seg = segment_for(theta);
  const double h = seg.h();
  Vec x = y;
  guard_state(x, 0);
  for (int j = seg.substeps - 1; j >= 0; --j) {
    const Vec c = correction_term(*model_, x);
    x += h * (c - model_->drift(x)) - model_->sigma(x) * seg.dW.col(j);
    guard_state(x, seg.substeps - j);
  }
  return x;
}

// ---- Built-ins -------------------------------------------------------------

OuFlow::OuFlow(int d, double rate, double sigma)
    : d_(d), rate_(rate), sigma_(sigma) {
  if (d < 1) throw config_error("ou flow: dimension >= 1");
}

Tensor3 OuFlow::drift_hessian(const Vec&) const {
  return Tensor3(std::size_t(d_), Mat::Zero(d_, d_));
}

std::vector<Mat> OuFlow::sigma_jacobian(const Vec&) const {
  return std::vector<Mat>(std::size_t(d_), Mat::Zero(d_, d_));
}

std::vector<Tensor3> OuFlow::sigma_hessian(const Vec&) const {
  return std::vector<Tensor3>(std::size_t(d_),
                              Tensor3(std::size_t(d_), Mat::Zero(d_, d_)));
}

Vec GradientDoubleWellFlow::drift(const Vec& x) const {
  Vec b(1);
  b[0] = x[0] - x[0] * x[0] * x[0];
  return b;
}

Mat GradientDoubleWellFlow::drift_jacobian(const Vec& x) const {
  Mat J(1, 1);
  J(0, 0) = 1.0 - 3.0 * x[0] * x[0];
  return J;
}

Tensor3 GradientDoubleWellFlow::drift_hessian(const Vec& x) const {
  Mat H(1, 1);
  H(0, 0) = -6.0 * x[0];
  return {H};
}

Mat GradientDoubleWellFlow::sigma(const Vec&) const {
  Mat s(1, 1);
  s(0, 0) = sigma_;
  return s;
}

std::vector<Mat> GradientDoubleWellFlow::sigma_jacobian(const Vec&) const {
  return {Mat::Zero(1, 1)};
}

std::vector<Tensor3> GradientDoubleWellFlow::sigma_hessian(const Vec&) const {
  return {Tensor3{Mat::Zero(1, 1)}};
}

DuffingVdpFlow::DuffingVdpFlow(double alpha, double beta, double sigma_add,
                               double sigma_mult)
    : alpha_(alpha), beta_(beta), sigma_add_(sigma_add), sigma_mult_(sigma_mult) {}

Vec DuffingVdpFlow::drift(const Vec& x) const {
  Vec b(2);
  b[0] = x[1];
  b[1] = alpha_ * x[0] + beta_ * x[1] - x[0] * x[0] * x[0] -
         x[0] * x[0] * x[1];
  return b;
}

Mat DuffingVdpFlow::drift_jacobian(const Vec& x) const {
  Mat J(2, 2);
  J << 0.0, 1.0,
      alpha_ - 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1], beta_ - x[0] * x[0];
  return J;
}

Tensor3 DuffingVdpFlow::drift_hessian(const Vec& x) const {
  Tensor3 H(2, Mat::Zero(2, 2));
  H[1](0, 0) = -6.0 * x[0] - 2.0 * x[1];
  H[1](0, 1) = -2.0 * x[0];
  H[1](1, 0) = -2.0 * x[0];
  return H;
}

Mat DuffingVdpFlow::sigma(const Vec& x) const {
  Mat s(2, 1);
  s(0, 0) = 0.0;
  s(1, 0) = sigma_add_ + sigma_mult_ * x[0];
  return s;
}

std::vector<Mat> DuffingVdpFlow::sigma_jacobian(const Vec&) const {
  Mat J = Mat::Zero(2, 2);
  J(1, 0) = sigma_mult_;
  return {J};
}

std::vector<Tensor3> DuffingVdpFlow::sigma_hessian(const Vec&) const {
  return {Tensor3(2, Mat::Zero(2, 2))};
}

}  // namespace pesin
