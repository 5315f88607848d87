#include "pesin/rds.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pesin/errors.hpp"
#include "pesin/stats.hpp"

namespace pesin {

namespace {

Tensor3 zero_tensor(int d) {
  return Tensor3(std::size_t(d), Mat::Zero(d, d));
}

void check_finite_guard(const Vec& x, int step) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceGuard)
    throw divergence_error("trajectory left the guard box at step " +
                           std::to_string(step));
}

// Halton sequence in [0,1) for low-discrepancy deterministic grids.
double halton(int index, int base) {
  double f = 1.0, r = 0.0;
  int i = index;
  while (i > 0) {
    f /= double(base);
    r += f * double(i % base);
    i /= base;
  }
  return r;
}

constexpr int kHaltonBases[] = {2, 3, 5, 7, 11, 13};

}  // namespace

Tensor3 DiffeoFamily::hessian(const Vec&, const Vec&) const {
  throw capability_error("family provides no Hessian");
}

Vec DiffeoFamily::inverse(const Vec&, const Vec&) const {
  throw capability_error("family provides no inverse");
}

Mat DiffeoFamily::inverse_jacobian(const Vec& theta, const Vec& y) const {
  const Vec x = inverse(theta, y);
  const Mat J = jacobian(theta, x);
  return J.partialPivLu().solve(Mat::Identity(dim(), dim()));
}

Tensor3 DiffeoFamily::inverse_hessian(const Vec& theta, const Vec& y) const {
  const Vec x = inverse(theta, y);
  const Mat J = jacobian(theta, x);
  const Mat B = J.partialPivLu().solve(Mat::Identity(dim(), dim()));
  const Tensor3 Hf = hessian(theta, x);
  const int d = dim();
  Tensor3 Hg = zero_tensor(d);
  // D2g(y)(u,v) = -B D2f(x)(Bu, Bv); component-wise contraction.
  for (int i = 0; i < d; ++i) {
    Mat inner = Mat::Zero(d, d);
    for (int l = 0; l < d; ++l) inner += B(i, l) * Hf[std::size_t(l)];
    Hg[std::size_t(i)] = -(B.transpose() * inner * B);
  }
  return Hg;
}

OmegaPrefix OmegaPrefix::shifted(int k) const {
  OmegaPrefix out;
  out.seed = seed;
  out.replicate = replicate;
  out.theta.assign(theta.begin() + k, theta.end());
  return out;
}

OmegaPrefix draw_omega(const DiffeoFamily& family, std::uint64_t seed,
                       std::uint64_t replicate, int n) {
  OmegaPrefix omega;
  omega.seed = seed;
  omega.replicate = replicate;
  omega.theta.reserve(std::size_t(n));
  for (int k = 0; k < n; ++k) {
    Prng prng(seed, stream_id(stream_id(kStreamOmega, replicate), std::uint64_t(k)));
    omega.theta.push_back(family.sample_param(prng));
  }
  return omega;
}

std::vector<Vec> compose(const DiffeoFamily& family, const OmegaPrefix& omega,
                         const Vec& x, int n) {
  if (n > omega.length())
    throw config_error("compose: omega prefix shorter than n");
  std::vector<Vec> traj;
  traj.reserve(std::size_t(n) + 1);
  traj.push_back(x);
  check_finite_guard(x, 0);
  for (int k = 0; k < n; ++k) {
    traj.push_back(family.eval(omega.theta[std::size_t(k)], traj.back()));
    check_finite_guard(traj.back(), k + 1);
  }
  return traj;
}

std::vector<Mat> jacobian_cocycle(const DiffeoFamily& family,
                                  const OmegaPrefix& omega, const Vec& x, int n) {
  const std::vector<Vec> traj = compose(family, omega, x, n);
  std::vector<Mat> factors;
  factors.reserve(std::size_t(n));
  for (int k = 0; k < n; ++k) {
    Mat J = family.jacobian(omega.theta[std::size_t(k)], traj[std::size_t(k)]);
    if (std::abs(J.partialPivLu().determinant()) < 1e-300)
      throw divergence_error("singular cocycle factor at step " + std::to_string(k));
    factors.push_back(std::move(J));
  }
  return factors;
}

Mat cocycle_product(const std::vector<Mat>& factors) {
  if (factors.empty()) throw config_error("cocycle_product: no factors");
  Mat P = Mat::Identity(factors[0].rows(), factors[0].cols());
  for (const Mat& J : factors) P = J * P;
  return P;
}

Vec centered_map(const DiffeoFamily& family, const OmegaPrefix& omega,
                 const Vec& x, int n, const Vec& xi) {
  if (n >= omega.length())
    throw config_error("centered_map: needs theta_n, omega too short");
  const std::vector<Vec> traj = compose(family, omega, x, n + 1);
  return family.eval(omega.theta[std::size_t(n)], traj[std::size_t(n)] + xi) -
         traj[std::size_t(n) + 1];
}

MeasureRepr MeasureRepr::gaussian(const Vec& mean, const Mat& cov) {
  MeasureRepr mu;
  mu.kind = Kind::gaussian;
  mu.mean = mean;
  // PSD square root via the spectral decomposition (robust to semidefinite).
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.info() != Eigen::Success)
    throw config_error("measure: covariance eigendecomposition failed");
  Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  mu.chol = es.eigenvectors() * ev.asDiagonal();
  return mu;
}

MeasureRepr MeasureRepr::uniform_box(const Vec& center, double radius) {
  MeasureRepr mu;
  mu.kind = Kind::uniform_box;
  mu.box_center = center;
  mu.box_radius = radius;
  return mu;
}

MeasureRepr MeasureRepr::empirical(std::vector<Vec> points, int min_size) {
  if (int(points.size()) < min_size)
    throw config_error("measure: empirical cloud smaller than minimum of " +
                       std::to_string(min_size));
  MeasureRepr mu;
  mu.kind = Kind::empirical;
  mu.cloud = std::move(points);
  return mu;
}

int MeasureRepr::dim() const {
  switch (kind) {
    case Kind::gaussian: return int(mean.size());
    case Kind::uniform_box: return int(box_center.size());
    case Kind::empirical: return int(cloud.front().size());
  }
  return 0;
}

Vec MeasureRepr::sample(Prng& prng) const {
  switch (kind) {
    case Kind::gaussian: {
      Vec z(mean.size());
      for (int i = 0; i < z.size(); ++i) z[i] = prng.normal();
      return mean + chol * z;
    }
    case Kind::uniform_box: {
      Vec x(box_center.size());
      for (int i = 0; i < x.size(); ++i)
        x[i] = box_center[i] + box_radius * (2.0 * prng.uniform() - 1.0);
      return x;
    }
    case Kind::empirical: {
      const std::size_t i =
          std::size_t(prng.next_u64() % std::uint64_t(cloud.size()));
      return cloud[i];
    }
  }
  throw config_error("measure: unknown kind");
}

double MeasureRepr::sample_sd(std::uint64_t seed, int probes) const {
  const int d = dim();
  std::vector<Accumulator> acc{std::size_t(d)};
  if (kind == Kind::empirical) {
    for (const Vec& x : cloud)
      for (int i = 0; i < d; ++i) acc[std::size_t(i)].add(x[i]);
  } else {
    Prng prng(seed, stream_id(kStreamScratch, 77));
    for (int k = 0; k < probes; ++k) {
      const Vec x = sample(prng);
      for (int i = 0; i < d; ++i) acc[std::size_t(i)].add(x[i]);
    }
  }
  double v = 0.0;
  for (int i = 0; i < d; ++i) v += acc[std::size_t(i)].var();
  return std::sqrt(v / double(d));
}

MeasureRepr empirical_stationary(const DiffeoFamily& family, const Vec& x0,
                                 int count, std::uint64_t seed, int burnin,
                                 int thin) {
  std::vector<Vec> cloud;
  cloud.reserve(std::size_t(count));
  Vec x = x0;
  std::uint64_t k = 0;
  auto step = [&]() {
    Prng prng(seed, stream_id(stream_id(kStreamOmega, 0xB00Bu), k));
    x = family.eval(family.sample_param(prng), x);
    check_finite_guard(x, int(k));
    ++k;
  };
  for (int i = 0; i < burnin; ++i) step();
  while (int(cloud.size()) < count) {
    for (int i = 0; i < thin; ++i) step();
    cloud.push_back(x);
  }
  return MeasureRepr::empirical(std::move(cloud), count);
}

InvarianceResult invariance_residual(const DiffeoFamily& family,
                                     const MeasureRepr& mu, int samples,
                                     std::uint64_t seed, const Vec* box_center,
                                     double box_radius) {
  if (samples < 100) throw config_error("invariance_residual: need >= 100 samples");
  const int d = family.dim();

  // Paired draws: x_i ~ mu, theta_i ~ nu, y_i = f_{theta_i}(x_i).
  std::vector<Vec> xs, ys;
  xs.reserve(std::size_t(samples));
  ys.reserve(std::size_t(samples));
  for (int i = 0; i < samples; ++i) {
    Prng pm(seed, stream_id(stream_id(kStreamMu, 1), std::uint64_t(i)));
    Prng po(seed, stream_id(stream_id(kStreamOmega, 1), std::uint64_t(i)));
    Vec x = mu.sample(pm);
    Vec y = family.eval(family.sample_param(po), x);
    check_finite_guard(y, i);
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }

  // Feature box defaults to the sample bulk.
  Vec center = Vec::Zero(d);
  double radius = box_radius;
  if (box_center != nullptr) center = *box_center;
  if (radius <= 0.0 || box_center == nullptr) {
    std::vector<Accumulator> acc{std::size_t(d)};
    for (const Vec& x : xs)
      for (int i = 0; i < d; ++i) acc[std::size_t(i)].add(x[i]);
    double v = 0.0;
    for (int i = 0; i < d; ++i) {
      if (box_center == nullptr) center[i] = acc[std::size_t(i)].mean;
      v += acc[std::size_t(i)].var();
    }
    if (radius <= 0.0) radius = 3.0 * std::sqrt(v / double(d)) + 1e-12;
  }

  // Gaussian bumps at low-discrepancy centers, two length scales: bounded,
  // Lipschitz, and rich enough to separate nearby measures.
  const int ncenters = 32;
  std::vector<Vec> centers;
  for (int j = 0; j < ncenters; ++j) {
    Vec c(d);
    for (int i = 0; i < d; ++i)
      c[i] = center[i] + radius * (2.0 * halton(j + 1, kHaltonBases[i % 6]) - 1.0);
    centers.push_back(std::move(c));
  }
  const double scales[2] = {radius / 2.0, radius};
  const int J = ncenters * 2;

  Eigen::MatrixXd gx(J, samples), gy(J, samples);
  for (int j = 0; j < ncenters; ++j) {
    for (int s = 0; s < 2; ++s) {
      const double inv2s2 = 1.0 / (2.0 * scales[s] * scales[s]);
      const int row = j * 2 + s;
      for (int i = 0; i < samples; ++i) {
        gx(row, i) = std::exp(-(xs[std::size_t(i)] - centers[std::size_t(j)]).squaredNorm() * inv2s2);
        gy(row, i) = std::exp(-(ys[std::size_t(i)] - centers[std::size_t(j)]).squaredNorm() * inv2s2);
      }
    }
  }

  const Vec delta = (gx.rowwise().mean() - gy.rowwise().mean());

  // Paired bootstrap over sample indices.
  const int B = 200;
  Eigen::MatrixXd boot(J, B);
  for (int b = 0; b < B; ++b) {
    Prng prng(seed, stream_id(stream_id(kStreamBootstrap, 1), std::uint64_t(b)));
    Vec acc = Vec::Zero(J);
    for (int i = 0; i < samples; ++i) {
      const int idx = int(prng.next_u64() % std::uint64_t(samples));
      acc += gx.col(idx) - gy.col(idx);
    }
    boot.col(b) = acc / double(samples);
  }

  InvarianceResult res;
  res.features = J;
  int argmax = 0;
  for (int j = 0; j < J; ++j) {
    Accumulator a;
    for (int b = 0; b < B; ++b) a.add(boot(j, b));
    const double se = a.sd();
    const double z = se > 0.0 ? std::abs(delta[j]) / se
                              : (std::abs(delta[j]) > 0.0 ? 1e300 : 0.0);
    if (std::abs(delta[j]) > res.max_abs) {
      res.max_abs = std::abs(delta[j]);
      argmax = j;
    }
    res.max_z = std::max(res.max_z, z);
  }
  {
    Accumulator a;
    for (int b = 0; b < B; ++b) a.add(boot(argmax, b));
    res.halfwidth = a.sd();
  }
  return res;
}

BirkhoffResult birkhoff_average(const Observable& g, const DiffeoFamily& family,
                                const OmegaPrefix& omega, const Vec& x, int n) {
  if (n < 1) throw config_error("birkhoff_average: n >= 1 required");
  if (omega.length() < n + 1)
    throw config_error("birkhoff_average: omega must have n+1 records (tail term)");
  const std::vector<Vec> traj = compose(family, omega, x, n);
  double s = 0.0;
  for (int k = 0; k < n; ++k)
    s += g(omega.theta[std::size_t(k)], traj[std::size_t(k)]);
  BirkhoffResult res;
  res.mean = s / double(n);
  res.tail = g(omega.theta[std::size_t(n)], traj[std::size_t(n)]) / double(n);
  return res;
}

// ---- ConstantLinearFamily --------------------------------------------------

ConstantLinearFamily::ConstantLinearFamily(Mat A) : A_(std::move(A)) {
  Eigen::FullPivLU<Mat> lu(A_);
  if (!lu.isInvertible())
    throw config_error("constant-linear family: matrix not invertible");
  Ainv_ = lu.inverse();
}

Tensor3 ConstantLinearFamily::hessian(const Vec&, const Vec&) const {
  return zero_tensor(dim());
}

Vec ConstantLinearFamily::inverse(const Vec&, const Vec& y) const {
  return Ainv_ * y;
}

// ---- AffineRandomFamily ----------------------------------------------------

AffineRandomFamily::AffineRandomFamily(Mat A, Mat noise_cov) : A_(std::move(A)) {
  Eigen::FullPivLU<Mat> lu(A_);
  if (!lu.isInvertible())
    throw config_error("affine-random family: matrix not invertible");
  Ainv_ = lu.inverse();
  Eigen::SelfAdjointEigenSolver<Mat> es(noise_cov);
  if (es.info() != Eigen::Success)
    throw config_error("affine-random family: bad noise covariance");
  L_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

AffineRandomFamily AffineRandomFamily::ou(int d, double dt, double rate,
                                          double sigma) {
  const double a = std::exp(-rate * dt);
  const double var = sigma * sigma * (1.0 - std::exp(-2.0 * rate * dt)) / (2.0 * rate);
  return AffineRandomFamily(a * Mat::Identity(d, d), var * Mat::Identity(d, d));
}

Vec AffineRandomFamily::sample_param(Prng& prng) const {
  Vec z(param_dim());
  for (int i = 0; i < z.size(); ++i) z[i] = prng.normal();
  return z;
}

Tensor3 AffineRandomFamily::hessian(const Vec&, const Vec&) const {
  return zero_tensor(dim());
}

Vec AffineRandomFamily::inverse(const Vec& theta, const Vec& y) const {
  return Ainv_ * (y - L_ * theta);
}

// ---- ScalarFactorFamily ----------------------------------------------------

ScalarFactorFamily::ScalarFactorFamily(std::vector<double> factors,
                                       std::vector<double> probs)
    : factors_(std::move(factors)), probs_(std::move(probs)) {
  if (factors_.empty() || factors_.size() != probs_.size())
    throw config_error("scalar-factor family: factors/probs mismatch");
  double s = 0.0;
  for (double p : probs_) {
    if (p < 0.0) throw config_error("scalar-factor family: negative probability");
    s += p;
    cdf_.push_back(s);
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw config_error("scalar-factor family: probabilities must sum to 1");
  for (double f : factors_)
    if (f == 0.0) throw config_error("scalar-factor family: zero factor");
}

Vec ScalarFactorFamily::sample_param(Prng& prng) const {
  const double u = prng.uniform();
  Vec theta(1);
  theta[0] = double(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  if (theta[0] >= double(factors_.size())) theta[0] = double(factors_.size() - 1);
  return theta;
}

double ScalarFactorFamily::factor(const Vec& theta) const {
  const int i = int(std::lround(theta[0]));
  if (i < 0 || i >= int(factors_.size()))
    throw config_error("scalar-factor family: parameter index out of range");
  return factors_[std::size_t(i)];
}

Vec ScalarFactorFamily::eval(const Vec& theta, const Vec& x) const {
  return factor(theta) * x;
}

Mat ScalarFactorFamily::jacobian(const Vec& theta, const Vec&) const {
  Mat J(1, 1);
  J(0, 0) = factor(theta);
  return J;
}

Vec ScalarFactorFamily::inverse(const Vec& theta, const Vec& y) const {
  return y / factor(theta);
}

// ---- Tanh1dFamily ----------------------------------------------------------

Tanh1dFamily::Tanh1dFamily(double c) : c_(c) {
  if (std::abs(c) >= 1.0)
    throw config_error("tanh family: |c| < 1 required for invertibility");
}

Vec Tanh1dFamily::eval(const Vec&, const Vec& x) const {
  Vec y(1);
  y[0] = x[0] + c_ * std::tanh(x[0]);
  return y;
}

Mat Tanh1dFamily::jacobian(const Vec&, const Vec& x) const {
  const double t = std::tanh(x[0]);
  Mat J(1, 1);
  J(0, 0) = 1.0 + c_ * (1.0 - t * t);
  return J;
}

Tensor3 Tanh1dFamily::hessian(const Vec&, const Vec& x) const {
  const double t = std::tanh(x[0]);
  Mat H(1, 1);
  H(0, 0) = -2.0 * c_ * t * (1.0 - t * t);
  return {H};
}

Vec Tanh1dFamily::inverse(const Vec&, const Vec& y) const {
  double x = y[0];
  for (int it = 0; it < 100; ++it) {
    const double t = std::tanh(x);
    const double f = x + c_ * t - y[0];
    const double df = 1.0 + c_ * (1.0 - t * t);
    const double step = f / df;
    x -= step;
    if (std::abs(step) < 1e-15) break;
  }
  Vec out(1);
  out[0] = x;
  return out;
}

// ---- HalfSquare1dFamily ----------------------------------------------------

Vec HalfSquare1dFamily::eval(const Vec&, const Vec& x) const {
  Vec y(1);
  y[0] = x[0] + 0.5 * x[0] * x[0];
  return y;
}

Mat HalfSquare1dFamily::jacobian(const Vec&, const Vec& x) const {
  Mat J(1, 1);
  J(0, 0) = 1.0 + x[0];
  return J;
}

Tensor3 HalfSquare1dFamily::hessian(const Vec&, const Vec&) const {
  Mat H(1, 1);
  H(0, 0) = 1.0;
  return {H};
}

// ---- QuadSkewFamily --------------------------------------------------------

Vec QuadSkewFamily::eval(const Vec&, const Vec& x) const {
  Vec y(2);
  y[0] = 0.5 * x[0];
  y[1] = 2.0 * x[1] - x[0] * x[0];
  return y;
}

Mat QuadSkewFamily::jacobian(const Vec&, const Vec& x) const {
  Mat J(2, 2);
  J << 0.5, 0.0, -2.0 * x[0], 2.0;
  return J;
}

Tensor3 QuadSkewFamily::hessian(const Vec&, const Vec&) const {
  Tensor3 H = zero_tensor(2);
  H[1](0, 0) = -2.0;
  return H;
}

Vec QuadSkewFamily::inverse(const Vec&, const Vec& y) const {
  Vec x(2);
  x[0] = 2.0 * y[0];
  x[1] = 0.5 * y[1] + 2.0 * y[0] * y[0];
  return x;
}

Mat QuadSkewFamily::inverse_jacobian(const Vec&, const Vec& y) const {
  Mat J(2, 2);
  J << 2.0, 0.0, 4.0 * y[0], 0.5;
  return J;
}

// ---- TableEmbedFamily ------------------------------------------------------

TableEmbedFamily::TableEmbedFamily(FiniteRds table, double slope)
    : table_(std::move(table)), slope_(slope) {
  table_.validate();
  if (!(slope_ > 0.0) || slope_ >= 0.5)
    throw config_error("table-embed family: slope must be in (0, 0.5)");
  double s = 0.0;
  for (double p : table_.nu) {
    s += p;
    cdf_.push_back(s);
  }
}

Vec TableEmbedFamily::sample_param(Prng& prng) const {
  const double u = prng.uniform();
  Vec theta(1);
  theta[0] = double(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  if (theta[0] >= double(table_.nmaps())) theta[0] = double(table_.nmaps() - 1);
  return theta;
}

namespace {
// Smootherstep 3z^2 - 2z^3 on [0,1] and its derivative.
inline double sstep(double z) { return z * z * (3.0 - 2.0 * z); }
inline double dsstep(double z) { return 6.0 * z * (1.0 - z); }
}  // namespace

Vec TableEmbedFamily::eval(const Vec& theta, const Vec& x) const {
  const int j = int(std::lround(theta[0]));
  const auto& row = table_.maps[std::size_t(std::clamp(j, 0, table_.nmaps() - 1))];
  const int S = table_.nstates;
  auto branch = [&](int i) {
    const int ic = std::clamp(i, 0, S - 1);
    return double(row[std::size_t(ic)]) + slope_ * (x[0] - double(i));
  };
  const double w = 0.08;  // half-width of the smoothing band at cell edges
  const int i = int(std::floor(x[0] + 0.5));
  const double u = x[0] - double(i);
  Vec y(1);
  if (u >= 0.5 - w) {
    const double z = (u - (0.5 - w)) / (2.0 * w);  // in [0, 0.5)
    y[0] = (1.0 - sstep(z)) * branch(i) + sstep(z) * branch(i + 1);
  } else if (u < -0.5 + w) {
    const double z = (u + 0.5 + w) / (2.0 * w);  // in [0.5, 1)
    y[0] = (1.0 - sstep(z)) * branch(i - 1) + sstep(z) * branch(i);
  } else {
    y[0] = branch(i);
  }
  return y;
}

Mat TableEmbedFamily::jacobian(const Vec& theta, const Vec& x) const {
  const int j = int(std::lround(theta[0]));
  const auto& row = table_.maps[std::size_t(std::clamp(j, 0, table_.nmaps() - 1))];
  const int S = table_.nstates;
  auto branch = [&](int i) {
    const int ic = std::clamp(i, 0, S - 1);
    return double(row[std::size_t(ic)]) + slope_ * (x[0] - double(i));
  };
  const double w = 0.08;
  const int i = int(std::floor(x[0] + 0.5));
  const double u = x[0] - double(i);
  Mat J(1, 1);
  if (u >= 0.5 - w) {
    const double z = (u - (0.5 - w)) / (2.0 * w);
    J(0, 0) = slope_ + dsstep(z) / (2.0 * w) * (branch(i + 1) - branch(i));
  } else if (u < -0.5 + w) {
    const double z = (u + 0.5 + w) / (2.0 * w);
    J(0, 0) = slope_ + dsstep(z) / (2.0 * w) * (branch(i) - branch(i - 1));
  } else {
    J(0, 0) = slope_;
  }
  return J;
}

}  // namespace pesin
