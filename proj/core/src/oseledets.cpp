#include "pesin/oseledets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pesin/errors.hpp"
#include "pesin/stats.hpp"

namespace pesin {

namespace {

// QR with positive R-diagonal (flip signs so the frame is unique).
void qr_positive(const Mat& B, Mat& Q, Vec& rdiag) {
  Eigen::HouseholderQR<Mat> qr(B);
  const int d = int(B.rows());
  Q = qr.householderQ() * Mat::Identity(d, int(B.cols()));
  Mat R = qr.matrixQR().topRows(B.cols()).triangularView<Eigen::Upper>();
  rdiag.resize(B.cols());
  for (int i = 0; i < int(B.cols()); ++i) {
    if (R(i, i) < 0.0) Q.col(i) = -Q.col(i);
    rdiag[i] = std::abs(R(i, i));
  }
}

}  // namespace

double SpectrumEstimate::sum_positive() const {
  double s = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i)
    s += std::max(lambda[i], 0.0) * double(m[i]);
  return s;
}

SpectrumEstimate lyapunov_spectrum(const DiffeoFamily& family,
                                   const OmegaPrefix& omega, const Vec& x,
                                   int n, int block, double cluster_gap,
                                   const Mat* frame0) {
  const int d = family.dim();
  if (block < 1) throw config_error("lyapunov_spectrum: block >= 1 required");
  if (n < 10 * block)
    throw config_error("lyapunov_spectrum: n >= 10*block required");
  const std::vector<Mat> factors = jacobian_cocycle(family, omega, x, n);

  Mat Q = frame0 != nullptr ? *frame0 : Mat::Identity(d, d);

  // Per QR event: accumulated log R-diagonals and the step count covered.
  std::vector<Vec> event_logs;
  std::vector<int> event_steps;
  int k = 0;
  while (k < n) {
    const int len = std::min(block, n - k);
    Mat B = Q;
    for (int j = 0; j < len; ++j) B = factors[std::size_t(k + j)] * B;
    Vec rdiag;
    qr_positive(B, Q, rdiag);
    for (int i = 0; i < d; ++i)
      if (rdiag[i] <= 1e-300)
        throw divergence_error(
            "degenerate cocycle direction (vanishing growth factor) near step " +
            std::to_string(k));
    event_logs.push_back(rdiag.array().log().matrix());
    event_steps.push_back(len);
    k += len;
  }

  const int nevents = int(event_logs.size());
  Vec total = Vec::Zero(d);
  for (const Vec& v : event_logs) total += v;

  // Confidence half-widths: 2 x SE over up to 20 contiguous event blocks.
  const int nb = std::min(20, nevents);
  Vec hw = Vec::Zero(d);
  if (nb >= 2) {
    for (int i = 0; i < d; ++i) {
      Accumulator acc;
      for (int g = 0; g < nb; ++g) {
        const int e0 = g * nevents / nb, e1 = (g + 1) * nevents / nb;
        double s = 0.0;
        int steps = 0;
        for (int e = e0; e < e1; ++e) {
          s += event_logs[std::size_t(e)][i];
          steps += event_steps[std::size_t(e)];
        }
        acc.add(s / double(steps));
      }
      hw[i] = 2.0 * acc.se();
    }
  }

  SpectrumEstimate est;
  est.n_used = n;
  est.logdet_rate = total.sum() / double(n);

  // Sort ascending, carrying the half-widths along.
  std::vector<int> order(std::size_t(d), 0);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    return total[i] < total[j];
  });
  est.rho.resize(d);
  est.halfwidth.resize(d);
  for (int i = 0; i < d; ++i) {
    est.rho[i] = total[order[std::size_t(i)]] / double(n);
    est.halfwidth[i] = hw[order[std::size_t(i)]];
  }

  std::vector<double> rho_v(est.rho.data(), est.rho.data() + d);
  auto [lam, mult] = cluster_multiplicities(rho_v, cluster_gap);
  est.lambda = std::move(lam);
  est.m = std::move(mult);
  return est;
}

std::pair<std::vector<double>, std::vector<int>> cluster_multiplicities(
    const std::vector<double>& rho_sorted, double gap) {
  std::vector<double> lambda;
  std::vector<int> m;
  if (rho_sorted.empty()) return {lambda, m};
  if (!std::is_sorted(rho_sorted.begin(), rho_sorted.end()))
    throw config_error("cluster_multiplicities: exponents must be sorted");
  double sum = rho_sorted[0];
  int count = 1;
  for (std::size_t i = 1; i < rho_sorted.size(); ++i) {
    if (rho_sorted[i] - rho_sorted[i - 1] > gap) {
      lambda.push_back(sum / double(count));
      m.push_back(count);
      sum = 0.0;
      count = 0;
    }
    sum += rho_sorted[i];
    ++count;
  }
  lambda.push_back(sum / double(count));
  m.push_back(count);
  return {lambda, m};
}

FiltrationEstimate stable_filtration(const DiffeoFamily& family,
                                     const OmegaPrefix& omega, const Vec& x,
                                     int n, double a, double gap) {
  const int d = family.dim();
  if (n < 1) throw config_error("stable_filtration: n >= 1 required");
  const std::vector<Mat> factors = jacobian_cocycle(family, omega, x, n);

  // QR frame of J_0^T J_1^T ... J_{n-1}^T: leading columns converge to the
  // dominant right-singular subspace of the forward product, and the log
  // R-diagonals to the singular-value exponents (descending).
  Mat Q = Mat::Identity(d, d);
  Vec total = Vec::Zero(d);
  for (int k = n - 1; k >= 0; --k) {
    Vec rdiag;
    Mat Qn;
    qr_positive(factors[std::size_t(k)].transpose() * Q, Qn, rdiag);
    Q = std::move(Qn);
    for (int i = 0; i < d; ++i) {
      if (rdiag[i] <= 1e-300)
        throw divergence_error("degenerate cocycle factor at step " +
                               std::to_string(k));
      total[i] += std::log(rdiag[i]);
    }
  }
  Vec exps = total / double(n);
  // The accumulation does not guarantee descending order at small n; sort the
  // columns by exponent, descending.
  std::vector<int> order(std::size_t(d), 0);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    return exps[i] > exps[j];
  });

  for (int i = 0; i < d; ++i)
    if (std::abs(exps[i] - a) < gap)
      throw divergence_error(
          "no spectral gap at the splitting threshold: exponent " +
          std::to_string(exps[i]) + " within " + std::to_string(gap) + " of " +
          std::to_string(a));

  FiltrationEstimate fe;
  fe.a = a;
  int nh = 0;
  for (int i = 0; i < d; ++i)
    if (exps[i] >= a) ++nh;
  fe.H.resize(d, nh);
  fe.E.resize(d, d - nh);
  fe.exps.resize(d);
  int hi = 0, ei = 0;
  for (int idx = 0; idx < d; ++idx) {
    const int c = order[std::size_t(idx)];
    fe.exps[idx] = exps[c];
    if (exps[c] >= a)
      fe.H.col(hi++) = Q.col(c);
    else
      fe.E.col(ei++) = Q.col(c);
  }
  return fe;
}

double det_identity_residual(const DiffeoFamily& family,
                             const OmegaPrefix& omega, const Vec& x, int n,
                             const SpectrumEstimate& spectrum) {
  const std::vector<Mat> factors = jacobian_cocycle(family, omega, x, n);
  double logdet = 0.0;
  for (const Mat& J : factors) {
    Eigen::HouseholderQR<Mat> qr(J);
    for (int i = 0; i < J.rows(); ++i) {
      const double r = std::abs(qr.matrixQR()(i, i));
      if (r <= 1e-300)
        throw divergence_error("singular cocycle factor in log-det accumulation");
      logdet += std::log(r);
    }
  }
  double lam_sum = 0.0;
  for (std::size_t i = 0; i < spectrum.lambda.size(); ++i)
    lam_sum += spectrum.lambda[i] * double(spectrum.m[i]);
  return std::abs(logdet / double(n) - lam_sum);
}

double subspace_angle(const Mat& E, const Mat& H) {
  if (E.cols() == 0 || H.cols() == 0) return std::acos(-1.0) / 2.0;
  if (E.rows() != H.rows())
    throw config_error("subspace_angle: ambient dimensions differ");
  auto check_frame = [](const Mat& B, const char* name) {
    Mat G = B.transpose() * B;
    if ((G - Mat::Identity(B.cols(), B.cols())).cwiseAbs().maxCoeff() > 1e-8)
      throw config_error(std::string("subspace_angle: ") + name +
                         " basis not orthonormal");
  };
  check_frame(E, "first");
  check_frame(H, "second");
  Eigen::JacobiSVD<Mat> svd(E.transpose() * H);
  const double c = std::clamp(svd.singularValues()[0], -1.0, 1.0);
  return std::acos(c);
}

}  // namespace pesin
