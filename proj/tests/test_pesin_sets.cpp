// Hyperbolicity windows: parameter validation, orbit cocycle data, growth and
// derivative-Lipschitz constants, the orbit-adapted metric with its
// contraction certificates, and inverse-growth tables.
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "pesin/errors.hpp"
#include "pesin/pesin_sets.hpp"
#include "pesin/rds.hpp"
#include "pesin/rng.hpp"

using namespace pesin;

namespace {

Mat diag2(double a, double b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

Vec vec2(double x, double y) {
  Vec v(2);
  v[0] = x;
  v[1] = y;
  return v;
}

bool has_message(const std::vector<std::string>& msgs, const std::string& part) {
  return std::any_of(msgs.begin(), msgs.end(), [&](const std::string& m) {
    return m.find(part) != std::string::npos;
  });
}

// 1D linear family advertising no second derivatives.
class PlainLinear1d final : public DiffeoFamily {
 public:
  int dim() const override { return 1; }
  int param_dim() const override { return 0; }
  Vec sample_param(Prng&) const override { return Vec(0); }
  Vec eval(const Vec&, const Vec& x) const override { return 0.5 * x; }
  Mat jacobian(const Vec&, const Vec&) const override {
    return 0.5 * Mat::Identity(1, 1);
  }
};

// Window used throughout: exponents must avoid [-1, -0.5].
PesinParams window_params() {
  PesinParams p;
  p.a = -1.0;
  p.b = -0.5;
  p.k = 1;
  p.eps = 1e-3;
  p.l_cap = 1.5;
  p.r_cap = 4.0;
  p.c_cap = 4.0;
  return p;
}

}  // namespace

TEST_SUITE("pesin_sets") {

TEST_CASE("parameter validation enforces the window and caps") {
  PesinParams p = window_params();
  CHECK(validate_params(p, 2).empty());

  // The eps ceiling (b - a) / (200 d) is inclusive.
  p.eps = 0.5 / 400.0;
  CHECK(validate_params(p, 2).empty());
  p.eps = 0.5 / 400.0 + 1e-6;
  CHECK(has_message(validate_params(p, 2), "eps exceeds"));

  p = window_params();
  p.a = -0.4;
  CHECK(has_message(validate_params(p, 2), "a < b"));
  p = window_params();
  p.b = 0.1;
  CHECK(has_message(validate_params(p, 2), "b <= 0"));
  p = window_params();
  p.k = 0;
  CHECK(has_message(validate_params(p, 2), "stable dimension"));
  p.k = 3;
  CHECK(has_message(validate_params(p, 2), "stable dimension"));
  p = window_params();
  p.eps = 0.0;
  CHECK(has_message(validate_params(p, 2), "eps must be positive"));
  p.eps = 2.0;
  CHECK(has_message(validate_params(p, 2), "eps must be <= 1"));
  p = window_params();
  p.l_cap = 0.5;
  CHECK(has_message(validate_params(p, 2), "l' must be >= 1"));
  p = window_params();
  p.r_cap = 0.0;
  CHECK(has_message(validate_params(p, 2), "r' must be >= 1"));
  p = window_params();
  p.c_cap = 0.99;
  CHECK(has_message(validate_params(p, 2), "C' must be >= 1"));
  CHECK(has_message(validate_params(window_params(), 0),
                    "state dimension must be positive"));

  // Violations accumulate in one report.
  PesinParams bad;
  bad.a = 0.0;
  bad.b = 0.5;
  bad.k = 0;
  bad.eps = -1.0;
  bad.l_cap = 0.0;
  CHECK(validate_params(bad, 2).size() >= 4);
}

TEST_CASE("cocycle data stores the orbit splitting and restriction blocks") {
  const double s = std::exp(-1.2), u = std::exp(-0.2);
  const ConstantLinearFamily fam(diag2(s, u));
  const OmegaPrefix omega = draw_omega(fam, 7, 0, 12);
  const Vec x0 = vec2(0.3, -0.4);
  const CocycleData data = CocycleData::build(fam, omega, x0, 12, -1.0);

  CHECK(data.horizon() == 12);
  CHECK(data.k == 1);
  CHECK(data.a == -1.0);
  REQUIRE(data.traj.size() == 13);
  REQUIRE(data.factors.size() == 12);
  for (int n = 0; n <= 12; ++n) {
    const Vec expect =
        vec2(0.3 * std::pow(s, n), -0.4 * std::pow(u, n));
    CHECK((data.traj[std::size_t(n)] - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (const Mat& J : data.factors)
    CHECK((J - diag2(s, u)).cwiseAbs().maxCoeff() == 0.0);

  // Diagonal cocycle: the splitting is the coordinate axes at every level.
  for (int n = 0; n <= 12; ++n) {
    CHECK(data.E[std::size_t(n)].cols() == 1);
    CHECK(data.H[std::size_t(n)].cols() == 1);
    CHECK(std::abs(std::abs(data.E[std::size_t(n)](0, 0)) - 1.0) < 1e-10);
    CHECK(std::abs(data.E[std::size_t(n)](1, 0)) < 1e-10);
    CHECK(std::abs(std::abs(data.H[std::size_t(n)](1, 0)) - 1.0) < 1e-10);
    CHECK(std::abs(data.H[std::size_t(n)](0, 0)) < 1e-10);
  }

  // Restriction blocks are the l-step powers applied to the level bases.
  const Mat S = data.stable_block(2, 3);
  CHECK(std::abs(std::abs(S(0, 0)) - std::pow(s, 3)) < 1e-13);
  CHECK(std::abs(S(1, 0)) < 1e-13);
  const Mat U = data.unstable_block(1, 2);
  CHECK(std::abs(std::abs(U(1, 0)) - std::pow(u, 2)) < 1e-13);

  Vec xi, eta;
  data.split(0, vec2(0.3, 0.7), xi, eta);
  REQUIRE(xi.size() == 1);
  REQUIRE(eta.size() == 1);
  CHECK(std::abs(std::abs(xi[0]) - 0.3) < 1e-12);
  CHECK(std::abs(std::abs(eta[0]) - 0.7) < 1e-12);

  CHECK_THROWS_AS((void)data.stable_block(10, 3), config_error);
  CHECK_THROWS_AS((void)data.unstable_block(-1, 2), config_error);
  CHECK_THROWS_AS((void)data.stable_block(0, -1), config_error);

  CHECK_THROWS_AS(
      (void)CocycleData::build(fam, omega, x0, 0, -1.0), config_error);
  CHECK_THROWS_AS(
      (void)CocycleData::build(fam, omega, x0, 13, -1.0), config_error);

  // Orbits past the guard box abort with a divergence report.
  const ConstantLinearFamily blowup(10.0 * Mat::Identity(1, 1));
  const OmegaPrefix om1 = draw_omega(blowup, 1, 0, 20);
  CHECK_THROWS_AS((void)CocycleData::build(blowup, om1, Vec::Ones(1), 20, -1.0),
                  divergence_error);
}

TEST_CASE("growth constants collapse to one for an orthogonal splitting") {
  const double s = std::exp(-1.2), u = std::exp(-0.2);
  const ConstantLinearFamily fam(diag2(s, u));
  const OmegaPrefix omega = draw_omega(fam, 3, 0, 24);
  const PesinParams p = window_params();
  const CocycleData data =
      CocycleData::build(fam, omega, vec2(0.1, 0.1), 24, p.a);
  const LEstimate est = estimate_l(data, p);

  // Both blocks beat their window rates and the axes stay orthogonal, so
  // every per-level constant is exactly the floor 1.
  REQUIRE(int(est.table.size()) == 25);
  for (double c : est.table) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(est.l0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(est.l_uniform == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(est.cert_ok);
  CHECK(est.cert_margin == doctest::Approx(-p.eps).epsilon(1e-9));
  CHECK_FALSE(est.short_horizon);

  const LEstimate direct = estimate_l(fam, omega, vec2(0.1, 0.1), p, 24);
  CHECK(direct.l0 == doctest::Approx(est.l0).epsilon(1e-12));
  CHECK(direct.l_uniform == doctest::Approx(est.l_uniform).epsilon(1e-12));

  const OmegaPrefix tiny = draw_omega(fam, 3, 0, 1);
  const LEstimate short_est = estimate_l(fam, tiny, vec2(0.1, 0.1), p, 1);
  CHECK(short_est.short_horizon);
}

TEST_CASE("growth constants track a sheared splitting's angle decay") {
  // A = [[s, 0.4], [0, u]]: the stable direction is the first axis, the
  // pushed-forward complement shears toward the unstable eigenvector
  // (v1, 1), v1 = 0.4 / (u - s), so the angle gap decays to 1/sqrt(1+v1^2).
  const double s = std::exp(-1.2), u = std::exp(-0.2);
  Mat A(2, 2);
  A << s, 0.4, 0.0, u;
  const int N = 40;
  const ConstantLinearFamily fam(A);
  const OmegaPrefix omega = draw_omega(fam, 5, 0, N);
  const PesinParams p = window_params();
  const CocycleData data =
      CocycleData::build(fam, omega, vec2(0.05, 0.02), N, p.a);
  const LEstimate est = estimate_l(data, p);

  // Scalar re-derivation from the 2x2 closed forms: A^m e2 = (c_m, u^m)
  // with c_m = 0.4 (u^m - s^m) / (u - s).
  auto cm = [&](int m) {
    return 0.4 * (std::pow(u, m) - std::pow(s, m)) / (u - s);
  };
  auto rm = [&](int m) { return std::hypot(cm(m), std::pow(u, m)); };
  auto gapm = [&](int m) { return std::pow(u, m) / rm(m); };

  std::vector<double> expect(std::size_t(N) + 1, 1.0);
  for (int n = 0; n <= N; ++n) {
    double c = std::max(1.0, 1.0 / gapm(n));
    for (int l = 1; n + l <= N; ++l) {
      c = std::max(c, std::pow(s, l) * std::exp(-(p.a + p.eps) * l));
      c = std::max(c, std::exp((p.b - p.eps) * l) * rm(n) / rm(n + l));
      c = std::max(c, std::exp(-p.eps * l) / gapm(n + l));
    }
    expect[std::size_t(n)] = c;
  }
  double l0 = 0.0, lu = 0.0;
  for (int n = 0; n <= N; ++n) {
    l0 = std::max(l0, expect[std::size_t(n)] * std::exp(-p.eps * n));
    lu = std::max(lu, expect[std::size_t(n)]);
  }

  for (int n = 0; n <= N; ++n)
    CHECK(est.table[std::size_t(n)] ==
          doctest::Approx(expect[std::size_t(n)]).epsilon(1e-9));
  CHECK(est.l0 == doctest::Approx(l0).epsilon(1e-9));
  CHECK(est.l_uniform == doctest::Approx(lu).epsilon(1e-9));
  // At the far end the angle has converged: the uniform constant is the
  // limiting 1/sin of the eigenvector angle.
  const double v1 = 0.4 / (u - s);
  CHECK(est.l_uniform ==
        doctest::Approx(std::sqrt(1.0 + v1 * v1)).epsilon(1e-9));
  CHECK(est.cert_ok);
  CHECK(est.l_uniform > 1.2);  // genuinely above the orthogonal floor
}

TEST_CASE("derivative-lipschitz estimates freeze constant-hessian families") {
  const PesinParams p = window_params();

  // Linear maps have vanishing second derivatives on both branches.
  const double s = std::exp(-1.2), u = std::exp(-0.2);
  const ConstantLinearFamily lin(diag2(s, u));
  const OmegaPrefix om = draw_omega(lin, 11, 0, 6);
  const REstimate rl = estimate_r(lin, om, vec2(0.1, 0.1), p.eps, 6);
  CHECK(rl.r == 0.0);
  CHECK_FALSE(rl.forward_only);
  for (double v : rl.rprime_table) CHECK(v == 0.0);

  // f(x) = x + x^2/2 has constant second derivative 1 and no inverse: the
  // forward-only fallback engages and the table is identically 1.
  const HalfSquare1dFamily half;
  const OmegaPrefix om1 = draw_omega(half, 11, 0, 5);
  const REstimate rh = estimate_r(half, om1, 0.1 * Vec::Ones(1), p.eps, 5);
  CHECK(rh.forward_only);
  REQUIRE(int(rh.rprime_table.size()) == 5);
  for (double v : rh.rprime_table)
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rh.r == doctest::Approx(1.0).epsilon(1e-12));

  // (x, y) -> (x/2, 2y - x^2): forward Hessian norm 2; the inverse map
  // (u, v) -> (2u, v/2 + 2u^2) doubles it.
  const QuadSkewFamily quad;
  const OmegaPrefix om2 = draw_omega(quad, 11, 0, 4);
  const Vec q0 = vec2(0.05, 0.01);
  const REstimate rq_fwd = estimate_r(quad, om2, q0, p.eps, 4, true);
  CHECK(rq_fwd.forward_only);
  CHECK(rq_fwd.r == doctest::Approx(2.0).epsilon(1e-12));
  const REstimate rq_full = estimate_r(quad, om2, q0, p.eps, 4, false);
  CHECK_FALSE(rq_full.forward_only);
  CHECK(rq_full.r == doctest::Approx(4.0).epsilon(1e-12));
  for (double v : rq_full.rprime_table)
    CHECK(v == doctest::Approx(4.0).epsilon(1e-12));

  const PlainLinear1d plain;
  const OmegaPrefix om3 = draw_omega(plain, 1, 0, 3);
  CHECK_THROWS_AS(
      (void)estimate_r(plain, om3, Vec::Zero(1), p.eps, 3), capability_error);
  CHECK_THROWS_AS(
      (void)estimate_r(half, om1, Vec::Zero(1), p.eps, 9), config_error);
}

TEST_CASE("adapted norms sum the forward series and the finite pullback") {
  const double s = std::exp(-1.2), u = std::exp(-0.2);
  const ConstantLinearFamily fam(diag2(s, u));
  const int N = 80;
  const OmegaPrefix omega = draw_omega(fam, 13, 0, N);
  const PesinParams p = window_params();
  const auto data = std::make_shared<CocycleData>(
      CocycleData::build(fam, omega, vec2(0.01, 0.005), N, p.a));

  const LyapunovMetric m0 = make_metric(data, p, 0);
  // Stable-series terms decay by exactly e^{-2(a+2eps)} s^2 per step.
  const double rho = std::exp(-2.0 * (p.a + 2.0 * p.eps)) * s * s;
  CHECK(m0.rho == doctest::Approx(rho).epsilon(1e-12));
  CHECK(m0.L == 60);

  auto stable_sum = [&](int L) {
    double sum = 0.0;
    for (int l = 0; l <= L; ++l)
      sum += std::exp(-2.0 * (p.a + 2.0 * p.eps) * l) * std::pow(s, 2 * l);
    return sum;
  };
  auto unstable_sum = [&](int n) {
    double sum = 0.0;
    for (int l = 0; l <= n; ++l)
      sum += std::exp(2.0 * (p.b - 2.0 * p.eps) * l) * std::pow(u, -2 * l);
    return sum;
  };

  const LyapNorm ne1 = lyapunov_norm(m0, vec2(1.0, 0.0));
  CHECK(ne1.value == doctest::Approx(std::sqrt(stable_sum(60))).epsilon(1e-12));
  CHECK(ne1.tail > 0.0);
  CHECK(ne1.tail < 1e-10);

  // Level 0 has no pullback history: the unstable norm is Euclidean.
  const LyapNorm ne2 = lyapunov_norm(m0, vec2(0.0, 1.0));
  CHECK(ne2.value == doctest::Approx(1.0).epsilon(1e-12));

  const LyapunovMetric m10 = make_metric(data, p, 10);
  const LyapNorm nu10 = lyapunov_norm(m10, vec2(0.0, 1.0));
  CHECK(nu10.value ==
        doctest::Approx(std::sqrt(unstable_sum(10))).epsilon(1e-12));

  // Mixed vectors take the max of the two primed component norms.
  const LyapNorm mixed = lyapunov_norm(m10, vec2(0.6, 0.8));
  const double want = std::max(0.6 * std::sqrt(stable_sum(m10.L)),
                               0.8 * std::sqrt(unstable_sum(10)));
  CHECK(mixed.value == doctest::Approx(want).epsilon(1e-11));

  // At the end of the horizon the series truncates to the bare term.
  const LyapunovMetric mend = make_metric(data, p, N);
  CHECK(mend.L == 0);
  CHECK(lyapunov_norm(mend, vec2(1.0, 0.0)).value ==
        doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)make_metric(nullptr, p, 0), config_error);
  CHECK_THROWS_AS((void)make_metric(data, p, -1), config_error);
  CHECK_THROWS_AS((void)make_metric(data, p, N + 1), config_error);

  // A transiently expanding stable block defeats the window rate and the
  // series certificate must refuse.
  auto bad = std::make_shared<CocycleData>();
  bad->k = 1;
  bad->a = p.a;
  for (int n = 0; n <= 10; ++n) {
    bad->traj.push_back(Vec::Zero(1));
    bad->E.push_back(Mat::Ones(1, 1));
    bad->H.push_back(Mat(1, 0));
  }
  bad->factors.assign(10, std::exp(-3.0) * Mat::Identity(1, 1));
  bad->factors[0] = std::exp(0.5) * Mat::Identity(1, 1);
  CHECK_THROWS_AS((void)make_metric(bad, p, 0), divergence_error);
}

TEST_CASE("metric bounds hold on sampled cones") {
  const double s = std::exp(-1.2), u = std::exp(-0.2);
  const ConstantLinearFamily fam(diag2(s, u));
  const int N = 80;
  const OmegaPrefix omega = draw_omega(fam, 17, 0, N);
  const PesinParams p = window_params();
  const auto data = std::make_shared<CocycleData>(
      CocycleData::build(fam, omega, vec2(0.01, 0.005), N, p.a));

  const MetricBoundsReport rep = check_metric_bounds(data, p, 2, 400, 5);
  CHECK(rep.pass);
  CHECK(rep.samples == 400);
  CHECK(rep.A ==
        doctest::Approx(4.0 * p.l_cap * p.l_cap /
                        std::sqrt(1.0 - std::exp(-2.0 * p.eps)))
            .epsilon(1e-12));
  CHECK(rep.worst_contraction <= 0.0);
  CHECK(rep.worst_expansion >= 0.0);
  CHECK(rep.worst_lower >= 0.0);
  CHECK(rep.worst_upper <= 0.0);

  // Diagonal closed form: the stable cone contracts at rate s e^{-(a+2eps)}
  // relative to the window, i.e. margin s e^{-(a+2eps)} - 1.
  CHECK(rep.worst_contraction ==
        doctest::Approx(s * std::exp(-(p.a + 2.0 * p.eps)) - 1.0)
            .epsilon(1e-9));

  CHECK_THROWS_AS((void)check_metric_bounds(data, p, N, 10, 5), config_error);
  CHECK_THROWS_AS((void)check_metric_bounds(nullptr, p, 0, 10, 5),
                  config_error);

  // Fully unstable window: no stable block, the contraction margin reports
  // the neutral zero and the remaining bounds still certify.
  PesinParams deep = p;
  deep.a = -5.0;
  deep.b = -4.5;
  const auto data0 = std::make_shared<CocycleData>(
      CocycleData::build(fam, omega, vec2(0.01, 0.005), 40, deep.a));
  CHECK(data0->k == 0);
  const MetricBoundsReport rep0 = check_metric_bounds(data0, deep, 1, 200, 9);
  CHECK(rep0.pass);
  CHECK(rep0.worst_contraction == 0.0);
  CHECK(rep0.worst_expansion >= 0.0);
}

TEST_CASE("inverse growth certificates track the smallest singular value") {
  CocycleData hand;
  hand.factors.push_back(diag2(2.0, 4.0));
  Mat second = diag2(0.5, 0.25);
  hand.factors.push_back(second);
  const CdeltaEstimate est = cdelta_certificate(hand, 0.1);
  REQUIRE(est.table.size() == 2);
  CHECK(est.table[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(est.table[1] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(est.c_delta == doctest::Approx(4.0 * std::exp(-0.1)).epsilon(1e-12));

  const double s = std::exp(-1.2), u = std::exp(-0.2);
  const ConstantLinearFamily fam(diag2(s, u));
  const OmegaPrefix omega = draw_omega(fam, 19, 0, 10);
  const CocycleData data =
      CocycleData::build(fam, omega, vec2(0.1, 0.1), 10, -1.0);
  const CdeltaEstimate lin = cdelta_certificate(data, 0.25);
  for (double v : lin.table)
    CHECK(v == doctest::Approx(std::exp(1.2)).epsilon(1e-12));
  CHECK(lin.c_delta == doctest::Approx(std::exp(1.2)).epsilon(1e-12));

  CocycleData singular;
  singular.factors.push_back(Mat::Identity(2, 2));
  singular.factors.push_back(diag2(1.0, 0.0));
  CHECK_THROWS_AS((void)cdelta_certificate(singular, 0.1), divergence_error);
  CHECK_THROWS_AS((void)cdelta_certificate(hand, 0.0), config_error);
}

}  // TEST_SUITE
