#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pesin/finite.hpp"
#include "pesin/rng.hpp"

namespace pesin {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
// Second derivative of a map R^d -> R^d: Tensor3[i](j,k) = d2 f_i / dx_j dx_k.
using Tensor3 = std::vector<Mat>;

// Coordinates above this guard are treated as numerical blow-up; the
// hyperbolicity machinery is meaningless past overflow.
inline constexpr double kDivergenceGuard = 1e12;

// A parameterized family of smooth maps of R^d together with the law of its
// parameter: one i.i.d. draw of theta per time step defines the random system.
// Inverses and Hessians are optional capabilities; callers must check.
class DiffeoFamily {
 public:
  virtual ~DiffeoFamily() = default;

  virtual int dim() const = 0;
  virtual int param_dim() const = 0;
  virtual Vec sample_param(Prng& prng) const = 0;

  virtual Vec eval(const Vec& theta, const Vec& x) const = 0;
  virtual Mat jacobian(const Vec& theta, const Vec& x) const = 0;

  virtual bool has_hessian() const { return false; }
  virtual Tensor3 hessian(const Vec& theta, const Vec& x) const;

  virtual bool has_inverse() const { return false; }
  virtual Vec inverse(const Vec& theta, const Vec& y) const;
  // D(f^-1) at y; default solves the forward Jacobian at the preimage.
  virtual Mat inverse_jacobian(const Vec& theta, const Vec& y) const;
  virtual bool has_inverse_hessian() const { return has_inverse() && has_hessian(); }
  // D2(f^-1) at y from the forward derivatives:
  //   D2g(y)(u,v) = -B D2f(x)(Bu, Bv),  B = Df(x)^{-1}, x = g(y).
  virtual Tensor3 inverse_hessian(const Vec& theta, const Vec& y) const;
};

// A finite noise realization: parameter records theta_0..theta_{n-1} plus the
// stream key that regenerates them bit-exactly.
struct OmegaPrefix {
  std::vector<Vec> theta;
  std::uint64_t seed = 0;
  std::uint64_t replicate = 0;

  int length() const { return int(theta.size()); }
  // Drop the first k records (the shift on noise sequences).
  OmegaPrefix shifted(int k) const;
};

// theta_k is drawn from the stream (seed, (replicate, k)), so any worker can
// regenerate any record independently of evaluation order.
OmegaPrefix draw_omega(const DiffeoFamily& family, std::uint64_t seed,
                       std::uint64_t replicate, int n);

// Trajectory (x, f^1_w x, ..., f^n_w x); throws divergence_error with the
// offending step when a coordinate passes the guard.
std::vector<Vec> compose(const DiffeoFamily& family, const OmegaPrefix& omega,
                         const Vec& x, int n);

// Derivative cocycle factors [D_{f^k_w x} f_{theta_k}], k < n; their ordered
// product (last * ... * first) is D_x f^n_w.
std::vector<Mat> jacobian_cocycle(const DiffeoFamily& family,
                                  const OmegaPrefix& omega, const Vec& x, int n);
Mat cocycle_product(const std::vector<Mat>& factors);

// The map moved to tangent coordinates at step n along the orbit:
//   xi |-> f_{theta_n}(f^n_w x + xi) - f^{n+1}_w x,
// which fixes 0 and has the cocycle factor as its derivative at 0.
Vec centered_map(const DiffeoFamily& family, const OmegaPrefix& omega,
                 const Vec& x, int n, const Vec& xi);

// Representation of a measure on R^d: an analytic sampler (Gaussian or
// uniform box) or an empirical cloud.
struct MeasureRepr {
  enum class Kind { gaussian, uniform_box, empirical };
  Kind kind = Kind::gaussian;

  Vec mean;       // gaussian
  Mat chol;       // gaussian: lower-triangular factor of the covariance
  Vec box_center; // uniform_box
  double box_radius = 0.0;
  std::vector<Vec> cloud;  // empirical, equal weights

  static MeasureRepr gaussian(const Vec& mean, const Mat& cov);
  static MeasureRepr uniform_box(const Vec& center, double radius);
  static MeasureRepr empirical(std::vector<Vec> points, int min_size = 100);

  int dim() const;
  Vec sample(Prng& prng) const;
  // Pooled per-axis standard deviation (for default partition boxes).
  double sample_sd(std::uint64_t seed, int probes = 4096) const;
};

// Long-run empirical cloud of the one-point chain x_{k+1} = f_{theta_k}(x_k).
MeasureRepr empirical_stationary(const DiffeoFamily& family, const Vec& x0,
                                 int count, std::uint64_t seed,
                                 int burnin = 10000, int thin = 10);

// Max discrepancy between E_mu g and E_{nu x mu} g(f(x)) over a fixed family
// of Gaussian-bump features on a box, with a paired-bootstrap scale: z-scores
// near 0 say the sampled measure is consistent with invariance.
struct InvarianceResult {
  double max_abs = 0.0;       // worst feature discrepancy
  double max_z = 0.0;         // worst |discrepancy| / bootstrap SE
  double halfwidth = 0.0;     // bootstrap SE of the worst feature
  int features = 0;
};
InvarianceResult invariance_residual(const DiffeoFamily& family,
                                     const MeasureRepr& mu, int samples,
                                     std::uint64_t seed,
                                     const Vec* box_center = nullptr,
                                     double box_radius = -1.0);

// Observable g(F^k(w,x)) evaluated as g(theta_k, x_k).
using Observable = std::function<double(const Vec& theta, const Vec& x)>;

// (1/n) sum_{k<n} g(F^k) plus the endpoint slope (1/n) g(F^n); the endpoint
// needs one extra parameter record.
struct BirkhoffResult {
  double mean = 0.0;
  double tail = 0.0;
};
BirkhoffResult birkhoff_average(const Observable& g, const DiffeoFamily& family,
                                const OmegaPrefix& omega, const Vec& x, int n);

// ---- Built-in families ----------------------------------------------------

// f(x) = A x (deterministic).
class ConstantLinearFamily final : public DiffeoFamily {
 public:
  explicit ConstantLinearFamily(Mat A);
  int dim() const override { return int(A_.rows()); }
  int param_dim() const override { return 0; }
  Vec sample_param(Prng&) const override { return Vec(0); }
  Vec eval(const Vec&, const Vec& x) const override { return A_ * x; }
  Mat jacobian(const Vec&, const Vec&) const override { return A_; }
  bool has_hessian() const override { return true; }
  Tensor3 hessian(const Vec&, const Vec&) const override;
  bool has_inverse() const override { return true; }
  Vec inverse(const Vec&, const Vec& y) const override;
  Mat inverse_jacobian(const Vec&, const Vec&) const override { return Ainv_; }

 private:
  Mat A_, Ainv_;
};

// f_theta(x) = A x + L theta, theta ~ N(0, I): random affine maps with
// Gaussian shifts.  ou(d, dt, rate, sigma) is the exact one-step law of
// dX = -rate X dt + sigma dW over time dt.
class AffineRandomFamily final : public DiffeoFamily {
 public:
  AffineRandomFamily(Mat A, Mat noise_cov);
  static AffineRandomFamily ou(int d, double dt = 1.0, double rate = 1.0,
                               double sigma = 1.0);
  int dim() const override { return int(A_.rows()); }
  int param_dim() const override { return int(A_.rows()); }
  Vec sample_param(Prng& prng) const override;
  Vec eval(const Vec& theta, const Vec& x) const override {
    return A_ * x + L_ * theta;
  }
  Mat jacobian(const Vec&, const Vec&) const override { return A_; }
  bool has_hessian() const override { return true; }
  Tensor3 hessian(const Vec&, const Vec&) const override;
  bool has_inverse() const override { return true; }
  Vec inverse(const Vec& theta, const Vec& y) const override;
  Mat inverse_jacobian(const Vec&, const Vec&) const override { return Ainv_; }

 private:
  Mat A_, Ainv_, L_;
};

// f_theta(x) = c_theta x, scalar factors drawn from a finite list.
class ScalarFactorFamily final : public DiffeoFamily {
 public:
  ScalarFactorFamily(std::vector<double> factors, std::vector<double> probs);
  int dim() const override { return 1; }
  int param_dim() const override { return 1; }
  Vec sample_param(Prng& prng) const override;
  Vec eval(const Vec& theta, const Vec& x) const override;
  Mat jacobian(const Vec& theta, const Vec&) const override;
  bool has_hessian() const override { return true; }
  Tensor3 hessian(const Vec&, const Vec&) const override { return {Mat::Zero(1, 1)}; }
  bool has_inverse() const override { return true; }
  Vec inverse(const Vec& theta, const Vec& y) const override;

 private:
  double factor(const Vec& theta) const;
  std::vector<double> factors_, probs_, cdf_;
};

// f(x) = x + c tanh(x), a 1D diffeomorphism for |c| < 1 (deterministic).
class Tanh1dFamily final : public DiffeoFamily {
 public:
  explicit Tanh1dFamily(double c);
  int dim() const override { return 1; }
  int param_dim() const override { return 0; }
  Vec sample_param(Prng&) const override { return Vec(0); }
  Vec eval(const Vec&, const Vec& x) const override;
  Mat jacobian(const Vec&, const Vec& x) const override;
  bool has_hessian() const override { return true; }
  Tensor3 hessian(const Vec&, const Vec& x) const override;
  bool has_inverse() const override { return true; }
  Vec inverse(const Vec&, const Vec& y) const override;  // Newton, monotone

 private:
  double c_;
};

// f(x) = x + x^2/2 (deterministic; not globally invertible, so no inverse
// capability — used to exercise Hessian-based estimators).
class HalfSquare1dFamily final : public DiffeoFamily {
 public:
  int dim() const override { return 1; }
  int param_dim() const override { return 0; }
  Vec sample_param(Prng&) const override { return Vec(0); }
  Vec eval(const Vec&, const Vec& x) const override;
  Mat jacobian(const Vec&, const Vec& x) const override;
  bool has_hessian() const override { return true; }
  Tensor3 hessian(const Vec&, const Vec&) const override;
};

// f(x, y) = (x/2, 2y - x^2): a hyperbolic diffeomorphism of R^2 whose stable
// manifold through the origin is the graph y = (4/7) x^2.
class QuadSkewFamily final : public DiffeoFamily {
 public:
  int dim() const override { return 2; }
  int param_dim() const override { return 0; }
  Vec sample_param(Prng&) const override { return Vec(0); }
  Vec eval(const Vec&, const Vec& x) const override;
  Mat jacobian(const Vec&, const Vec& x) const override;
  bool has_hessian() const override { return true; }
  Tensor3 hessian(const Vec&, const Vec&) const override;
  bool has_inverse() const override { return true; }
  Vec inverse(const Vec&, const Vec& y) const override;
  Mat inverse_jacobian(const Vec&, const Vec& y) const override;
};

// Smooth embedding of a finite-state random map table into R^1: state i sits
// at coordinate i, each table map becomes a steep smooth interpolant that
// carries a neighborhood of i into a small neighborhood of maps[j][i].
// Forward-only (table rows need not be injective).
class TableEmbedFamily final : public DiffeoFamily {
 public:
  explicit TableEmbedFamily(FiniteRds table, double slope = 0.05);
  int dim() const override { return 1; }
  int param_dim() const override { return 1; }
  Vec sample_param(Prng& prng) const override;
  Vec eval(const Vec& theta, const Vec& x) const override;
  Mat jacobian(const Vec& theta, const Vec& x) const override;
  const FiniteRds& table() const { return table_; }

 private:
  FiniteRds table_;
  double slope_;
  std::vector<double> cdf_;
};

}  // namespace pesin
