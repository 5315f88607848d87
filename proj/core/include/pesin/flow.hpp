#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "pesin/rds.hpp"

namespace pesin {

// Ito SDE dX = b(X) dt + sigma(X) dW on R^d with m-dimensional Brownian
// noise, coefficients autonomous, derivatives analytic.  The pair
// (a(x,y) = sigma(x) sigma(y)^T, b) are the local characteristics of the
// driving field.
class SdeFlowModel {
 public:
  virtual ~SdeFlowModel() = default;

  virtual int dim() const = 0;
  virtual int noise_dim() const = 0;

  virtual Vec drift(const Vec& x) const = 0;
  // (i,k) = d b_i / d x_k
  virtual Mat drift_jacobian(const Vec& x) const = 0;
  // [i](k,l) = d^2 b_i / d x_k d x_l
  virtual Tensor3 drift_hessian(const Vec& x) const;

  virtual Mat sigma(const Vec& x) const = 0;  // d x m
  // [j](i,k) = d sigma_{ij} / d x_k, one matrix per noise column
  virtual std::vector<Mat> sigma_jacobian(const Vec& x) const = 0;
  // [j][i](k,l) = d^2 sigma_{ij} / d x_k d x_l
  virtual std::vector<Tensor3> sigma_hessian(const Vec& x) const;

  virtual bool has_second_order() const { return false; }
  // True when the noise columns have no iterated-integral coupling (scalar
  // noise, or d == m with sigma structurally diagonal): the Milstein scheme
  // then needs no Levy areas.
  virtual bool diagonal_noise() const { return noise_dim() == 1; }
};

// Brownian increments over one time window, regenerable bit-exactly from the
// stream key.
struct NoiseSegment {
  double horizon = 1.0;
  int substeps = 0;
  Eigen::MatrixXd dW;  // noise_dim x substeps, each column ~ N(0, h I)
  std::uint64_t seed = 0;
  std::uint64_t id = 0;

  double h() const { return horizon / double(substeps); }
  static NoiseSegment draw(int noise_dim, double horizon, int substeps,
                           std::uint64_t seed, std::uint64_t id);
  // Time-reversed, sign-flipped increments (drives the backward flow).
  NoiseSegment reversed_negated() const;
  // This segment followed by `tail` (pathwise flow composition).
  NoiseSegment concat(const NoiseSegment& tail) const;
};

// One integrated window: image, flow Jacobian from the first variational
// equation, optionally the flow Hessian from the second.
struct FlowStep {
  Vec y;
  Mat jacobian;         // deriv_level >= 1
  Tensor3 hessian;      // deriv_level >= 2
  int deriv_level = 0;
  double step_size = 0.0;  // reported integrator resolution
  int order = 1;
};

// Euler-Maruyama (order 1) or diagonal Milstein (order 2) over the segment's
// substeps; the variational equations differentiate the discrete step map
// exactly, so the Jacobian matches finite differences of the *discretized*
// flow, not just the continuous one.
FlowStep integrate_flow(const SdeFlowModel& model, const Vec& x,
                        const NoiseSegment& seg, int order = 1,
                        int deriv_level = 1);

// c_i(x) = sum_j d a_{ij}/d x_j (x,y)|_{y=x} = sum_m (Dsigma^{(m)} sigma^{(m)})_i;
// the drift correction relating forward and backward flows.
Vec correction_term(const SdeFlowModel& model, const Vec& x);

// Weighted-sup + derivative-sup + Hölder-quotient seminorms of the local
// characteristics, evaluated on a grid over a box.  The sup over R^d is
// truncated to the box, so the result is a lower bound.
struct CharNorms {
  double a_norm = 0.0;  // ||a||~_{m+delta} over the box
  double b_norm = 0.0;  // ||b||_{m+delta} over the box
  double box_radius = 0.0;
  int grid = 0;
  bool lower_bound_only = true;
};
CharNorms characteristic_norms(const SdeFlowModel& model, const Vec& center,
                               double radius, int m_order, double delta,
                               int grid);

// The time-1 (or horizon-t) flow map as a random-diffeomorphism family: each
// parameter record encodes a fresh segment key, increments are regenerated on
// demand, inverses integrate the reversed segment backward with the
// correction term.
class DiscretizedFlowFamily final : public DiffeoFamily {
 public:
  DiscretizedFlowFamily(std::shared_ptr<const SdeFlowModel> model,
                        double horizon, int substeps, int order);

  int dim() const override { return model_->dim(); }
  int param_dim() const override { return 2; }
  Vec sample_param(Prng& prng) const override;

  Vec eval(const Vec& theta, const Vec& x) const override;
  Mat jacobian(const Vec& theta, const Vec& x) const override;
  bool has_hessian() const override { return model_->has_second_order(); }
  Tensor3 hessian(const Vec& theta, const Vec& x) const override;

  bool has_inverse() const override { return true; }
  Vec inverse(const Vec& theta, const Vec& y) const override;

  const SdeFlowModel& model() const { return *model_; }
  double horizon() const { return horizon_; }
  int substeps() const { return substeps_; }
  int order() const { return order_; }

  // Worst forward-then-backward residual measured on probe points at
  // construction; above 1e-3 the model is flagged as needing more substeps.
  double inverse_probe_residual() const { return probe_residual_; }
  bool needs_more_substeps() const { return probe_residual_ > 1e-3; }

  NoiseSegment segment_for(const Vec& theta) const;

 private:
  std::shared_ptr<const SdeFlowModel> model_;
  double horizon_;
  int substeps_;
  int order_;
  double probe_residual_ = 0.0;
};

// Wraps the model for the given window and runs the inverse-consistency probe.
DiscretizedFlowFamily discretize(std::shared_ptr<const SdeFlowModel> model,
                                 double horizon = 1.0, int substeps = 1024,
                                 int order = 1);

// ---- Built-in models -------------------------------------------------------

// dX = -rate X dt + sigma dW, additive noise, d independent components.
class OuFlow final : public SdeFlowModel {
 public:
  OuFlow(int d, double rate, double sigma);
  int dim() const override { return d_; }
  int noise_dim() const override { return d_; }
  Vec drift(const Vec& x) const override { return -rate_ * x; }
  Mat drift_jacobian(const Vec&) const override {
    return -rate_ * Mat::Identity(d_, d_);
  }
  Tensor3 drift_hessian(const Vec&) const override;
  Mat sigma(const Vec&) const override { return sigma_ * Mat::Identity(d_, d_); }
  std::vector<Mat> sigma_jacobian(const Vec&) const override;
  std::vector<Tensor3> sigma_hessian(const Vec&) const override;
  bool has_second_order() const override { return true; }
  bool diagonal_noise() const override { return true; }

 private:
  int d_;
  double rate_, sigma_;
};

// dX = (X - X^3) dt + sigma dW: gradient flow of the double well
// V(x) = x^4/4 - x^2/2 with additive noise, d = 1.
class GradientDoubleWellFlow final : public SdeFlowModel {
 public:
  explicit GradientDoubleWellFlow(double sigma) : sigma_(sigma) {}
  int dim() const override { return 1; }
  int noise_dim() const override { return 1; }
  Vec drift(const Vec& x) const override;
  Mat drift_jacobian(const Vec& x) const override;
  Tensor3 drift_hessian(const Vec& x) const override;
  Mat sigma(const Vec&) const override;
  std::vector<Mat> sigma_jacobian(const Vec&) const override;
  std::vector<Tensor3> sigma_hessian(const Vec&) const override;
  bool has_second_order() const override { return true; }

 private:
  double sigma_;
};

// Noisy Duffing-van der Pol oscillator:
//   dx = y dt
//   dy = (alpha x + beta y - x^3 - x^2 y) dt + (sigma_add + sigma_mult x) dW
// scalar noise on the velocity component.
class DuffingVdpFlow final : public SdeFlowModel {
 public:
  DuffingVdpFlow(double alpha, double beta, double sigma_add,
                 double sigma_mult);
  int dim() const override { return 2; }
  int noise_dim() const override { return 1; }
  Vec drift(const Vec& x) const override;
  Mat drift_jacobian(const Vec& x) const override;
  Tensor3 drift_hessian(const Vec& x) const override;
  Mat sigma(const Vec& x) const override;
  std::vector<Mat> sigma_jacobian(const Vec& x) const override;
  std::vector<Tensor3> sigma_hessian(const Vec& x) const override;
  bool has_second_order() const override { return true; }

 private:
  double alpha_, beta_, sigma_add_, sigma_mult_;
};

}  // namespace pesin
