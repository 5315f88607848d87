#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pesin/finite.hpp"
#include "pesin/rds.hpp"

namespace pesin {

// Box partition of R^d: g cells per axis over [center - R, center + R]^d,
// plus one unbounded complement cell (id g^d).  g = 0 is the trivial
// partition (everything in one cell).
struct PartitionSpec {
  Vec center;
  double radius = 1.0;
  int g = 8;

  std::uint32_t cells() const;
  std::uint32_t cell(const Vec& x) const;
  std::uint32_t stray_cell() const;  // id of the unbounded complement

  // Box from the measure itself: center at the sample mean, radius a
  // multiple of the pooled per-axis standard deviation (default 6).
  static PartitionSpec fit(const MeasureRepr& mu, int g, std::uint64_t seed,
                           double sd_multiple = 6.0, int samples = 4096);
};

enum class BiasCorrection { none, miller_madow, jackknife };

// Plug-in entropy (nats) of a batch of equal-length itineraries, with the
// chosen small-sample correction.
double itinerary_batch_entropy(
    const std::vector<std::vector<std::uint32_t>>& codes,
    BiasCorrection mode = BiasCorrection::miller_madow);

struct EntropyEstimate {
  double H = 0.0;
  double se = 0.0;
  double stray_mass = 0.0;  // fraction of visited cells in the complement
  int m_omega = 0;
  int m_x = 0;
};

// Noise-averaged itinerary entropy at one depth: for each of M_omega noise
// draws, codes M_x stationary samples into length-n cell itineraries and
// takes the corrected plug-in entropy; returns mean and SE over noise draws.
EntropyEstimate itinerary_entropy(const DiffeoFamily& family,
                                  const MeasureRepr& mu,
                                  const PartitionSpec& spec, int n, int m_omega,
                                  int m_x, std::uint64_t seed, int threads = 1,
                                  BiasCorrection mode =
                                      BiasCorrection::miller_madow);

struct EntropyCurve {
  std::vector<int> n;
  std::vector<double> H;
  std::vector<double> se;
  std::vector<double> stray;
  int m_omega = 0;
  int m_x = 0;
  int g = 0;
};

EntropyCurve entropy_curve(const DiffeoFamily& family, const MeasureRepr& mu,
                           const PartitionSpec& spec,
                           const std::vector<int>& depths, int m_omega, int m_x,
                           std::uint64_t seed, int threads = 1,
                           BiasCorrection mode = BiasCorrection::miller_madow);

// Entropy rate as the trailing-window slope of H_n against n (the slope
// cancels the partition-sized additive transient).  Strongly negative slopes
// (beyond 3 SE) clamp to zero with a flag.
struct RateEstimate {
  double rate = 0.0;
  double se = 0.0;
  bool clamped = false;
};
RateEstimate entropy_rate(const EntropyCurve& curve, int window = 5);

enum class Verdict {
  equality_consistent,
  inequality_consistent,
  violation,
  inconclusive
};
std::string verdict_name(Verdict v);

struct PesinBudget {
  int m_omega = 16;
  int m_x = 2000;
  int n_max = 10;
  int g0 = 8;
  int g_max = 64;
  int window = 5;
  int spectrum_samples = 8;   // mu-samples of full exponent runs
  int spectrum_horizon = 2000;
  double stabilize_tol = 0.02;  // nats: ladder stops when the rate settles
  double tol_floor = 0.05;      // nats: resolution floor added to half-widths
  int threads = 1;
  std::uint64_t seed = 1;
};

struct PesinReport {
  double h = 0.0;
  double h_halfwidth = 0.0;
  double sum_positive = 0.0;
  double sum_halfwidth = 0.0;
  double gap = 0.0;  // h - sum_positive
  Verdict verdict = Verdict::inconclusive;
  bool ladder_stabilized = false;
  std::vector<int> ladder_g;
  std::vector<double> ladder_rate;
  std::vector<double> ladder_rate_se;
  EntropyCurve final_curve;
};

// Entropy-versus-exponent verification: itinerary entropy over a refinement
// ladder (g doubling until the rate stabilizes) against the mu-averaged sum
// of positive exponents.  "violation" is declared only in the direction the
// theory forbids: h above the exponent sum by more than the combined
// half-widths plus the resolution floor.
PesinReport pesin_gap(const DiffeoFamily& family, const MeasureRepr& mu,
                      const PesinBudget& budget);

// Time-scaling consistency on exact finite oracles: the t-step composed
// system must reproduce the base per-physical-time entropy rate.
struct ScalingResult {
  double ratio = 1.0;
  double rate_base = 0.0;      // per physical step
  double rate_composed = 0.0;  // per physical step
  bool degenerate = false;     // both rates zero: ratio defined as 1
};
ScalingResult scaling_check(const FiniteRds& rds, const FinitePartition& xi,
                            const FiniteMeasure& mu, int n, int t,
                            std::uint64_t cap = 1000000);

}  // namespace pesin
