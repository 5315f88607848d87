#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "pesin/errors.hpp"
#include "pesin/finite.hpp"
#include "pesin/rng.hpp"

using namespace pesin;

namespace {

FiniteMeasure rand_measure(Prng& prng, int n) {
  FiniteMeasure mu;
  mu.p.resize(std::size_t(n));
  double s = 0.0;
  for (double& w : mu.p) {
    w = 0.05 + prng.uniform();
    s += w;
  }
  for (double& w : mu.p) w /= s;
  // Renormalize exactly so validate()'s 1e-12 budget is never at risk.
  double sum2 = std::accumulate(mu.p.begin(), mu.p.end(), 0.0);
  mu.p.back() += 1.0 - sum2;
  return mu;
}

FinitePartition rand_partition(Prng& prng, int n, int max_cells) {
  std::vector<int> labels(std::size_t(n));
  for (int& l : labels) l = int(prng.next_u32() % std::uint32_t(max_cells));
  return FinitePartition::from_labels(std::move(labels));
}

std::vector<int> rand_permutation(Prng& prng, int n) {
  std::vector<int> perm(std::size_t(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = int(prng.next_u32() % std::uint32_t(i + 1));
    std::swap(perm[std::size_t(i)], perm[std::size_t(j)]);
  }
  return perm;
}

// Fixed enumerable systems reused across the suite; the expected numbers
// next to them were computed by an independent exact enumeration.
FiniteRds rds_three_maps() {
  FiniteRds rds;
  rds.nstates = 4;
  rds.maps = {{1, 2, 0, 3}, {0, 0, 2, 1}, {3, 1, 1, 2}};
  rds.nu = {0.5, 0.3, 0.2};
  return rds;
}

FiniteRds rds_two_maps() {
  FiniteRds rds;
  rds.nstates = 3;
  rds.maps = {{2, 0, 1}, {1, 1, 0}};
  rds.nu = {0.6, 0.4};
  return rds;
}

FiniteRds rds_const_maps() {
  FiniteRds rds;
  rds.nstates = 2;
  rds.maps = {{0, 0}, {1, 1}};
  rds.nu = {0.5, 0.5};
  return rds;
}

}  // namespace

TEST_SUITE("finite") {

TEST_CASE("entropy closed forms") {
  const FiniteMeasure uni4 = FiniteMeasure::uniform(4);
  CHECK(std::abs(entropy(FinitePartition::points(4), uni4) - std::log(4.0)) <=
        1e-12);
  CHECK(entropy(FinitePartition::trivial(4), uni4) == 0.0);

  FiniteMeasure mu;
  mu.p = {0.5, 0.25, 0.25};
  CHECK(std::abs(entropy(FinitePartition::points(3), mu) -
                 1.0397207708399179) <= 1e-12);
}

TEST_CASE("zero-mass points contribute nothing") {
  FiniteMeasure mu;
  mu.p = {0.5, 0.5, 0.0};
  CHECK(std::abs(entropy(FinitePartition::points(3), mu) - std::log(2.0)) <=
        1e-12);
}

TEST_CASE("conditional entropy closed forms") {
  Prng prng(101, stream_id(kStreamScratch, 1));
  const FiniteMeasure mu = rand_measure(prng, 6);
  const FinitePartition xi = rand_partition(prng, 6, 3);

  // Trivial condition recovers the plain entropy.
  CHECK(std::abs(conditional_entropy(xi, FinitePartition::trivial(6), mu) -
                 entropy(xi, mu)) <= 1e-12);

  // Conditioning on a refinement of xi removes all uncertainty.
  const FinitePartition finer = join(xi, rand_partition(prng, 6, 4));
  CHECK(std::abs(conditional_entropy(xi, finer, mu)) <= 1e-12);

  // Hand-enumerated four-point value.
  FiniteMeasure mu4;
  mu4.p = {0.4, 0.1, 0.25, 0.25};
  const auto xi4 = FinitePartition::from_cells(4, {{0, 1}, {2, 3}});
  const auto eta4 = FinitePartition::from_cells(4, {{0, 2}, {1, 3}});
  CHECK(std::abs(conditional_entropy(xi4, eta4, mu4) - 0.6424753435743795) <=
        1e-12);
}

TEST_CASE("zero-mass conditioning cells are skipped") {
  FiniteMeasure mu;
  mu.p = {0.5, 0.5, 0.0, 0.0};
  const auto xi = FinitePartition::from_cells(4, {{0, 2}, {1, 3}});
  const auto eta = FinitePartition::from_cells(4, {{0, 1}, {2, 3}});
  // The massless eta-cell {2,3} contributes nothing; within {0,1} the xi
  // split is even.
  CHECK(std::abs(conditional_entropy(xi, eta, mu) - std::log(2.0)) <= 1e-12);
}

TEST_CASE("entropy calculus identities on random instances") {
  Prng prng(202, stream_id(kStreamScratch, 2));
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 4 + int(prng.next_u32() % 9u);  // 4..12 points
    const FiniteMeasure mu = rand_measure(prng, n);
    const FinitePartition xi = rand_partition(prng, n, 3);
    const FinitePartition eta = rand_partition(prng, n, 3);
    const FinitePartition zeta = rand_partition(prng, n, 2);

    // Chain rule.
    const double lhs = conditional_entropy(join(xi, eta), zeta, mu);
    const double rhs = conditional_entropy(xi, zeta, mu) +
                       conditional_entropy(eta, join(xi, zeta), mu);
    CHECK(std::abs(lhs - rhs) <= 1e-12);

    // Conditioning cannot increase entropy; joining cannot decrease it.
    CHECK(conditional_entropy(xi, eta, mu) <= entropy(xi, mu) + 1e-12);
    CHECK(conditional_entropy(join(xi, eta), zeta, mu) >=
          conditional_entropy(xi, zeta, mu) - 1e-12);

    // Nested refinements give nondecreasing conditional entropies.
    const double h1 = conditional_entropy(xi, zeta, mu);
    const double h2 = conditional_entropy(join(xi, eta), zeta, mu);
    const double h3 =
        conditional_entropy(join(join(xi, eta), rand_partition(prng, n, 4)),
                            zeta, mu);
    CHECK(h1 <= h2 + 1e-12);
    CHECK(h2 <= h3 + 1e-12);
  }
}

TEST_CASE("join algebra") {
  Prng prng(303, stream_id(kStreamScratch, 3));
  const FinitePartition xi = rand_partition(prng, 8, 3);
  CHECK(join(xi, FinitePartition::trivial(8)) == xi);
  CHECK(join(xi, xi) == xi);
  const FinitePartition eta = rand_partition(prng, 8, 3);
  CHECK(join(xi, eta) == join(eta, xi));

  const auto evens = FinitePartition::from_cells(4, {{0, 1}, {2, 3}});
  const auto odds = FinitePartition::from_cells(4, {{0, 2}, {1, 3}});
  CHECK(join(evens, odds) == FinitePartition::points(4));
}

TEST_CASE("pullback closed forms") {
  const auto xi = FinitePartition::from_cells(4, {{0, 1}, {2, 3}});
  std::vector<int> ident = {0, 1, 2, 3};
  CHECK(pullback(xi, ident) == xi);

  std::vector<int> constant = {2, 2, 2, 2};
  CHECK(pullback(xi, constant) == FinitePartition::trivial(4));

  // Doubling on Z_8.  The parity partition pulls back to the trivial one
  // (2i is always even); the halves partition pulls back to the mod-4 split.
  std::vector<int> dbl(8);
  for (int i = 0; i < 8; ++i) dbl[std::size_t(i)] = (2 * i) % 8;
  const auto parity =
      FinitePartition::from_cells(8, {{0, 2, 4, 6}, {1, 3, 5, 7}});
  CHECK(pullback(parity, dbl) == FinitePartition::trivial(8));
  const auto halves =
      FinitePartition::from_cells(8, {{0, 1, 2, 3}, {4, 5, 6, 7}});
  CHECK(pullback(halves, dbl) ==
        FinitePartition::from_cells(8, {{0, 1, 4, 5}, {2, 3, 6, 7}}));
}

TEST_CASE("measure-preserving pullback leaves conditional entropy fixed") {
  Prng prng(404, stream_id(kStreamScratch, 4));
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 5 + int(prng.next_u32() % 8u);
    const FiniteMeasure mu = FiniteMeasure::uniform(n);
    const FinitePartition xi = rand_partition(prng, n, 3);
    const FinitePartition eta = rand_partition(prng, n, 3);
    const std::vector<int> T = rand_permutation(prng, n);
    const double before = conditional_entropy(xi, eta, mu);
    const double after = conditional_entropy(pullback(xi, T), pullback(eta, T), mu);
    CHECK(std::abs(before - after) <= 1e-12);
  }
}

TEST_CASE("partition and measure validation") {
  CHECK_THROWS_AS(FinitePartition::from_cells(3, {{0, 1}}), config_error);
  CHECK_THROWS_AS(FinitePartition::from_cells(3, {{0, 1}, {1, 2}}),
                  config_error);
  CHECK_THROWS_AS(FinitePartition::from_cells(3, {{0, 1}, {2, 5}}),
                  config_error);

  FiniteMeasure bad;
  bad.p = {0.5, 0.6};
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad.p = {-0.1, 1.1};
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("refinement predicate") {
  const auto xi = FinitePartition::from_cells(4, {{0, 1}, {2, 3}});
  CHECK(xi.refined_by(FinitePartition::points(4)));
  CHECK(FinitePartition::trivial(4).refined_by(xi));
  CHECK(xi.refined_by(xi));
  const auto cross = FinitePartition::from_cells(4, {{0, 2}, {1, 3}});
  CHECK_FALSE(xi.refined_by(cross));
}

TEST_CASE("kifer entropy closed forms") {
  // Identity-only system: every join collapses to xi.
  FiniteRds ident;
  ident.nstates = 4;
  ident.maps = {{0, 1, 2, 3}};
  ident.nu = {1.0};
  Prng prng(505, stream_id(kStreamScratch, 5));
  const FiniteMeasure mu = rand_measure(prng, 4);
  const FinitePartition xi = rand_partition(prng, 4, 3);
  for (int n = 1; n <= 5; ++n)
    CHECK(std::abs(kifer_n_step(ident, xi, mu, n) -
                   entropy(xi, mu) / double(n)) <= 1e-12);

  // Constant maps: joins beyond the first pullback are trivial.
  const FiniteRds cm = rds_const_maps();
  const FiniteMeasure uni = FiniteMeasure::uniform(2);
  for (int n = 1; n <= 6; ++n)
    CHECK(std::abs(kifer_n_step(cm, FinitePartition::points(2), uni, n) -
                   std::log(2.0) / double(n)) <= 1e-12);
}

TEST_CASE("kifer entropy is bounded by the finite-space ceiling") {
  FiniteRds perms;
  perms.nstates = 5;
  perms.maps = {{1, 2, 3, 4, 0}, {0, 2, 1, 4, 3}};
  perms.nu = {0.5, 0.5};
  Prng prng(606, stream_id(kStreamScratch, 6));
  const FiniteMeasure mu = rand_measure(prng, 5);
  const FinitePartition xi = rand_partition(prng, 5, 3);
  for (int n = 1; n <= 6; ++n) {
    const double h = kifer_n_step(perms, xi, mu, n);
    CHECK(h >= -1e-12);
    CHECK(h <= std::log(5.0) / double(n) + 1e-12);
  }
}

TEST_CASE("kifer entropy matches an independent enumeration") {
  FiniteMeasure mu_a;
  mu_a.p = {0.1, 0.2, 0.3, 0.4};
  const auto xi_a = FinitePartition::from_labels({0, 1, 0, 1});
  const FiniteRds a = rds_three_maps();
  CHECK(std::abs(kifer_n_step(a, xi_a, mu_a, 1) - 0.6730116670092563) <= 1e-12);
  CHECK(std::abs(kifer_n_step(a, xi_a, mu_a, 2) - 0.5836935984549529) <= 1e-12);
  CHECK(std::abs(kifer_n_step(a, xi_a, mu_a, 3) - 0.415371372385513) <= 1e-12);
  CHECK(std::abs(kifer_n_step(a, xi_a, mu_a, 4) - 0.31743304830763225) <= 1e-12);

  FiniteMeasure mu_b;
  mu_b.p = {0.2, 0.5, 0.3};
  const FiniteRds b = rds_two_maps();
  const auto points = FinitePartition::points(3);
  CHECK(std::abs(kifer_n_step(b, points, mu_b, 1) - 1.0296530140645737) <= 1e-12);
  CHECK(std::abs(kifer_n_step(b, points, mu_b, 3) - 0.34321767135485787) <= 1e-12);
  CHECK(std::abs(kifer_n_step(b, points, mu_b, 5) - 0.2059306028129147) <= 1e-12);

  const auto coarse = FinitePartition::from_labels({0, 0, 1});
  CHECK(std::abs(kifer_n_step(b, coarse, mu_b, 1) - 0.6108643020548935) <= 1e-12);
  CHECK(std::abs(kifer_n_step(b, coarse, mu_b, 2) - 0.43106876463035076) <= 1e-12);
  CHECK(std::abs(kifer_n_step(b, coarse, mu_b, 4) - 0.2155343823151754) <= 1e-12);
  CHECK(std::abs(kifer_n_step(b, coarse, mu_b, 6) - 0.143689588210117) <= 1e-12);
}

TEST_CASE("kifer enumeration refuses past the word cap") {
  const FiniteRds a = rds_three_maps();
  const FiniteMeasure mu = FiniteMeasure::uniform(4);
  const auto xi = FinitePartition::points(4);
  CHECK_THROWS_AS(kifer_n_step(a, xi, mu, 20, 1000), config_error);
}

TEST_CASE("skew-product conditional entropy equals the kifer value") {
  Prng prng(707, stream_id(kStreamScratch, 7));
  const FiniteRds systems[] = {rds_three_maps(), rds_two_maps(),
                               rds_const_maps()};
  for (const FiniteRds& rds : systems) {
    const FiniteMeasure mu = rand_measure(prng, rds.nstates);
    const FinitePartition xi = rand_partition(prng, rds.nstates, 3);

    std::vector<int> labels(std::size_t(rds.nmaps()));
    for (std::size_t j = 0; j < labels.size(); ++j)
      labels[j] = int(j % 2);  // nontrivial word partition
    const CylinderPartition etas[] = {CylinderPartition::trivial(),
                                      CylinderPartition::first_symbol(labels)};
    for (int n = 1; n <= 4; ++n) {
      const double ref = kifer_n_step(rds, xi, mu, n);
      for (const CylinderPartition& eta : etas) {
        CHECK(std::abs(skew_conditional_n_step(rds, xi, eta, mu, n) - ref) <=
              1e-12);
      }
    }
  }
}

TEST_CASE("one-map system reduces to deterministic entropy") {
  FiniteRds det;
  det.nstates = 4;
  det.maps = {{1, 2, 3, 0}};
  det.nu = {1.0};
  Prng prng(808, stream_id(kStreamScratch, 8));
  const FiniteMeasure mu = FiniteMeasure::uniform(4);
  const FinitePartition xi = rand_partition(prng, 4, 2);
  for (int n = 1; n <= 4; ++n) {
    const double ref = kifer_n_step(det, xi, mu, n);
    CHECK(std::abs(skew_conditional_n_step(det, xi, CylinderPartition::trivial(),
                                           mu, n) - ref) <= 1e-12);
  }
}

TEST_CASE("composed system realizes the law of t-fold words") {
  const FiniteRds b = rds_two_maps();
  const FiniteRds b2 = compose_rds(b, 2);
  REQUIRE(b2.nmaps() == 4);
  for (int w0 = 0; w0 < 2; ++w0) {
    for (int w1 = 0; w1 < 2; ++w1) {
      const int idx = w0 * 2 + w1;
      CHECK(b2.nu[std::size_t(idx)] ==
            doctest::Approx(b.nu[std::size_t(w0)] * b.nu[std::size_t(w1)])
                .epsilon(1e-15));
      for (int x = 0; x < 3; ++x) {
        const int expect =
            b.maps[std::size_t(w1)][std::size_t(
                b.maps[std::size_t(w0)][std::size_t(x)])];
        CHECK(b2.maps[std::size_t(idx)][std::size_t(x)] == expect);
      }
    }
  }
  CHECK_THROWS_AS(compose_rds(rds_three_maps(), 20, 1000), config_error);
}

}  // TEST_SUITE
