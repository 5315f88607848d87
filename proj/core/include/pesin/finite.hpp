#pragma once

#include <cstdint>
#include <vector>

namespace pesin {

// Exact entropy calculus on finite probability spaces, used as ground truth
// for the Monte Carlo estimators: partitions of an integer-indexed ground
// set, joins, conditional entropies, and small random-map ensembles whose
// noise-averaged itinerary entropy can be enumerated exactly.

// Partition of {0, ..., ground_size-1}, stored as a cell id per point.
// Canonical form: cell ids are dense and ordered by first appearance, so two
// partitions are equal iff their cell arrays are equal.
struct FinitePartition {
  int ground_size = 0;
  std::vector<int> cell_of;  // size == ground_size
  int num_cells = 0;

  static FinitePartition trivial(int ground_size);
  static FinitePartition points(int ground_size);
  // Build from explicit cells; every point must appear in exactly one cell.
  static FinitePartition from_cells(int ground_size,
                                    const std::vector<std::vector<int>>& cells);
  static FinitePartition from_labels(std::vector<int> labels);

  std::vector<std::vector<int>> cells() const;
  bool operator==(const FinitePartition&) const = default;

  // True when every cell of this partition is a union of cells of `finer`
  // (i.e. `finer` refines *this).
  bool refined_by(const FinitePartition& finer) const;
};

// Probability weights on the ground set; must sum to 1 within 1e-12.
// Zero-mass points are legal and contribute nothing anywhere (0 log 0 = 0).
struct FiniteMeasure {
  std::vector<double> p;

  static FiniteMeasure uniform(int ground_size);
  void validate() const;
  int size() const { return int(p.size()); }
};

// H_mu(xi) = -sum_C mu(C) log mu(C) over positive-mass cells, in nats.
double entropy(const FinitePartition& xi, const FiniteMeasure& mu);

// H_mu(xi | eta) = -sum_x mu(x) log mu_{eta(x)}(xi(x) /\ eta(x)),
// evaluated cellwise; zero-mass conditioning cells are skipped.
double conditional_entropy(const FinitePartition& xi, const FinitePartition& eta,
                           const FiniteMeasure& mu);

// Coarsest common refinement xi v eta.
FinitePartition join(const FinitePartition& xi, const FinitePartition& eta);

// T^{-1} xi for a total table T: cell of x is the xi-cell of T(x); empty
// preimage cells are dropped by canonicalization.
FinitePartition pullback(const FinitePartition& xi, const std::vector<int>& map_row);

// Finite-state random dynamical system: i.i.d. map indices drawn from `nu`,
// each index selecting a total self-map of the state set.
struct FiniteRds {
  int nstates = 0;
  std::vector<std::vector<int>> maps;  // maps[j][x] = image of x under map j
  std::vector<double> nu;              // probability per map index

  void validate() const;
  int nmaps() const { return int(maps.size()); }
};

// Exact noise-averaged itinerary entropy
//   (1/n) sum_w nu^n(w) H_mu( v_{k=0}^{n-1} (f^k_w)^{-1} xi )
// over all length-n map words w; refuses when |maps|^n exceeds `cap`.
double kifer_n_step(const FiniteRds& rds, const FinitePartition& xi,
                    const FiniteMeasure& mu, int n,
                    std::uint64_t cap = 1000000);

// Partition of the map-word space depending only on the first `depth`
// symbols; word index is big-endian in the symbols (first symbol = highest
// digit).  depth 0 is the trivial partition.
struct CylinderPartition {
  int depth = 0;
  FinitePartition part;  // over nmaps^depth word prefixes (ignored at depth 0)

  static CylinderPartition trivial();
  static CylinderPartition first_symbol(const std::vector<int>& label_per_map);
};

// Same quantity computed the long way round, through the one-sided skew
// product on (word space) x (state space): conditional entropy of the join
// of pulled-back product cells given the word fibers,
//   (1/n) H_{nu^L x mu}( v_{k<n} F^{-k}(xi x eta) | fiber partition ).
// Must agree with kifer_n_step to 1e-12 for every finite n and any eta.
double skew_conditional_n_step(const FiniteRds& rds, const FinitePartition& xi,
                               const CylinderPartition& eta,
                               const FiniteMeasure& mu, int n,
                               std::uint64_t cap = 1000000);

// The t-fold composed system: maps indexed by length-t words of the base
// system, each with the product probability (the law of t-step compositions).
FiniteRds compose_rds(const FiniteRds& rds, int t, std::uint64_t cap = 1000000);

}  // namespace pesin
