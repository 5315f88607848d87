#include "pesin/finite.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

#include "pesin/errors.hpp"

namespace pesin {

namespace {

// Relabel cell ids densely in order of first appearance; drops empty cells.
FinitePartition canonicalize(int ground_size, const std::vector<int>& raw) {
  FinitePartition out;
  out.ground_size = ground_size;
  out.cell_of.assign(ground_size, -1);
  std::unordered_map<int, int> relabel;
  relabel.reserve(raw.size());
  for (int x = 0; x < ground_size; ++x) {
    auto [it, inserted] = relabel.try_emplace(raw[x], int(relabel.size()));
    out.cell_of[x] = it->second;
  }
  out.num_cells = int(relabel.size());
  return out;
}

void check_same_ground(int a, int b, const char* what) {
  if (a != b)
    throw config_error(std::string(what) + ": ground sets differ (" +
                       std::to_string(a) + " vs " + std::to_string(b) + ")");
}

std::vector<double> cell_masses(const FinitePartition& xi, const FiniteMeasure& mu) {
  std::vector<double> m(xi.num_cells, 0.0);
  for (int x = 0; x < xi.ground_size; ++x) m[xi.cell_of[x]] += mu.p[x];
  return m;
}

std::uint64_t checked_pow(std::uint64_t base, int e, std::uint64_t cap) {
  std::uint64_t v = 1;
  for (int i = 0; i < e; ++i) {
    if (v > cap / (base == 0 ? 1 : base) + 1) return cap + 1;
    v *= base;
    if (v > cap) return cap + 1;
  }
  return v;
}

}  // namespace

FinitePartition FinitePartition::trivial(int ground_size) {
  return canonicalize(ground_size, std::vector<int>(ground_size, 0));
}

FinitePartition FinitePartition::points(int ground_size) {
  std::vector<int> raw(ground_size);
  for (int x = 0; x < ground_size; ++x) raw[x] = x;
  return canonicalize(ground_size, raw);
}

FinitePartition FinitePartition::from_cells(
    int ground_size, const std::vector<std::vector<int>>& cells) {
  std::vector<int> raw(ground_size, -1);
  for (int c = 0; c < int(cells.size()); ++c) {
    for (int x : cells[c]) {
      if (x < 0 || x >= ground_size)
        throw config_error("partition: point out of range");
      if (raw[x] != -1) throw config_error("partition: cells not disjoint");
      raw[x] = c;
    }
  }
  for (int x = 0; x < ground_size; ++x)
    if (raw[x] == -1) throw config_error("partition: cells do not cover ground set");
  return canonicalize(ground_size, raw);
}

FinitePartition FinitePartition::from_labels(std::vector<int> labels) {
  return canonicalize(int(labels.size()), labels);
}

std::vector<std::vector<int>> FinitePartition::cells() const {
  std::vector<std::vector<int>> out(num_cells);
  for (int x = 0; x < ground_size; ++x) out[cell_of[x]].push_back(x);
  return out;
}

bool FinitePartition::refined_by(const FinitePartition& finer) const {
  check_same_ground(ground_size, finer.ground_size, "refined_by");
  // Constant cell id of *this on each cell of `finer`.
  std::vector<int> image(finer.num_cells, -1);
  for (int x = 0; x < ground_size; ++x) {
    int& im = image[finer.cell_of[x]];
    if (im == -1)
      im = cell_of[x];
    else if (im != cell_of[x])
      return false;
  }
  return true;
}

FiniteMeasure FiniteMeasure::uniform(int ground_size) {
  FiniteMeasure mu;
  mu.p.assign(ground_size, 1.0 / double(ground_size));
  return mu;
}

void FiniteMeasure::validate() const {
  double s = 0.0;
  for (double w : p) {
    if (w < 0.0) throw config_error("measure: negative weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw config_error("measure: weights sum to " + std::to_string(s));
}

double entropy(const FinitePartition& xi, const FiniteMeasure& mu) {
  check_same_ground(xi.ground_size, mu.size(), "entropy");
  double h = 0.0;
  for (double m : cell_masses(xi, mu))
    if (m > 0.0) h -= m * std::log(m);
  return h;
}

double conditional_entropy(const FinitePartition& xi, const FinitePartition& eta,
                           const FiniteMeasure& mu) {
  check_same_ground(xi.ground_size, eta.ground_size, "conditional_entropy");
  check_same_ground(xi.ground_size, mu.size(), "conditional_entropy");
  const FinitePartition joint = join(xi, eta);
  const std::vector<double> mj = cell_masses(joint, mu);
  const std::vector<double> me = cell_masses(eta, mu);
  // Representative eta-cell for each joint cell.
  std::vector<int> eta_of_joint(joint.num_cells, -1);
  for (int x = 0; x < xi.ground_size; ++x)
    eta_of_joint[joint.cell_of[x]] = eta.cell_of[x];
  double h = 0.0;
  for (int c = 0; c < joint.num_cells; ++c) {
    const double m = mj[c];
    if (m <= 0.0) continue;  // zero-mass conditioning contributes nothing
    h -= m * std::log(m / me[eta_of_joint[c]]);
  }
  return h;
}

FinitePartition join(const FinitePartition& xi, const FinitePartition& eta) {
  check_same_ground(xi.ground_size, eta.ground_size, "join");
  std::vector<int> raw(xi.ground_size);
  std::unordered_map<std::uint64_t, int> pair_id;
  pair_id.reserve(std::size_t(xi.num_cells) * 2);
  for (int x = 0; x < xi.ground_size; ++x) {
    const std::uint64_t key =
        (std::uint64_t(xi.cell_of[x]) << 32) | std::uint64_t(eta.cell_of[x]);
    auto [it, inserted] = pair_id.try_emplace(key, int(pair_id.size()));
    raw[x] = it->second;
  }
  return canonicalize(xi.ground_size, raw);
}

FinitePartition pullback(const FinitePartition& xi, const std::vector<int>& map_row) {
  check_same_ground(xi.ground_size, int(map_row.size()), "pullback");
  std::vector<int> raw(xi.ground_size);
  for (int x = 0; x < xi.ground_size; ++x) {
    const int y = map_row[x];
    if (y < 0 || y >= xi.ground_size)
      throw config_error("pullback: table value out of range");
    raw[x] = xi.cell_of[y];
  }
  return canonicalize(xi.ground_size, raw);
}

void FiniteRds::validate() const {
  if (nstates <= 0) throw config_error("rds: empty state set");
  if (maps.empty()) throw config_error("rds: no maps");
  if (nu.size() != maps.size())
    throw config_error("rds: map distribution size mismatch");
  double s = 0.0;
  for (double w : nu) {
    if (w < 0.0) throw config_error("rds: negative map probability");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw config_error("rds: map distribution sums to " + std::to_string(s));
  for (const auto& row : maps) {
    if (int(row.size()) != nstates) throw config_error("rds: ragged map table");
    for (int y : row)
      if (y < 0 || y >= nstates) throw config_error("rds: map value out of range");
  }
}

namespace {

// Iterate all length-n words over `base` symbols, first symbol varying
// slowest (big-endian).  Calls fn(word).
template <typename Fn>
void for_each_word(int base, int n, Fn&& fn) {
  std::vector<int> w(n, 0);
  while (true) {
    fn(w);
    int i = n - 1;
    while (i >= 0 && ++w[i] == base) {
      w[i] = 0;
      --i;
    }
    if (i < 0) break;
  }
}

double word_prob(const FiniteRds& rds, const std::vector<int>& w) {
  double p = 1.0;
  for (int s : w) p *= rds.nu[s];
  return p;
}

// Join of pulled-back partitions along the word: v_{k<n} (f^k_w)^{-1} xi.
FinitePartition itinerary_join(const FiniteRds& rds, const FinitePartition& xi,
                               const std::vector<int>& w, int n) {
  // comp[x] = state after k steps from x; k = 0 is the identity.
  std::vector<int> comp(rds.nstates);
  for (int x = 0; x < rds.nstates; ++x) comp[x] = x;
  FinitePartition acc = pullback(xi, comp);
  for (int k = 1; k < n; ++k) {
    const auto& row = rds.maps[w[k - 1]];
    for (int x = 0; x < rds.nstates; ++x) comp[x] = row[comp[x]];
    acc = join(acc, pullback(xi, comp));
  }
  return acc;
}

}  // namespace

double kifer_n_step(const FiniteRds& rds, const FinitePartition& xi,
                    const FiniteMeasure& mu, int n, std::uint64_t cap) {
  rds.validate();
  mu.validate();
  check_same_ground(xi.ground_size, rds.nstates, "kifer_n_step");
  if (n < 1) throw config_error("kifer_n_step: n >= 1 required");
  if (checked_pow(rds.nmaps(), n, cap) > cap)
    throw config_error(
        "kifer_n_step: word enumeration exceeds cap (|maps|^n > " +
        std::to_string(cap) + "); use the Monte Carlo estimator instead");
  double acc = 0.0;
  // Only the first n-1 symbols enter the join; average over them exactly.
  for_each_word(rds.nmaps(), n > 1 ? n - 1 : 0, [&](const std::vector<int>& w) {
    acc += word_prob(rds, w) * entropy(itinerary_join(rds, xi, w, n), mu);
  });
  return acc / double(n);
}

CylinderPartition CylinderPartition::trivial() { return {}; }

CylinderPartition CylinderPartition::first_symbol(
    const std::vector<int>& label_per_map) {
  CylinderPartition eta;
  eta.depth = 1;
  eta.part = FinitePartition::from_labels(label_per_map);
  return eta;
}

double skew_conditional_n_step(const FiniteRds& rds, const FinitePartition& xi,
                               const CylinderPartition& eta,
                               const FiniteMeasure& mu, int n,
                               std::uint64_t cap) {
  rds.validate();
  mu.validate();
  check_same_ground(xi.ground_size, rds.nstates, "skew_conditional_n_step");
  if (n < 1) throw config_error("skew_conditional_n_step: n >= 1 required");
  const int m = eta.depth;
  if (m > 0 && eta.part.ground_size != int(checked_pow(rds.nmaps(), m, 1u << 30)))
    throw config_error("skew_conditional_n_step: eta ground set is not maps^depth");
  // Word length L: the join needs n-1 symbols, and the eta factor of the
  // k-th pullback reads symbols k .. k+m-1 for k <= n-1.
  const int L = std::max(n, n - 1 + m);
  const std::uint64_t nwords = checked_pow(rds.nmaps(), L, cap);
  if (nwords > cap)
    throw config_error(
        "skew_conditional_n_step: word enumeration exceeds cap; "
        "use the Monte Carlo estimator instead");

  const int S = rds.nstates;
  const std::size_t ground = std::size_t(nwords) * std::size_t(S);
  if (ground > std::size_t(5e7))
    throw config_error("skew_conditional_n_step: product space too large");
  std::vector<double> prod_w;
  prod_w.reserve(ground);
  std::vector<int> fiber_raw(ground);   // word index per product point
  std::vector<int> join_raw(ground, 0);

  // Incremental labels for the join over k of F^{-k}(xi x eta): the label of
  // (w, x) gains the pair (xi(f^k_w x), eta(shift^k w)) at every k.
  std::size_t widx = 0;
  for_each_word(rds.nmaps(), L, [&](const std::vector<int>& w) {
    const double pw = word_prob(rds, w);
    std::vector<int> comp(S);
    for (int x = 0; x < S; ++x) comp[x] = x;
    std::vector<int> label(S, 0);
    std::unordered_map<std::uint64_t, int> relabel;
    for (int k = 0; k < n; ++k) {
      if (k > 0) {
        const auto& row = rds.maps[w[k - 1]];
        for (int x = 0; x < S; ++x) comp[x] = row[comp[x]];
      }
      int eta_cell = 0;
      if (m > 0) {
        int prefix = 0;
        for (int i = 0; i < m; ++i) prefix = prefix * rds.nmaps() + w[k + i];
        eta_cell = eta.part.cell_of[prefix];
      }
      relabel.clear();
      for (int x = 0; x < S; ++x) {
        // Exact packing: label < S, cells < S and < nmaps^m respectively.
        const std::uint64_t key =
            (std::uint64_t(label[x]) * std::uint64_t(S + 1) +
             std::uint64_t(xi.cell_of[comp[x]])) *
                std::uint64_t(eta.part.num_cells + 1) +
            std::uint64_t(eta_cell);
        auto [it, inserted] = relabel.try_emplace(key, int(relabel.size()));
        label[x] = it->second;
      }
    }
    for (int x = 0; x < S; ++x) {
      const std::size_t idx = widx * S + x;
      fiber_raw[idx] = int(widx);
      join_raw[idx] = label[x];
      prod_w.push_back(pw * mu.p[x]);
    }
    ++widx;
  });

  // Join labels are only unique within a fiber; make them globally unique by
  // pairing with the word index (the conditional entropy given the fiber
  // partition is unaffected).
  std::vector<int> joint(ground);
  {
    std::unordered_map<std::uint64_t, int> relabel;
    for (std::size_t i = 0; i < ground; ++i) {
      const std::uint64_t key =
          std::uint64_t(fiber_raw[i]) * std::uint64_t(S + 1) +
          std::uint64_t(join_raw[i]);
      auto [it, inserted] = relabel.try_emplace(key, int(relabel.size()));
      joint[i] = it->second;
    }
  }

  FiniteMeasure prod_mu;
  prod_mu.p = std::move(prod_w);
  const FinitePartition join_part = FinitePartition::from_labels(std::move(joint));
  const FinitePartition fibers = FinitePartition::from_labels(std::move(fiber_raw));
  return conditional_entropy(join_part, fibers, prod_mu) / double(n);
}

FiniteRds compose_rds(const FiniteRds& rds, int t, std::uint64_t cap) {
  rds.validate();
  if (t < 1) throw config_error("compose_rds: t >= 1 required");
  const std::uint64_t nwords = checked_pow(rds.nmaps(), t, cap);
  if (nwords > cap) throw config_error("compose_rds: composition cap exceeded");
  FiniteRds out;
  out.nstates = rds.nstates;
  for_each_word(rds.nmaps(), t, [&](const std::vector<int>& w) {
    std::vector<int> comp(rds.nstates);
    for (int x = 0; x < rds.nstates; ++x) comp[x] = x;
    for (int k = 0; k < t; ++k) {
      const auto& row = rds.maps[w[k]];
      for (int x = 0; x < rds.nstates; ++x) comp[x] = row[comp[x]];
    }
    out.maps.push_back(std::move(comp));
    out.nu.push_back(word_prob(rds, w));
  });
  return out;
}

}  // namespace pesin
