// Microbenchmarks for the hot paths: cocycle QR steps, itinerary coding and
// batch entropies, substep integration of discretized flows, and partition
// joins on finite ground sets.
#include <benchmark/benchmark.h>

#include <cstdint>
#include <memory>
#include <vector>

#include "pesin/entropy_mc.hpp"
#include "pesin/finite.hpp"
#include "pesin/flow.hpp"
#include "pesin/oseledets.hpp"
#include "pesin/rds.hpp"
#include "pesin/rng.hpp"

namespace {

using namespace pesin;

// Full spectrum on a d-dimensional OU map, 256 QR steps per iteration.
void BM_SpectrumSteps(benchmark::State& state) {
  const int d = int(state.range(0));
  const AffineRandomFamily fam = AffineRandomFamily::ou(d);
  const int n = 256;
  const OmegaPrefix omega = draw_omega(fam, 1, 0, n);
  const Vec x = Vec::Zero(d);
  for (auto _ : state) {
    SpectrumEstimate est = lyapunov_spectrum(fam, omega, x, n);
    benchmark::DoNotOptimize(est.rho.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SpectrumSteps)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

// Cell coding of stationary samples through a box partition.
void BM_PartitionCoding(benchmark::State& state) {
  const int d = 2;
  PartitionSpec spec;
  spec.center = Vec::Zero(d);
  spec.radius = 3.0;
  spec.g = 16;
  Prng rng(7, stream_id(kStreamScratch, 1));
  std::vector<Vec> pts(4096, Vec(d));
  for (Vec& p : pts)
    for (int i = 0; i < d; ++i) p[i] = 8.0 * rng.uniform() - 4.0;
  for (auto _ : state) {
    std::uint64_t acc = 0;
    for (const Vec& p : pts) acc += spec.cell(p);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(pts.size()));
}
BENCHMARK(BM_PartitionCoding);

// Plug-in + small-sample-corrected entropy over M length-6 itineraries.
void BM_BatchEntropy(benchmark::State& state) {
  const int M = int(state.range(0));
  Prng rng(11, stream_id(kStreamScratch, 2));
  std::vector<std::vector<std::uint32_t>> codes(
      std::size_t(M), std::vector<std::uint32_t>(6));
  for (auto& w : codes)
    for (auto& c : w) c = rng.next_u32() % 17;
  for (auto _ : state) {
    const double h = itinerary_batch_entropy(codes, BiasCorrection::miller_madow);
    benchmark::DoNotOptimize(h);
  }
  state.SetItemsProcessed(state.iterations() * M);
}
BENCHMARK(BM_BatchEntropy)->Arg(1 << 10)->Arg(1 << 13)->Arg(1 << 16);

// One discretized-flow map evaluation as a function of the substep count.
void BM_FlowStep(benchmark::State& state) {
  const int substeps = int(state.range(0));
  const auto model = std::make_shared<OuFlow>(2, 1.0, 1.0);
  const DiscretizedFlowFamily fam = discretize(model, 1.0, substeps, 1);
  Prng rng(3, stream_id(kStreamScratch, 3));
  const Vec theta = fam.sample_param(rng);
  Vec x = 0.1 * Vec::Ones(2);
  for (auto _ : state) {
    x = fam.eval(theta, x);
    benchmark::DoNotOptimize(x.data());
  }
  state.SetItemsProcessed(state.iterations() * substeps);
}
BENCHMARK(BM_FlowStep)->Arg(64)->Arg(256)->Arg(1024)->Arg(4096);

// Common refinement of two random partitions on a large ground set.
void BM_FiniteJoin(benchmark::State& state) {
  const int m = int(state.range(0));
  Prng rng(5, stream_id(kStreamScratch, 4));
  std::vector<int> la(std::size_t(m)), lb(std::size_t(m));
  for (int i = 0; i < m; ++i) {
    la[std::size_t(i)] = int(rng.next_u32() % 64);
    lb[std::size_t(i)] = int(rng.next_u32() % 64);
  }
  const FinitePartition xi = FinitePartition::from_labels(la);
  const FinitePartition eta = FinitePartition::from_labels(lb);
  for (auto _ : state) {
    FinitePartition joined = join(xi, eta);
    benchmark::DoNotOptimize(joined.cell_of.data());
  }
  state.SetItemsProcessed(state.iterations() * m);
}
BENCHMARK(BM_FiniteJoin)->Arg(1 << 10)->Arg(1 << 14)->Arg(1 << 17);

}  // namespace

BENCHMARK_MAIN();
