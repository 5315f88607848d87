#pragma once

#include <array>
#include <cstdint>

namespace pesin {

// Counter-based random numbers (Philox4x32-10).  Every draw is a pure
// function of (key, counter), so Monte Carlo replicates keyed by
// (seed, replicate, step) can be evaluated in any order and on any number of
// workers without changing a single bit of the stream.
std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::uint64_t ctr_hi,
                                        std::uint64_t ctr_lo);

// splitmix64 finalizer; used to spread stream tags over the key space.
std::uint64_t mix64(std::uint64_t z);

// Derive a substream id from two coordinates, e.g. (purpose, replicate) or
// (replicate, step).  Composable: stream_id(stream_id(a, b), c).
inline std::uint64_t stream_id(std::uint64_t a, std::uint64_t b) {
  return mix64(a * 0x9e3779b97f4a7c15ULL + b + 0x2545f4914f6cdd1dULL);
}

// Well-known purpose tags so independent subsystems never collide on streams.
enum : std::uint64_t {
  kStreamOmega = 1,    // map-parameter draws per (replicate, step)
  kStreamMu = 2,       // state samples from the initial measure
  kStreamNoise = 3,    // Brownian increments
  kStreamBootstrap = 4,
  kStreamScratch = 5,  // shuffles, feature placement, misc
};

// Sequential view of one logical stream: key = seed, counter-high = stream,
// counter-low advances per 128-bit block.  normal() consumes one block per
// pair (Box-Muller), caching the second value.
class Prng {
 public:
  explicit Prng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(seed), hi_(stream) {}

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // standard normal

 private:
  void refill();
  std::uint64_t key_;
  std::uint64_t hi_;
  std::uint64_t lo_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace pesin
