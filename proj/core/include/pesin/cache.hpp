#pragma once

#include <string>
#include <vector>

#include "pesin/rds.hpp"

namespace pesin {

// Binary trajectory cache: magic "PESN", format version u32, state dimension
// u32, point count u64, then the points row-major as little-endian doubles.
// Write-then-read is bit-identical; malformed or truncated files raise a
// format (configuration) error rather than crashing.
inline constexpr std::uint32_t kCacheVersion = 1;

void write_trajectory_cache(const std::string& path,
                            const std::vector<Vec>& traj);
std::vector<Vec> read_trajectory_cache(const std::string& path);

}  // namespace pesin
