#include "pesin/cache.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "pesin/errors.hpp"

namespace pesin {

static_assert(std::endian::native == std::endian::little,
              "cache format is little-endian; add byte swapping for this "
              "platform");

namespace {
constexpr char kMagic[4] = {'P', 'E', 'S', 'N'};
}

void write_trajectory_cache(const std::string& path,
                            const std::vector<Vec>& traj) {
  std::uint32_t d = 0;
  if (!traj.empty()) {
    d = std::uint32_t(traj.front().size());
    for (const Vec& v : traj)
      if (std::uint32_t(v.size()) != d)
        throw config_error("trajectory points have mixed dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot open cache file for writing: " + path);
  out.write(kMagic, 4);
  const std::uint32_t ver = kCacheVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  const std::uint64_t n = traj.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const Vec& v : traj)
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(sizeof(double)) * d);
  if (!out) throw config_error("short write to cache file: " + path);
}

std::vector<Vec> read_trajectory_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open cache file: " + path);

  char magic[4];
  std::uint32_t ver = 0, d = 0;
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw config_error("not a trajectory cache (bad magic): " + path);
  if (ver != kCacheVersion)
    throw config_error("unsupported cache version " + std::to_string(ver));
  if (n > (1ULL << 32) || d > (1U << 20))
    throw config_error("implausible cache header: " + path);

  std::vector<Vec> traj;
  traj.reserve(std::size_t(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    Vec v = Vec::Zero(Eigen::Index(d));
    in.read(reinterpret_cast<char*>(v.data()),
            std::streamsize(sizeof(double)) * d);
    if (!in) throw config_error("truncated cache file: " + path);
    traj.push_back(std::move(v));
  }
  return traj;
}

}  // namespace pesin
