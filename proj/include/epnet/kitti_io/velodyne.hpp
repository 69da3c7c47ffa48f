// Velodyne scans: consecutive little-endian float32 quadruples (x, y, z, intensity).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/geometry/types.hpp"

namespace epnet {

inline PointSet read_velodyne(const std::vector<std::uint8_t>& bytes) {
  static_assert(std::endian::native == std::endian::little, "velodyne I/O assumes a little-endian host");
  if (bytes.size() % 16 != 0) {
    throw std::invalid_argument("read_velodyne: " + std::to_string(bytes.size()) + " bytes is not a multiple of 16");
  }
  PointSet pts;
  const std::size_t n = bytes.size() / 16;
  pts.xyz.resize(n);
  pts.intensity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    float v[4];
    std::memcpy(v, bytes.data() + 16 * i, 16);
    pts.xyz[i] = {v[0], v[1], v[2]};
    pts.intensity[i] = v[3];
  }
  return pts;
}

inline std::vector<std::uint8_t> write_velodyne(const PointSet& pts) {
  std::vector<std::uint8_t> out(pts.size() * 16);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const float v[4] = {static_cast<float>(pts.xyz[i][0]), static_cast<float>(pts.xyz[i][1]),
                        static_cast<float>(pts.xyz[i][2]),
                        static_cast<float>(pts.has_intensity() ? pts.intensity[i] : 0.0)};
    std::memcpy(out.data() + 16 * i, v, 16);
  }
  return out;
}

}  // namespace epnet
