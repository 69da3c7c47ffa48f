// KITTI calibration text: "KEY: v0 v1 ..." lines, row-major matrices.
#pragma once

#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/boxes3d/dump.hpp"
#include "epnet/geometry/types.hpp"

namespace epnet {

using Mat3 = std::array<double, 9>;
using Mat34 = std::array<double, 12>;

struct CalibRecord {
  ProjectionMatrix p2;
  Mat3 r0{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Mat34 tr{};  // sensor (velodyne) frame -> reference camera frame

  // Rectified camera frame point of a sensor-frame point: R0 * (Tr * [p; 1]).
  Vec3 velo_to_cam(const Vec3& p) const {
    Vec3 ref{};
    for (int r = 0; r < 3; ++r) {
      const auto o = static_cast<std::size_t>(r * 4);
      ref[static_cast<std::size_t>(r)] = tr[o] * p[0] + tr[o + 1] * p[1] + tr[o + 2] * p[2] + tr[o + 3];
    }
    Vec3 out{};
    for (int r = 0; r < 3; ++r) {
      const auto o = static_cast<std::size_t>(r * 3);
      out[static_cast<std::size_t>(r)] = r0[o] * ref[0] + r0[o + 1] * ref[1] + r0[o + 2] * ref[2];
    }
    return out;
  }

  Vec3 cam_to_velo(const Vec3& p) const {
    const Mat3 r0i = inverse3(r0);
    Vec3 ref{};
    for (int r = 0; r < 3; ++r) {
      const auto o = static_cast<std::size_t>(r * 3);
      ref[static_cast<std::size_t>(r)] = r0i[o] * p[0] + r0i[o + 1] * p[1] + r0i[o + 2] * p[2];
    }
    const Mat3 rot{tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10]};
    const Mat3 roti = inverse3(rot);
    const Vec3 d{ref[0] - tr[3], ref[1] - tr[7], ref[2] - tr[11]};
    Vec3 out{};
    for (int r = 0; r < 3; ++r) {
      const auto o = static_cast<std::size_t>(r * 3);
      out[static_cast<std::size_t>(r)] = roti[o] * d[0] + roti[o + 1] * d[1] + roti[o + 2] * d[2];
    }
    return out;
  }

  // P2 * R0 * Tr as a single 3x4 matrix acting on sensor-frame points.
  ProjectionMatrix lidar_projection() const {
    // R0 * Tr (3x4)
    Mat34 rt{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += r0[static_cast<std::size_t>(r * 3 + k)] * tr[static_cast<std::size_t>(k * 4 + c)];
        rt[static_cast<std::size_t>(r * 4 + c)] = s;
      }
    ProjectionMatrix out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += p2(r, k) * rt[static_cast<std::size_t>(k * 4 + c)];
        if (c == 3) s += p2(r, 3);
        out.m[static_cast<std::size_t>(r * 4 + c)] = s;
      }
    return out;
  }

  static Mat3 inverse3(const Mat3& a) {
    const double det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
                       a[2] * (a[3] * a[7] - a[4] * a[6]);
    if (std::abs(det) < 1e-12) throw std::invalid_argument("calib: singular 3x3 matrix");
    const double id = 1.0 / det;
    return {(a[4] * a[8] - a[5] * a[7]) * id, (a[2] * a[7] - a[1] * a[8]) * id, (a[1] * a[5] - a[2] * a[4]) * id,
            (a[5] * a[6] - a[3] * a[8]) * id, (a[0] * a[8] - a[2] * a[6]) * id, (a[2] * a[3] - a[0] * a[5]) * id,
            (a[3] * a[7] - a[4] * a[6]) * id, (a[1] * a[6] - a[0] * a[7]) * id, (a[0] * a[4] - a[1] * a[3]) * id};
  }
};

inline CalibRecord read_calib(const std::string& text) {
  std::map<std::string, std::vector<double>> fields;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::istringstream vs(line.substr(colon + 1));
    std::vector<double> vals;
    for (std::string tok; vs >> tok;) vals.push_back(parse_real(tok));
    fields[key] = std::move(vals);
  }
  auto take = [&](const std::string& key, std::size_t count) {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("read_calib: missing key " + key);
    if (it->second.size() != count) {
      throw std::invalid_argument("read_calib: key " + key + " has " + std::to_string(it->second.size()) +
                                  " values, expected " + std::to_string(count));
    }
    for (double v : it->second)
      if (!std::isfinite(v)) throw std::invalid_argument("read_calib: non-finite value in " + key);
    return it->second;
  };
  CalibRecord c;
  const auto p2 = take("P2", 12);
  std::copy(p2.begin(), p2.end(), c.p2.m.begin());
  const auto r0 = take("R0_rect", 9);
  std::copy(r0.begin(), r0.end(), c.r0.begin());
  const auto tr = take("Tr_velo_to_cam", 12);
  std::copy(tr.begin(), tr.end(), c.tr.begin());
  return c;
}

inline std::string write_calib(const CalibRecord& c) {
  std::ostringstream os;
  auto line = [&](const char* key, const double* v, std::size_t n) {
    os << key << ':';
    for (std::size_t i = 0; i < n; ++i) os << ' ' << fmt_real(v[i]);
    os << '\n';
  };
  line("P2", c.p2.m.data(), 12);
  line("R0_rect", c.r0.data(), 9);
  line("Tr_velo_to_cam", c.tr.data(), 12);
  return os.str();
}

}  // namespace epnet
