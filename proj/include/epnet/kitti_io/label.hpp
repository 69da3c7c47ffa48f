// KITTI object labels: 15 whitespace-separated fields per line
//   type trunc occ alpha x1 y1 x2 y2 h w l x y z ry
// with (x, y, z) the bottom center of the box in the rectified camera frame.
#pragma once

#include <array>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/boxes3d/dump.hpp"
#include "epnet/boxes3d/eval.hpp"

namespace epnet {

struct LabelRecord {
  std::string type = "Car";
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};
  double h = 0, w = 0, l = 0;
  double x = 0, y = 0, z = 0;
  double ry = 0;

  bool is_object() const { return type != "DontCare"; }

  Box3D to_box() const { return {x, y - 0.5 * h, z, l, h, w, ry}; }

  static LabelRecord from_box(const Box3D& b, const std::string& type) {
    LabelRecord r;
    r.type = type;
    r.h = b.h;
    r.w = b.w;
    r.l = b.l;
    r.x = b.x;
    r.y = b.y + 0.5 * b.h;
    r.z = b.z;
    r.ry = b.ry;
    return r;
  }

  GroundTruth to_ground_truth() const {
    return {to_box(), type, truncation, occlusion, bbox[3] - bbox[1]};
  }
};

inline std::vector<LabelRecord> read_labels(const std::string& text) {
  std::vector<LabelRecord> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 15) {
      throw std::invalid_argument("read_labels: line " + std::to_string(lineno) + " has " + std::to_string(tok.size()) +
                                  " fields, expected 15");
    }
    LabelRecord r;
    r.type = tok[0];
    r.truncation = parse_real(tok[1]);
    r.occlusion = static_cast<int>(parse_real(tok[2]));
    r.alpha = parse_real(tok[3]);
    for (std::size_t k = 0; k < 4; ++k) r.bbox[k] = parse_real(tok[4 + k]);
    r.h = parse_real(tok[8]);
    r.w = parse_real(tok[9]);
    r.l = parse_real(tok[10]);
    r.x = parse_real(tok[11]);
    r.y = parse_real(tok[12]);
    r.z = parse_real(tok[13]);
    r.ry = parse_real(tok[14]);
    if (r.is_object() && (r.h <= 0 || r.w <= 0 || r.l <= 0)) {
      throw std::invalid_argument("read_labels: line " + std::to_string(lineno) + " has non-positive dimensions");
    }
    out.push_back(r);
  }
  return out;
}

inline std::string write_labels(const std::vector<LabelRecord>& labels) {
  std::ostringstream os;
  for (const LabelRecord& r : labels) {
    os << r.type << ' ' << fmt_real(r.truncation) << ' ' << r.occlusion << ' ' << fmt_real(r.alpha);
    for (double v : r.bbox) os << ' ' << fmt_real(v);
    for (double v : {r.h, r.w, r.l, r.x, r.y, r.z, r.ry}) os << ' ' << fmt_real(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace epnet
