// Detection dump: one line per detection,
//   <frame_id> <class> <score> <x> <y> <z> <l> <h> <w> <ry>
// Reals are written in shortest round-trip form so re-reading is lossless.
#pragma once

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/boxes3d/box.hpp"

namespace epnet {

inline std::string fmt_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_real(const std::string& tok) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok[0] == '+') ++first;
  auto res = std::from_chars(first, tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw std::invalid_argument("not a real number: '" + tok + "'");
  }
  return v;
}

inline void write_detections(std::ostream& os, const std::vector<std::vector<Detection>>& frames) {
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const Detection& d : frames[f]) {
      const Box3D& b = d.box;
      os << f << ' ' << d.label << ' ' << fmt_real(d.score);
      for (double v : {b.x, b.y, b.z, b.l, b.h, b.w, b.ry}) os << ' ' << fmt_real(v);
      os << '\n';
    }
  }
}

// `num_frames` pads the result so frames without detections are still present.
inline std::vector<std::vector<Detection>> read_detections(std::istream& is, std::size_t num_frames = 0) {
  std::vector<std::vector<Detection>> frames(num_frames);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.size() != 10) {
      throw std::invalid_argument("detection dump line " + std::to_string(lineno) + ": expected 10 fields, got " +
                                  std::to_string(tok.size()));
    }
    const auto frame = static_cast<std::size_t>(std::stoull(tok[0]));
    Detection d;
    d.label = tok[1];
    d.score = parse_real(tok[2]);
    d.box = {parse_real(tok[3]), parse_real(tok[4]), parse_real(tok[5]), parse_real(tok[6]),
             parse_real(tok[7]),  parse_real(tok[8]), parse_real(tok[9])};
    if (frames.size() <= frame) frames.resize(frame + 1);
    frames[frame].push_back(d);
  }
  return frames;
}

}  // namespace epnet
