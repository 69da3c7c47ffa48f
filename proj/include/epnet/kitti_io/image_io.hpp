// Binary PPM (P6, RGB) and PGM (P5, gray) with maxval 255.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/core/array.hpp"

namespace epnet {

namespace detail {

inline std::size_t pnm_next_int(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) throw std::invalid_argument("pnm: malformed header");
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + static_cast<std::size_t>(b[pos++] - '0');
  return v;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

inline Array read_pnm(const std::vector<std::uint8_t>& bytes, char kind, std::size_t channels) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
    throw std::invalid_argument(std::string("pnm: expected P") + kind + " magic");
  }
  std::size_t pos = 2;
  const std::size_t w = pnm_next_int(bytes, pos);
  const std::size_t h = pnm_next_int(bytes, pos);
  const std::size_t maxval = pnm_next_int(bytes, pos);
  if (maxval != 255) throw std::invalid_argument("pnm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw std::invalid_argument("pnm: malformed header");
  ++pos;
  const std::size_t n = w * h * channels;
  if (bytes.size() - pos != n) throw std::invalid_argument("pnm: pixel data size mismatch");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = bytes[pos + i];
  return channels == 1 ? Array({h, w}, std::move(v)) : Array({h, w, channels}, std::move(v));
}

inline std::vector<std::uint8_t> write_pnm(const Array& img, char kind, std::size_t h, std::size_t w) {
  const std::string header = std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (double v : img.values()) out.push_back(to_byte(v));
  return out;
}

}  // namespace detail

// H x W x 3 array of values in [0, 255].
inline Array read_ppm(const std::vector<std::uint8_t>& bytes) { return detail::read_pnm(bytes, '6', 3); }

inline std::vector<std::uint8_t> write_ppm(const Array& img) {
  if (img.rank() != 3 || img.dim(2) != 3) throw std::invalid_argument("write_ppm: expected H x W x 3, got " + shape_str(img.shape()));
  return detail::write_pnm(img, '6', img.dim(0), img.dim(1));
}

// H x W mask; nonzero bytes read as 1.
inline std::vector<std::uint8_t> read_mask_pgm(const std::vector<std::uint8_t>& bytes, std::size_t& h, std::size_t& w) {
  const Array a = detail::read_pnm(bytes, '5', 1);
  h = a.dim(0);
  w = a.dim(1);
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] != 0.0 ? 1 : 0;
  return out;
}

inline std::vector<std::uint8_t> write_mask_pgm(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w) {
  if (mask.size() != h * w) throw std::invalid_argument("write_mask_pgm: mask size mismatch");
  std::vector<double> v(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? 255.0 : 0.0;
  return detail::write_pnm(Array({h, w}, std::move(v)), '5', h, w);
}

}  // namespace epnet
