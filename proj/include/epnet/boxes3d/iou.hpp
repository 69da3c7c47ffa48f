// Exact rotated-box overlap via convex polygon clipping (Sutherland-Hodgman).
//
// The routines are templated on the scalar so the same code evaluates plain
// doubles and forward-mode duals (used for IoU derivatives in the CE loss).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "epnet/boxes3d/box.hpp"
#include "epnet/core/dual.hpp"

namespace epnet {

template <class T>
struct BoxT {
  T x, y, z, l, h, w, ry;
};

inline BoxT<double> as_boxt(const Box3D& b) { return {b.x, b.y, b.z, b.l, b.h, b.w, b.ry}; }

namespace detail {

template <class T>
struct P2 {
  T x, z;
};

template <class T>
std::array<P2<T>, 4> corners_t(const BoxT<T>& b) {
  using std::cos;
  using std::sin;
  const T c = cos(b.ry), s = sin(b.ry);
  const T hl = b.l * 0.5, hw = b.w * 0.5;
  const T la[4] = {hl, -hl, -hl, hl};
  const T wb[4] = {hw, hw, -hw, -hw};
  std::array<P2<T>, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = {b.x + la[i] * c + wb[i] * s, b.z - la[i] * s + wb[i] * c};
  return out;
}

template <class T>
T cross(const P2<T>& o, const P2<T>& a, const P2<T>& b) {
  return (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x);
}

template <class T>
T signed_area(const std::vector<P2<T>>& poly) {
  T s(0.0);
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    s += p.x * q.z - q.x * p.z;
  }
  return s * 0.5;
}

// Clips `subject` against the convex polygon `clip` (both any orientation).
template <class T>
std::vector<P2<T>> clip_convex(std::vector<P2<T>> subject, std::vector<P2<T>> clip) {
  if (value_of(signed_area(clip)) < 0.0) std::reverse(clip.begin(), clip.end());
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const P2<T>& a = clip[e];
    const P2<T>& b = clip[(e + 1) % clip.size()];
    std::vector<P2<T>> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const P2<T>& cur = subject[i];
      const P2<T>& prev = subject[(i + subject.size() - 1) % subject.size()];
      const T dc = cross(a, b, cur);
      const T dp = cross(a, b, prev);
      const bool cin = value_of(dc) >= 0.0;
      const bool pin = value_of(dp) >= 0.0;
      if (cin != pin) {
        const T t = dp / (dp - dc);
        out.push_back({prev.x + (cur.x - prev.x) * t, prev.z + (cur.z - prev.z) * t});
      }
      if (cin) out.push_back(cur);
    }
    subject = std::move(out);
  }
  return subject;
}

template <class T>
T tmin(const T& a, const T& b) { return value_of(a) <= value_of(b) ? a : b; }
template <class T>
T tmax(const T& a, const T& b) { return value_of(a) >= value_of(b) ? a : b; }

}  // namespace detail

template <class T>
T bev_intersection_area(const BoxT<T>& a, const BoxT<T>& b) {
  auto ca = detail::corners_t(a);
  auto cb = detail::corners_t(b);
  std::vector<detail::P2<T>> pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
  auto poly = detail::clip_convex(std::move(pa), std::move(pb));
  if (poly.size() < 3) return T(0.0);
  T area = detail::signed_area(poly);
  if (value_of(area) < 0.0) area = -area;
  return area;
}

template <class T>
T iou_bev_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T area_a = a.l * a.w, area_b = b.l * b.w;
  if (value_of(area_a) <= 0.0 || value_of(area_b) <= 0.0) return T(0.0);
  const T inter = bev_intersection_area(a, b);
  const T uni = area_a + area_b - inter;
  if (value_of(uni) <= 0.0) return T(0.0);
  return inter / uni;
}

template <class T>
T iou_3d_t(const BoxT<T>& a, const BoxT<T>& b) {
  const T vol_a = a.l * a.w * a.h, vol_b = b.l * b.w * b.h;
  if (value_of(vol_a) <= 0.0 || value_of(vol_b) <= 0.0) return T(0.0);
  const T top = detail::tmax(a.y - a.h * 0.5, b.y - b.h * 0.5);
  const T bottom = detail::tmin(a.y + a.h * 0.5, b.y + b.h * 0.5);
  const T overlap_h = bottom - top;
  if (value_of(overlap_h) <= 0.0) return T(0.0);
  const T inter = bev_intersection_area(a, b) * overlap_h;
  const T uni = vol_a + vol_b - inter;
  if (value_of(uni) <= 0.0) return T(0.0);
  return inter / uni;
}

inline double iou_bev(const Box3D& a, const Box3D& b) { return iou_bev_t(as_boxt(a), as_boxt(b)); }
inline double iou_3d(const Box3D& a, const Box3D& b) { return iou_3d_t(as_boxt(a), as_boxt(b)); }

}  // namespace epnet
