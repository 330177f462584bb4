#pragma once

// Box geometry: oriented footprints, convex polygon clipping, exact oriented IoU,
// axis-aligned IoU and its smooth (softplus-overlap) variant with gradients.

#include "scenediff/scene_model.hpp"

#include <array>
#include <vector>

namespace scenediff {

/// Yaw-rotated box: center, half-extents (local x, local y, z).
struct Box3 {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Zero();
  double theta = 0.0;

  static Box3 of(const ObjectRecord& o) { return {o.location, o.size, o.theta}; }
  double volume() const { return 8.0 * half.prod(); }
  double footprint_area() const { return 4.0 * half(0) * half(1); }
};

using Point2 = Eigen::Vector2d;
using Polygon = std::vector<Point2>;

/// Counter-clockwise footprint corners.
inline Polygon footprint(const Box3& b) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const Point2 ax(c * b.half(0), s * b.half(0));
  const Point2 ay(-s * b.half(1), c * b.half(1));
  const Point2 ctr(b.center(0), b.center(1));
  return {ctr - ax - ay, ctr + ax - ay, ctr + ax + ay, ctr - ax + ay};
}

inline double polygon_area(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u(0) * v(1) - u(1) * v(0);
  }
  return 0.5 * std::abs(a);
}

/// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise `clip` polygon.
inline Polygon clip_convex(Polygon subject, const Polygon& clip) {
  auto cross = [](const Point2& a, const Point2& b, const Point2& p) {
    return (b(0) - a(0)) * (p(1) - a(1)) - (b(1) - a(1)) * (p(0) - a(0));
  };
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % clip.size()];
    Polygon out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Point2& cur = subject[i];
      const Point2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const double dc = cross(a, b, cur), dp = cross(a, b, prev);
      if (dc >= 0) {
        if (dp < 0) out.push_back(prev + (cur - prev) * (dp / (dp - dc)));
        out.push_back(cur);
      } else if (dp >= 0) {
        out.push_back(prev + (cur - prev) * (dp / (dp - dc)));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double interval_overlap(double c1, double h1, double c2, double h2) {
  return std::max(0.0, std::min(c1 + h1, c2 + h2) - std::max(c1 - h1, c2 - h2));
}

/// Exact IoU of two yaw-rotated boxes: footprint polygon intersection times vertical overlap.
inline double oriented_iou(const Box3& a, const Box3& b) {
  if ((a.half.array() <= 0).any() || (b.half.array() <= 0).any())
    throw GeometryError("box with non-positive extent");
  const double dz = interval_overlap(a.center(2), a.half(2), b.center(2), b.half(2));
  if (dz <= 0) return 0.0;
  const double area = polygon_area(clip_convex(footprint(a), footprint(b)));
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Exact IoU of the axis-aligned boxes (orientation ignored).
inline double axis_aligned_iou(const Box3& a, const Box3& b) {
  if ((a.half.array() <= 0).any() || (b.half.array() <= 0).any())
    throw GeometryError("box with non-positive extent");
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) inter *= interval_overlap(a.center(k), a.half(k), b.center(k), b.half(k));
  return inter / (a.volume() + b.volume() - inter);
}

/// Smooth axis-aligned IoU and its gradient w.r.t. both centers and half-extents.
struct SmoothIou {
  double value = 0.0;
  Vec3 d_center_a = Vec3::Zero(), d_half_a = Vec3::Zero();
  Vec3 d_center_b = Vec3::Zero(), d_half_b = Vec3::Zero();
};

inline double softplus(double x, double beta) {
  const double z = beta * x;
  return (z > 30 ? z : std::log1p(std::exp(z))) / beta;
}

/// Per-axis overlap is softplus_beta(min(max_a, max_b) - max(min_a, min_b)), capped at the smaller
/// of the two extents so the intersection never exceeds either volume and the value stays in
/// [0, 1]. Half-extents are floored at `min_half` (zero gradient below).
inline SmoothIou smooth_aabb_iou(const Vec3& ca, const Vec3& ha_raw, const Vec3& cb, const Vec3& hb_raw,
                                 double beta, double min_half = 1e-3) {
  SmoothIou r;
  const Vec3 ha = ha_raw.cwiseMax(min_half), hb = hb_raw.cwiseMax(min_half);
  std::array<double, 3> o{}, dodd{};
  std::array<int, 3> hi_from_a{}, lo_from_a{}, capped{}, cap_from_a{};
  for (int k = 0; k < 3; ++k) {
    const double amax = ca(k) + ha(k), bmax = cb(k) + hb(k);
    const double amin = ca(k) - ha(k), bmin = cb(k) - hb(k);
    hi_from_a[k] = amax <= bmax;
    lo_from_a[k] = amin >= bmin;
    const double d = std::min(amax, bmax) - std::max(amin, bmin);
    const double cap = 2.0 * std::min(ha(k), hb(k));
    cap_from_a[k] = ha(k) <= hb(k);
    const double sp = softplus(d, beta);
    capped[k] = sp >= cap;
    o[k] = capped[k] ? cap : sp;
    dodd[k] = 1.0 / (1.0 + std::exp(-beta * d));
  }
  const double inter = o[0] * o[1] * o[2];
  const double va = 8.0 * ha.prod(), vb = 8.0 * hb.prod();
  const double uni = va + vb - inter;
  r.value = inter / uni;

  const double d_inter = (uni + inter) / (uni * uni);
  const double d_vol = -inter / (uni * uni);
  for (int k = 0; k < 3; ++k) {
    const double others = o[(k + 1) % 3] * o[(k + 2) % 3];
    if (capped[k]) {
      (cap_from_a[k] ? r.d_half_a(k) : r.d_half_b(k)) += 2.0 * d_inter * others;
    } else {
      const double g = d_inter * others * dodd[k];  // d value / d d_k
      // d = hi - lo; hi = min(ca+ha, cb+hb); lo = max(ca-ha, cb-hb)
      if (hi_from_a[k]) {
        r.d_center_a(k) += g;
        r.d_half_a(k) += g;
      } else {
        r.d_center_b(k) += g;
        r.d_half_b(k) += g;
      }
      if (lo_from_a[k]) {
        r.d_center_a(k) -= g;
        r.d_half_a(k) += g;
      } else {
        r.d_center_b(k) -= g;
        r.d_half_b(k) += g;
      }
    }
    r.d_half_a(k) += d_vol * va / ha(k);
    r.d_half_b(k) += d_vol * vb / hb(k);
  }
  for (int k = 0; k < 3; ++k) {
    if (ha_raw(k) < min_half) r.d_half_a(k) = 0.0;
    if (hb_raw(k) < min_half) r.d_half_b(k) = 0.0;
  }
  return r;
}

}  // namespace scenediff
