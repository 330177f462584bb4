#include "scenediff/geometry.hpp"
#include "fd_oracle.hpp"
#include "voxel_oracle.hpp"

#include <gtest/gtest.h>

using namespace scenediff;

namespace {

Box3 box(double x, double y, double z, double hx, double hy, double hz, double th = 0.0) {
  return {Vec3(x, y, z), Vec3(hx, hy, hz), th};
}

Box3 random_box(Rng& rng) {
  return box(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 0.5), rng.uniform(0.1, 0.8),
             rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.6), rng.uniform(-kPi, kPi));
}

}  // namespace

TEST(AxisAlignedIou, IdenticalDisjointAndHalfShift) {
  const Box3 a = box(0, 0, 0, 0.5, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(axis_aligned_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(axis_aligned_iou(a, box(3, 0, 0, 0.5, 0.5, 0.5)), 0.0);
  EXPECT_NEAR(axis_aligned_iou(a, box(0.5, 0, 0, 0.5, 0.5, 0.5)), 1.0 / 3.0, 1e-15);
}

TEST(AxisAlignedIou, NonPositiveExtentIsGeometryError) {
  EXPECT_THROW(axis_aligned_iou(box(0, 0, 0, 0, 1, 1), box(0, 0, 0, 1, 1, 1)), GeometryError);
  EXPECT_THROW(oriented_iou(box(0, 0, 0, 1, -1, 1), box(0, 0, 0, 1, 1, 1)), GeometryError);
}

TEST(OrientedIou, MatchesAxisAlignedAtZeroYaw) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Box3 a = random_box(rng), b = random_box(rng);
    a.theta = b.theta = 0.0;
    EXPECT_NEAR(oriented_iou(a, b), axis_aligned_iou(a, b), 1e-12);
  }
}

TEST(OrientedIou, SquareAndItsEighthTurnGiveOctagon) {
  // Unit square vs. the same square turned by pi/4: a regular octagon of area 2(sqrt2 - 1).
  const Box3 a = box(0, 0, 0, 0.5, 0.5, 0.5), b = box(0, 0, 0, 0.5, 0.5, 0.5, kPi / 4);
  const double oct = 2 * (std::sqrt(2.0) - 1);
  EXPECT_NEAR(oriented_iou(a, b), oct / (2 - oct), 1e-12);
}

TEST(OrientedIou, SymmetricAndYawPeriodic) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Box3 a = random_box(rng), b = random_box(rng);
    EXPECT_NEAR(oriented_iou(a, b), oriented_iou(b, a), 1e-12);
    Box3 a2 = a;
    a2.theta += kPi;
    EXPECT_NEAR(oriented_iou(a2, b), oriented_iou(a, b), 1e-12);
  }
}

TEST(OrientedIou, AgreesWithVoxelOracle) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Box3 a = random_box(rng), b = random_box(rng);
    EXPECT_NEAR(oriented_iou(a, b), oracle::voxel_iou(a, b, 600), 2e-3) << "pair " << i;
  }
}

TEST(PolygonClip, DisjointGivesEmpty) {
  const auto p = clip_convex(footprint(box(0, 0, 0, 1, 1, 1)), footprint(box(5, 0, 0, 1, 1, 1)));
  EXPECT_NEAR(polygon_area(p), 0.0, 1e-15);
}

TEST(SmoothIou, ConvergesToExactAtHighSharpness) {
  Rng rng(7);
  int checked = 0;
  while (checked < 200) {
    const Vec3 ca(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Vec3 cb(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Vec3 ha(rng.uniform(0.2, 1), rng.uniform(0.2, 1), rng.uniform(0.2, 1));
    const Vec3 hb(rng.uniform(0.2, 1), rng.uniform(0.2, 1), rng.uniform(0.2, 1));
    double margin = 1e9;
    for (int k = 0; k < 3; ++k) {
      const double d = std::min(ca(k) + ha(k), cb(k) + hb(k)) - std::max(ca(k) - ha(k), cb(k) - hb(k));
      margin = std::min(margin, std::abs(d));
    }
    if (margin <= 0.05) continue;
    ++checked;
    const double exact = axis_aligned_iou({ca, ha, 0}, {cb, hb, 0});
    EXPECT_LT(std::abs(smooth_aabb_iou(ca, ha, cb, hb, 100.0).value - exact), 1e-3);
  }
}

TEST(SmoothIou, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    double v[12];
    for (int k = 0; k < 3; ++k) {
      v[k] = rng.uniform(-0.5, 0.5);
      v[3 + k] = rng.uniform(0.2, 0.8);
      v[6 + k] = rng.uniform(-0.5, 0.5);
      v[9 + k] = rng.uniform(0.2, 0.8);
    }
    auto f = [&] {
      return smooth_aabb_iou(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), Vec3(v[6], v[7], v[8]),
                             Vec3(v[9], v[10], v[11]), 10.0)
          .value;
    };
    const SmoothIou r = smooth_aabb_iou(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), Vec3(v[6], v[7], v[8]),
                                        Vec3(v[9], v[10], v[11]), 10.0);
    double analytic[12];
    for (int k = 0; k < 3; ++k) {
      analytic[k] = r.d_center_a(k);
      analytic[3 + k] = r.d_half_a(k);
      analytic[6 + k] = r.d_center_b(k);
      analytic[9 + k] = r.d_half_b(k);
    }
    for (int c = 0; c < 12; ++c) {
      const double num = fd::central(f, v[c], 1e-6);
      EXPECT_LT(fd::rel_error(analytic[c], num), 1e-4) << "trial " << trial << " coord " << c;
    }
  }
}

TEST(SmoothIou, BoundedForTinyAndInvertedBoxes) {
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 ca(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    const Vec3 cb(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    const Vec3 ha(rng.uniform(-0.1, 0.05), rng.uniform(-0.1, 0.05), rng.uniform(-0.1, 0.05));
    const Vec3 hb(rng.uniform(-0.1, 0.05), rng.uniform(-0.1, 0.05), rng.uniform(-0.1, 0.05));
    const double v = smooth_aabb_iou(ca, ha, cb, hb, 10.0).value;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_DOUBLE_EQ(smooth_aabb_iou(Vec3::Zero(), Vec3::Constant(0.5), Vec3::Zero(), Vec3::Constant(0.5), 10.0).value,
                   1.0);
}
