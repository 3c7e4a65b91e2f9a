// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mosgeom;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

GeometryError::Kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const GeometryError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no GeometryError thrown";
  return GeometryError::Kind::invalid_argument;
}

} // namespace

TEST(Curvature, DeadBandIsFlat) {
  const Curvature tiny(5e-7);
  EXPECT_TRUE(tiny.flat());
  EXPECT_EQ(tiny.phi(), 0.0);
  EXPECT_EQ(tiny.sqrt_abs(), 0.0);
  EXPECT_FALSE(Curvature(-1e-6).flat());
  EXPECT_DOUBLE_EQ(Curvature(-0.25).phi(), 4.0);
  EXPECT_THROW(Curvature(1.0, true, 0.0), GeometryError);
  EXPECT_THROW(Curvature(NAN), GeometryError);
  EXPECT_THROW(ScalingConfig(0.0), GeometryError);
}

// Values below are worked by hand.
TEST(Lift, HyperbolicFrozenValue) {
  const AmbientPoint p = mos_lift(v2(3, 4), Curvature(-1.0));
  EXPECT_NEAR(p.xi, std::sqrt(26.0), 1e-14);
  EXPECT_EQ(p.s, v2(3, 4));
}

TEST(Lift, SphericalFrozenValue) {
  EXPECT_NEAR(mos_lift(v2(0.6, 0.0), Curvature(1.0)).xi, 0.8, 1e-15);
  EXPECT_NEAR(mos_lift(v2(0.36, 0.48), Curvature(1.0)).xi, 0.8, 1e-15);
}

TEST(Lift, FlatIsNorm) { EXPECT_NEAR(mos_lift(v2(3, 4), Curvature(0.0)).xi, 5.0, 1e-15); }

TEST(Lift, GradientFrozenValues) {
  EXPECT_NEAR(lift_gradient_norm(v2(0.9, 0.0), Curvature(1.0)), 2.0647416048350555, 1e-12);
  const Vec g = lift_gradient(v2(3, 4), Curvature(-1.0));
  EXPECT_NEAR(g(0), 3.0 / std::sqrt(26.0), 1e-15);
  EXPECT_NEAR(g(1), 4.0 / std::sqrt(26.0), 1e-15);
  // Spherical lift decreases with radius.
  EXPECT_LT(lift_gradient(v2(0.3, 0.0), Curvature(1.0))(0), 0.0);
  EXPECT_LE(lift_gradient_norm(v2(1e4, -1e4), Curvature(-0.1)), 1.0);
}

TEST(Lift, SphericalBound) {
  const Curvature k(1.0);
  const double R = 0.95;
  EXPECT_NEAR(spherical_gradient_bound(k, R), R / std::sqrt(1.0 - R * R), 1e-15);
  EXPECT_EQ(kind_of([&] { mos_lift(v2(2.0, 0.0), k); }), GeometryError::Kind::spherical_domain);
}

TEST(Stereo, HyperbolicFrozenValue) {
  const Curvature k(-1.0);
  const AmbientPoint p = inv_stereo(v2(0.5, 0.0), k);
  EXPECT_NEAR(p.xi, 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.s(0), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(-p.xi * p.xi + p.s.squaredNorm(), -1.0, 1e-14);
  EXPECT_NEAR(stereo(p, k)(0), 0.5, 1e-15);
}

TEST(Stereo, SphericalEquatorAndPole) {
  const Curvature k(1.0);
  const AmbientPoint eq = inv_stereo(v2(1.0, 0.0), k);
  EXPECT_NEAR(eq.xi, 0.0, 1e-15);
  EXPECT_NEAR(eq.s(0), 1.0, 1e-15);
  EXPECT_EQ(kind_of([&] { inv_stereo(v2(1.0, 0.0), Curvature(-1.0)); }), GeometryError::Kind::pole);
  EXPECT_EQ(kind_of([&] { stereo(AmbientPoint(-1.0, v2(0, 0)), k); }), GeometryError::Kind::pole);
}

TEST(Stereo, FlatIsIdentity) {
  const Vec x = v2(0.3, -7.0);
  EXPECT_EQ(inv_stereo(x, Curvature(0.0)).s, x);
  EXPECT_EQ(stereo(AmbientPoint(1.0, x), Curvature(0.0)), x);
}

TEST(ExpLog, OriginGeodesic) {
  const Curvature k(-1.0);
  const AmbientPoint origin(1.0, v2(0, 0));
  TangentVector u;
  u.base = origin;
  u.time = 0.0;
  u.space = v2(1.0, 0.0);
  const AmbientPoint y = exp_map(origin, u, k);
  EXPECT_NEAR(y.xi, std::cosh(1.0), 1e-15);
  EXPECT_NEAR(y.s(0), std::sinh(1.0), 1e-15);
  const TangentVector back = log_map(origin, y, k);
  EXPECT_NEAR(back.time, 0.0, 1e-14);
  EXPECT_NEAR(back.space(0), 1.0, 1e-14);
  EXPECT_NEAR(back.space(1), 0.0, 1e-14);
}

TEST(ExpLog, ZeroTangentIsBase) {
  const Curvature k(-2.0);
  const AmbientPoint x = inv_stereo(v2(0.2, 0.1), k);
  TangentVector u{0.0, v2(0, 0), x};
  const AmbientPoint y = exp_map(x, u, k);
  EXPECT_NEAR((y.stacked() - x.stacked()).norm(), 0.0, 1e-15);
}

TEST(ExpLog, Errors) {
  const AmbientPoint origin(1.0, v2(0, 0));
  TangentVector u{0.5, v2(1.0, 0.0), origin};
  EXPECT_EQ(kind_of([&] { exp_map(origin, u, Curvature(-1.0)); }), GeometryError::Kind::not_tangent);
  u.time = 0.0;
  EXPECT_EQ(kind_of([&] { exp_map(origin, u, Curvature(1.0)); }), GeometryError::Kind::unsupported_curvature);
  EXPECT_EQ(kind_of([&] { log_map(origin, origin, Curvature(0.0)); }), GeometryError::Kind::unsupported_curvature);
  Vec three(3);
  three << 0, 0, 0;
  EXPECT_EQ(kind_of([&] { mos_transform(v2(0.1, 0.1), Mat::Identity(3, 3), Curvature(-1.0)); }),
            GeometryError::Kind::dimension_mismatch);
}

TEST(ScaleInvariance, ConcreteCase) {
  Mat W(2, 2);
  W << 0.7, -0.2, 0.1, 0.4;
  const Vec x = v2(0.3, -0.4);
  for (double kv : {-1.5, 0.8}) {
    for (double gamma : {0.1, 10.0}) {
      const Vec lhs = mos_transform(x, W, Curvature(kv));
      const Vec rhs = scaled_pipeline(x, W, Curvature(kv / (gamma * gamma)), ScalingConfig(gamma));
      EXPECT_LT((lhs - rhs).norm() / lhs.norm(), 1e-12) << kv << " " << gamma;
    }
  }
  // W = I maps every point to itself.
  EXPECT_LT((mos_transform(x, Mat::Identity(2, 2), Curvature(-1.0)) - x).norm(), 1e-15);
  EXPECT_LT((mos_transform(x, Mat::Identity(2, 2), Curvature(1.0)) - x).norm(), 1e-15);
}
