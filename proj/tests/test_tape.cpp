// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/gradcheck.hpp"
#include "mosgeom/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mosgeom;

namespace {

Mat col(double a, double b) {
  Mat m(2, 1);
  m << a, b;
  return m;
}

Mat scalar(double v) { return Mat::Constant(1, 1, v); }

} // namespace

TEST(Tape, SquaredNormGradient) {
  Tape t;
  const Var x = t.leaf("x", col(3, 4));
  const Var loss = t.sum(t.col_sq_norms(x));
  EXPECT_EQ(t.scalar(loss), 25.0);
  const GradMap g = t.backward(loss);
  EXPECT_EQ(g.at("x"), col(6, 8));
}

TEST(Tape, LiftTimeGradients) {
  Tape t;
  const Var s = t.leaf("s", col(3, 4));
  const Var k = t.leaf("k", scalar(-1.0));
  const Var xi = t.lift_time(s, k, 1e-6, GuardMode::verify);
  EXPECT_NEAR(t.scalar(xi), std::sqrt(26.0), 1e-14);
  const GradMap g = t.backward(xi);
  EXPECT_NEAR(g.at("s")(0), 3.0 / std::sqrt(26.0), 1e-15);
  EXPECT_NEAR(g.at("s")(1), 4.0 / std::sqrt(26.0), 1e-15);
  // xi = sqrt(|s|^2 - 1/k): d/dk = 1 / (2 k^2 xi)
  EXPECT_NEAR(g.at("k")(0, 0), 1.0 / (2.0 * std::sqrt(26.0)), 1e-15);
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape t;
  const Var a = t.leaf("a", col(1, 2));
  const Var c = t.constant(col(5, 7));
  const GradMap g = t.backward(t.sum(t.hadamard(a, c)));
  EXPECT_EQ(g.size(), 1u);
  EXPECT_EQ(g.at("a"), col(5, 7));
}

TEST(Tape, FanOutAccumulates) {
  Tape t;
  const Var a = t.leaf("a", scalar(3.0));
  const Var y = t.add(t.hadamard(a, a), a); // a^2 + a
  EXPECT_EQ(t.backward(y).at("a")(0, 0), 7.0);
}

TEST(Tape, CrossEntropyMatchesFormula) {
  Tape t;
  Mat z(3, 2);
  z << 1, 0, 2, 0, 3, 0;
  const Var logits = t.leaf("z", z);
  const std::vector<int> labels{2, 0};
  const Var ce = t.cross_entropy(logits, labels);
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(t.scalar(ce), 0.5 * ((lse - 3.0) + std::log(3.0)), 1e-14);
  const Mat g = t.backward(ce).at("z");
  EXPECT_NEAR(g.col(1).sum(), 0.0, 1e-15);
  EXPECT_NEAR(g(0, 1), 0.5 * (1.0 / 3.0 - 1.0), 1e-15);
}

TEST(GradCheck, CatchesWrongGradient) {
  const ParamSet ps{{"x", col(0.3, -0.7)}};
  auto f = [](const ParamSet& p) { return p.at("x").squaredNorm(); };
  GradMap right{{"x", 2.0 * col(0.3, -0.7)}};
  GradMap wrong{{"x", col(0.6, 1.4)}};
  EXPECT_TRUE(finite_diff_check(f, ps, right).passed());
  const GradCheckReport r = finite_diff_check(f, ps, wrong);
  EXPECT_FALSE(r.passed());
  ASSERT_EQ(r.failing_coordinates.size(), 1u);
  EXPECT_EQ(r.failing_coordinates.front().second, 1);
}

TEST(GradCheck, SkipsUndefinedCoordinates) {
  const ParamSet ps{{"x", col(0.0, 1.0)}};
  auto f = [](const ParamSet& p) {
    if (p.at("x")(0) < 0.0) {
      throw GeometryError(GeometryError::Kind::invalid_argument, "outside");
    }
    return p.at("x").sum();
  };
  const GradCheckReport r = finite_diff_check(f, ps, GradMap{{"x", col(1, 1)}});
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.skipped_coordinates.size(), 1u);
  EXPECT_EQ(r.checked, 1u);
}
