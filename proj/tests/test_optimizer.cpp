// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace mosgeom;

TEST(Schedule, WarmupThenLinearDecay) {
  const Schedule s{1.0, 0.1, 100};
  EXPECT_EQ(s.warmup_steps(), 10);
  EXPECT_EQ(s.lr_at(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr_at(5), 0.5);
  EXPECT_DOUBLE_EQ(s.lr_at(10), 1.0);
  EXPECT_DOUBLE_EQ(s.lr_at(55), 0.5);
  EXPECT_EQ(s.lr_at(100), 0.0);
  EXPECT_EQ(s.lr_at(150), 0.0);
  EXPECT_EQ((Schedule{1.0, 0.1, 3}).warmup_steps(), 1); // ceil
  EXPECT_EQ((Schedule{2.0, 0.0, 4}).lr_at(0), 2.0);
}

TEST(Defaults, RatioAndDecay) {
  const OptimizerConfig c = OptimizerConfig::defaults(200, 3e-4, 10.0);
  EXPECT_DOUBLE_EQ(c.curvature.schedule.base_lr, 3e-3);
  EXPECT_EQ(c.capacity.weight_decay, 0.01);
  EXPECT_EQ(c.curvature.weight_decay, 0.0);
  EXPECT_EQ(c.capacity.schedule.total_steps, 200);
}

TEST(Step, SgdOneScalarEach) {
  Mat k = Mat::Zero(1, 1);
  Mat t = Mat::Zero(1, 1);
  std::vector<ParamView> views{{"k", ParamRole::curvature, true, {k.data(), 1}},
                               {"t", ParamRole::capacity, true, {t.data(), 1}}};
  GroupConfig cur;
  cur.rule = UpdateRule::sgd;
  cur.schedule = Schedule{0.1, 0.0, 1};
  GroupConfig cap = cur;
  cap.schedule.base_lr = 0.01;
  ParamGroups g = partition(views, cur, cap);
  const StepReport r = step(g, views, GradMap{{"k", Mat::Ones(1, 1)}, {"t", Mat::Ones(1, 1)}});
  EXPECT_DOUBLE_EQ(k(0, 0), -0.1);
  EXPECT_DOUBLE_EQ(t(0, 0), -0.01);
  EXPECT_EQ(r.curvature_lr, 0.1);
  EXPECT_EQ(r.capacity_lr, 0.01);
}

TEST(Step, DecoupledDecayWithZeroGradient) {
  Mat w = Mat::Constant(2, 1, 2.0);
  std::vector<ParamView> views{{"w", ParamRole::capacity, true, {w.data(), 2}}};
  GroupConfig cap;
  cap.schedule = Schedule{0.1, 0.0, 10};
  cap.weight_decay = 0.5;
  ParamGroups g = partition(views, GroupConfig{}, cap);
  step(g, views, GradMap{{"w", Mat::Zero(2, 1)}});
  // m = v = 0, so only the decay term acts: w -= lr * wd * w
  EXPECT_DOUBLE_EQ(w(0, 0), 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Step, FirstAdamStepIsSignTimesLr) {
  Mat w = Mat::Zero(3, 1);
  std::vector<ParamView> views{{"w", ParamRole::capacity, true, {w.data(), 3}}};
  GroupConfig cap;
  cap.schedule = Schedule{0.01, 0.0, 5};
  ParamGroups g = partition(views, GroupConfig{}, cap);
  Mat grad(3, 1);
  grad << 2.0, -0.5, 1e-3;
  step(g, views, GradMap{{"w", grad}});
  EXPECT_NEAR(w(0), -0.01, 1e-9); // eps in the denominator shifts it by lr * eps / |g|
  EXPECT_NEAR(w(1), 0.01, 1e-9);
  EXPECT_NEAR(w(2), -0.01, 1e-7);
  EXPECT_EQ(g.capacity.steps, 1);
}

TEST(Step, RejectsBadGradientsAtomically) {
  Mat k = Mat::Zero(1, 1);
  Mat t = Mat::Zero(2, 2);
  std::vector<ParamView> views{{"k", ParamRole::curvature, true, {k.data(), 1}},
                               {"t", ParamRole::capacity, true, {t.data(), 4}}};
  ParamGroups g = partition(views, GroupConfig{}, GroupConfig{});
  EXPECT_THROW(step(g, views, GradMap{{"k", Mat::Ones(1, 1)}}), OptimizerError);
  EXPECT_THROW(step(g, views, GradMap{{"k", Mat::Ones(1, 1)}, {"t", Mat::Ones(3, 1)}}), OptimizerError);
  EXPECT_THROW(step(g, views,
                    GradMap{{"k", Mat::Constant(1, 1, std::numeric_limits<double>::infinity())},
                            {"t", Mat::Ones(2, 2)}}),
               OptimizerError);
  EXPECT_TRUE(k.isZero());
  EXPECT_TRUE(t.isZero());
  EXPECT_EQ(g.curvature.steps, 0);
}

TEST(Partition, Rules) {
  Mat a = Mat::Zero(1, 1);
  Mat b = Mat::Zero(1, 1);
  std::vector<ParamView> views{{"a", ParamRole::curvature, true, {a.data(), 1}},
                               {"b", ParamRole::capacity, false, {b.data(), 1}}};
  const ParamGroups g = partition(views, GroupConfig{}, GroupConfig{});
  EXPECT_EQ(g.curvature.members, std::vector<std::string>{"a"});
  EXPECT_TRUE(g.capacity.members.empty());
  EXPECT_EQ(g.curvature_scalars(views), 1u);

  const ParamGroups u = partition_unified(views, GroupConfig{});
  EXPECT_EQ(u.capacity.members, std::vector<std::string>{"a"});
  EXPECT_EQ(u.capacity.label, "unified");

  views.push_back({"c", std::nullopt, true, {b.data(), 1}});
  EXPECT_THROW(partition(views, GroupConfig{}, GroupConfig{}), OptimizerError);
  views.back() = {"a", ParamRole::capacity, true, {b.data(), 1}};
  EXPECT_THROW(partition(views, GroupConfig{}, GroupConfig{}), OptimizerError);
}
