// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/bench.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <random>

using namespace mosgeom::bench;

namespace {

MatT<double> random_chart(int dim, int batch, double radius, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MatT<double> x = MatT<double>::NullaryExpr(dim, batch, [&] { return g(rng); });
  for (int c = 0; c < batch; ++c) {
    x.col(c) *= radius / x.col(c).norm();
  }
  return x;
}

template <typename Chain>
double fd_error(Chain& chain, const MatT<double>& x) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const MatT<double> y0 = chain.forward(x);
  const MatT<double> w = MatT<double>::NullaryExpr(y0.rows(), y0.cols(), [&] { return u(rng); });
  const MatT<double> grad = chain.backward(w);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); i += 3) {
    MatT<double> up = x;
    MatT<double> dn = x;
    up(i) += 1e-6;
    dn(i) -= 1e-6;
    const double num = (chain.forward(up).cwiseProduct(w).sum() - chain.forward(dn).cwiseProduct(w).sum()) / 2e-6;
    worst = std::max(worst, std::abs(num - grad(i)) / std::max(1.0, std::abs(num)));
  }
  return worst;
}

} // namespace

TEST(Chains, IdentityMapIsIdentity) {
  const MatT<double> x = random_chart(16, 4, 0.6, 1);
  MosChain<double> mos(3, -1.0);
  EXPECT_LT((mos.forward(x) - x).cwiseAbs().maxCoeff(), 1e-12);
  const MatT<double> p = chart_to_hyperboloid<double>(x, -1.0);
  ExpLogChain<double> el(3, -1.0);
  EXPECT_LT((el.forward(p) - p).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((hyperboloid_to_chart<double>(p, -1.0) - x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Chains, BackwardMatchesDifferences) {
  const MatT<double> x = random_chart(6, 3, 0.5, 2);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  LowRankMap<double> map;
  map.A = MatT<double>::NullaryExpr(2, 6, [&] { return u(rng); });
  map.B = MatT<double>::NullaryExpr(6, 2, [&] { return u(rng); });
  MosChain<double> mos(2, -0.7, &map);
  EXPECT_LT(fd_error(mos, x), 1e-7);
  ExpLogChain<double> el(2, -0.7, &map);
  EXPECT_LT(fd_error(el, chart_to_hyperboloid<double>(x, -0.7)), 1e-7);
}

TEST(Chains, ByteAccountingScalesWithDepth) {
  const MatT<double> x = random_chart(32, 4, 0.5, 3);
  auto bytes = [&](int depth) {
    MosChain<double> mos(depth, -1.0);
    mos.forward_pool().counting = true;
    mos.forward(x);
    return mos.forward_pool().bytes;
  };
  EXPECT_GT(bytes(1), 0u);
  EXPECT_EQ(bytes(4), 4 * bytes(1));
}

TEST(Timing, SelfComparisonIsNearOne) {
  MatT<double> a = MatT<double>::Random(64, 64);
  MatT<double> b;
  auto fn = [&] { b.noalias() = a * a; };
  const Timing t1 = time_callable(fn, 2, 9, 500.0);
  const Timing t2 = time_callable(fn, 2, 9, 500.0);
  EXPECT_GE(t1.median_us, t1.min_us);
  EXPECT_GT(t1.min_us, 0.0);
  const double ratio = t1.median_us / t2.median_us;
  EXPECT_GT(ratio, 0.5);
  EXPECT_LT(ratio, 2.0);
}

TEST(Config, Validation) {
  BenchConfig c;
  EXPECT_NO_THROW(c.validate());
  c.repeats = 4;
  EXPECT_THROW(c.validate(), BenchError);
  c = BenchConfig{};
  c.warmup_iters = 0;
  EXPECT_THROW(c.validate(), BenchError);
  c = BenchConfig{};
  c.dims.clear();
  EXPECT_THROW(c.validate(), BenchError);
  c = BenchConfig{};
  c.kappa = 0.5;
  EXPECT_THROW(c.validate(), BenchError);
}

TEST(Report, SweepShapeAndJson) {
  BenchConfig c;
  c.dims = {64, 128};
  c.depths = {2};
  c.repeats = 5;
  c.warmup_iters = 1;
  c.min_sample_us = 50.0;
  const BenchReport r = bench_mapping(c);
  EXPECT_EQ(r.rows.size(), 2u * 1u * 2u * 2u); // dims x depths x phases x methods
  EXPECT_EQ(r.speedups.size(), 2u);
  for (const BenchRow& row : r.rows) {
    EXPECT_GT(row.min_us, 0.0);
    EXPECT_GE(row.median_us, row.min_us);
    EXPECT_GT(row.bytes, 0u);
  }
  EXPECT_LT(r.mos_identity_error, 1e-8);
  EXPECT_LT(r.explog_identity_error, 1e-8);
  const auto doc = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(doc.at("rows").size(), 8u);
  for (const auto& row : doc.at("rows")) {
    for (const char* key : {"method", "phase", "dim", "depth", "median_us", "min_us", "bytes"}) {
      EXPECT_TRUE(row.contains(key)) << key;
    }
  }
  ASSERT_NE(r.find(Method::mos, "forward", 64, 2), nullptr);
  EXPECT_EQ(r.find(Method::mos, "forward", 65, 2), nullptr);
}

TEST(Report, SinglePrecisionRuns) {
  BenchConfig c;
  c.dims = {64};
  c.depths = {1};
  c.repeats = 5;
  c.warmup_iters = 1;
  c.min_sample_us = 20.0;
  c.precision = Precision::single;
  const BenchReport r = bench_mapping(c);
  EXPECT_EQ(r.rows.size(), 4u);
  EXPECT_LT(r.mos_identity_error, 1e-8); // identity check always runs in double
}
