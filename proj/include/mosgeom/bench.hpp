// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosgeom::bench {

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Buffer cache standing in for a framework allocator: every intermediate
/// tensor gets its own slot, slots are reused across runs. When counting is
/// on, each request adds rows * cols * sizeof(T) to `bytes`.
template <typename T>
class Pool {
 public:
  MatT<T>& mat(Eigen::Index rows, Eigen::Index cols);
  RowT<T>& row(Eigen::Index cols);
  void reset() noexcept {
    next_mat_ = 0;
    next_row_ = 0;
  }
  bool counting = false;
  std::size_t bytes = 0;

 private:
  std::deque<MatT<T>> mats_;
  std::deque<RowT<T>> rows_;
  std::size_t next_mat_ = 0;
  std::size_t next_row_ = 0;
};

/// Optional interior map W = I + B A applied to the space coordinates.
template <typename T>
struct LowRankMap {
  MatT<T> A; // rank x dim
  MatT<T> B; // dim x rank
  bool identity() const noexcept { return A.size() == 0; }
};

/// depth x (inv_stereo -> W -> lift -> stereo) on chart coordinates (dim x batch).
template <typename T>
class MosChain {
 public:
  MosChain(int depth, T kappa, const LowRankMap<T>* map = nullptr);
  const MatT<T>& forward(const MatT<T>& x);
  /// Needs the activations of the last forward; returns dL/dx.
  const MatT<T>& backward(const MatT<T>& grad_out);
  Pool<T>& forward_pool() noexcept { return fwd_; }
  Pool<T>& backward_pool() noexcept { return bwd_; }

 private:
  struct Saved {
    const MatT<T>* x;
    const MatT<T>* h;
    const RowT<T>* a;
    const RowT<T>* lift;
    const RowT<T>* denom;
  };
  int depth_;
  T kappa_;
  const LowRankMap<T>* map_;
  std::vector<Saved> saved_;
  Pool<T> fwd_;
  Pool<T> bwd_;
};

/// depth x (log at origin -> W -> tangent projection -> exp at origin ->
/// manifold projection) on hyperboloid points ((dim + 1) x batch), using the
/// general base-point formulas with Lorentz inner products against the origin.
template <typename T>
class ExpLogChain {
 public:
  ExpLogChain(int depth, T kappa, const LowRankMap<T>* map = nullptr);
  const MatT<T>& forward(const MatT<T>& p);
  const MatT<T>& backward(const MatT<T>& grad_out);
  Pool<T>& forward_pool() noexcept { return fwd_; }
  Pool<T>& backward_pool() noexcept { return bwd_; }

 private:
  struct Saved {
    const MatT<T>* p;
    const MatT<T>* d;
    const MatT<T>* u;
    const MatT<T>* r;
    const RowT<T>* alpha;
    const RowT<T>* theta;
    const RowT<T>* norm_d;
    const RowT<T>* k;
    const RowT<T>* z;
    const RowT<T>* h;
    const RowT<T>* time;
  };
  int depth_;
  T kappa_;
  const LowRankMap<T>* map_;
  Eigen::Matrix<T, Eigen::Dynamic, 1> origin_;
  Eigen::Matrix<T, Eigen::Dynamic, 1> j_origin_;
  std::vector<Saved> saved_;
  Pool<T> fwd_;
  Pool<T> bwd_;
};

/// Chart <-> hyperboloid conversions used to feed both chains the same data.
template <typename T>
MatT<T> chart_to_hyperboloid(const MatT<T>& x, T kappa);
template <typename T>
MatT<T> hyperboloid_to_chart(const MatT<T>& p, T kappa);

extern template class Pool<float>;
extern template class Pool<double>;
extern template class MosChain<float>;
extern template class MosChain<double>;
extern template class ExpLogChain<float>;
extern template class ExpLogChain<double>;

enum class Precision { single, double_ };
enum class Method { mos, explog };

const char* method_name(Method m) noexcept;

struct BenchConfig {
  std::vector<int> dims{512, 1024, 2048, 4096};
  std::vector<int> depths{1, 8, 16, 32};
  int batch = 16;
  int repeats = 7;
  int warmup_iters = 2;
  Precision precision = Precision::double_;
  /// Rank of the interior map; 0 keeps it the identity.
  int rank = 0;
  double kappa = -1.0;
  /// Each timed sample repeats the work until it lasts at least this long.
  double min_sample_us = 200.0;
  unsigned seed = 7;

  void validate() const;
};

struct BenchRow {
  Method method = Method::mos;
  std::string phase; // "forward" | "backward"
  int dim = 0;
  int depth = 0;
  double median_us = 0.0;
  double min_us = 0.0;
  std::size_t bytes = 0;
  int inner_iters = 1;
};

/// exp/log time divided by MoS time.
struct SpeedupRow {
  int dim = 0;
  int depth = 0;
  double forward = 0.0;
  double backward = 0.0;
  double total = 0.0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;
  std::vector<SpeedupRow> speedups;
  /// Identity-map equivalence errors measured before timing.
  double mos_identity_error = 0.0;
  double explog_identity_error = 0.0;
  double chart_agreement_error = 0.0;
  /// Forward median non-decreasing in dim and depth, 5% slack.
  bool monotone_mos = true;
  bool monotone_explog = true;
  double mos_total_us = 0.0;
  double explog_total_us = 0.0;
  std::vector<std::string> notes;

  const BenchRow* find(Method m, const std::string& phase, int dim, int depth) const;
  const SpeedupRow* speedup(int dim, int depth) const;
  std::string to_json() const;
};

struct Timing {
  double median_us = 0.0;
  double min_us = 0.0;
  int inner_iters = 1;
};

/// Median and min over `repeats` samples after `warmup` discarded calls. Each
/// sample loops the callable enough times to last `min_sample_us`.
Timing time_callable(const std::function<void()>& fn, int warmup, int repeats, double min_sample_us);

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pins to one CPU, checks both chains are the identity for W = I, then times
/// forward and backward of both methods over the dims x depths sweep.
BenchReport bench_mapping(const BenchConfig& config);

} // namespace mosgeom::bench
