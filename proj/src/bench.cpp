// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/bench.hpp"

#include <json.hpp>

#include <sched.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace mosgeom::bench {

template <typename T>
MatT<T>& Pool<T>::mat(Eigen::Index rows, Eigen::Index cols) {
  if (next_mat_ == mats_.size()) {
    mats_.emplace_back();
  }
  MatT<T>& m = mats_[next_mat_++];
  m.resize(rows, cols);
  if (counting) {
    bytes += static_cast<std::size_t>(rows * cols) * sizeof(T);
  }
  return m;
}

template <typename T>
RowT<T>& Pool<T>::row(Eigen::Index cols) {
  if (next_row_ == rows_.size()) {
    rows_.emplace_back();
  }
  RowT<T>& r = rows_[next_row_++];
  r.resize(cols);
  if (counting) {
    bytes += static_cast<std::size_t>(cols) * sizeof(T);
  }
  return r;
}

namespace {

template <typename T>
RowT<T>& lorentz_colsum(Pool<T>& pool, const MatT<T>& products) {
  RowT<T>& r = pool.row(products.cols());
  r.noalias() = products.colwise().sum() - T(2) * products.row(0);
  return r;
}

template <typename T>
RowT<T>& colsum(Pool<T>& pool, const MatT<T>& products) {
  RowT<T>& r = pool.row(products.cols());
  r.noalias() = products.colwise().sum();
  return r;
}

template <typename T>
MatT<T>& hadamard(Pool<T>& pool, const MatT<T>& a, const MatT<T>& b) {
  MatT<T>& out = pool.mat(a.rows(), a.cols());
  out.noalias() = a.cwiseProduct(b);
  return out;
}

template <typename T>
MatT<T>& scale_cols(Pool<T>& pool, const MatT<T>& a, const RowT<T>& factors) {
  MatT<T>& out = pool.mat(a.rows(), a.cols());
  out.noalias() = a * factors.asDiagonal();
  return out;
}

template <typename T>
MatT<T>& times_col(Pool<T>& pool, const MatT<T>& a, const Eigen::Matrix<T, Eigen::Dynamic, 1>& col) {
  MatT<T>& out = pool.mat(a.rows(), a.cols());
  out.noalias() = col.asDiagonal() * a;
  return out;
}

template <typename T>
MatT<T>& outer(Pool<T>& pool, const Eigen::Matrix<T, Eigen::Dynamic, 1>& col, const RowT<T>& row) {
  MatT<T>& out = pool.mat(col.size(), row.size());
  out.noalias() = col * row;
  return out;
}

template <typename T>
MatT<T>& plus(Pool<T>& pool, const MatT<T>& a, const MatT<T>& b) {
  MatT<T>& out = pool.mat(a.rows(), a.cols());
  out.noalias() = a + b;
  return out;
}

template <typename T>
MatT<T>& minus(Pool<T>& pool, const MatT<T>& a, const MatT<T>& b) {
  MatT<T>& out = pool.mat(a.rows(), a.cols());
  out.noalias() = a - b;
  return out;
}

template <typename T>
MatT<T>& time_flipped(Pool<T>& pool, const MatT<T>& a) {
  MatT<T>& out = pool.mat(a.rows(), a.cols());
  out = a;
  out.row(0) = -out.row(0);
  return out;
}

/// Adds B A v to the given rows of `in` (the identity part is `in` itself).
template <typename T>
const MatT<T>& apply_map(Pool<T>& pool, const LowRankMap<T>* map, const MatT<T>& in, Eigen::Index first_row,
                         bool transpose) {
  if (map == nullptr || map->identity()) {
    return in;
  }
  const Eigen::Index n = in.rows() - first_row;
  const auto block = in.bottomRows(n);
  MatT<T>& low = pool.mat(map->A.rows(), in.cols());
  MatT<T>& high = pool.mat(n, in.cols());
  if (transpose) {
    low.noalias() = map->B.transpose() * block;
    high.noalias() = map->A.transpose() * low;
  } else {
    low.noalias() = map->A * block;
    high.noalias() = map->B * low;
  }
  MatT<T>& out = pool.mat(in.rows(), in.cols());
  out.topRows(first_row) = in.topRows(first_row);
  out.bottomRows(n).noalias() = block + high;
  return out;
}

/// sinh(z)/z and (z cosh z - sinh z)/z^3 with series near zero.
template <typename T>
T sinhc(T z) {
  return std::abs(z) < T(1e-4) ? T(1) + z * z / T(6) : std::sinh(z) / z;
}

template <typename T>
T sinhc_slope_over_z(T z) {
  return std::abs(z) < T(1e-2) ? T(1) / T(3) + z * z / T(30)
                               : (z * std::cosh(z) - std::sinh(z)) / (z * z * z);
}

} // namespace

// ---------------------------------------------------------------------------
// MoS chain

template <typename T>
MosChain<T>::MosChain(int depth, T kappa, const LowRankMap<T>* map) : depth_(depth), kappa_(kappa), map_(map) {
  if (depth < 1 || !(kappa < T(0))) {
    throw BenchError("MosChain: need depth >= 1 and negative curvature");
  }
}

template <typename T>
const MatT<T>& MosChain<T>::forward(const MatT<T>& x) {
  fwd_.reset();
  saved_.clear();
  const T c = std::sqrt(-kappa_);
  const T phi = T(1) / (-kappa_);
  const MatT<T>* in = &x;
  for (int l = 0; l < depth_; ++l) {
    const Eigen::Index b = in->cols();
    // inverse stereographic projection
    const RowT<T>& q = colsum(fwd_, hadamard(fwd_, *in, *in));
    RowT<T>& a = fwd_.row(b);
    a = (T(1) + kappa_ * q.array()).matrix();
    RowT<T>& time = fwd_.row(b);
    time = ((T(1) - kappa_ * q.array()) / (c * a.array())).matrix();
    RowT<T>& two_over_a = fwd_.row(b);
    two_over_a = (T(2) / a.array()).matrix();
    const MatT<T>& s = scale_cols(fwd_, *in, two_over_a);
    const MatT<T>& h = apply_map(fwd_, map_, s, 0, false);
    // lift, then stereographic projection
    const RowT<T>& m = colsum(fwd_, hadamard(fwd_, h, h));
    RowT<T>& lift = fwd_.row(b);
    lift = (m.array() + phi).sqrt().matrix();
    RowT<T>& denom = fwd_.row(b);
    denom = (T(1) + c * lift.array()).matrix();
    RowT<T>& inv_denom = fwd_.row(b);
    inv_denom = denom.cwiseInverse();
    const MatT<T>& y = scale_cols(fwd_, h, inv_denom);
    saved_.push_back({in, &h, &a, &lift, &denom});
    in = &y;
  }
  return *in;
}

template <typename T>
const MatT<T>& MosChain<T>::backward(const MatT<T>& grad_out) {
  if (static_cast<int>(saved_.size()) != depth_) {
    throw BenchError("MosChain::backward before forward");
  }
  bwd_.reset();
  const T c = std::sqrt(-kappa_);
  const MatT<T>* g = &grad_out;
  for (int l = depth_ - 1; l >= 0; --l) {
    const Saved& sv = saved_[static_cast<std::size_t>(l)];
    const Eigen::Index b = g->cols();
    // y = h / (1 + c * lift(h)),  d lift / dh = h / lift
    const RowT<T>& w = colsum(bwd_, hadamard(bwd_, *g, *sv.h));
    RowT<T>& inv_denom = bwd_.row(b);
    inv_denom = sv.denom->cwiseInverse();
    RowT<T>& coef = bwd_.row(b);
    coef = (-c * w.array() / (sv.denom->array().square() * sv.lift->array())).matrix();
    const MatT<T>& gh = plus(bwd_, scale_cols(bwd_, *g, inv_denom), scale_cols(bwd_, *sv.h, coef));
    const MatT<T>& gs = apply_map(bwd_, map_, gh, 0, true);
    // s = 2x / a,  a = 1 + kappa ||x||^2
    const RowT<T>& v = colsum(bwd_, hadamard(bwd_, gs, *sv.x));
    RowT<T>& two_over_a = bwd_.row(b);
    two_over_a = (T(2) / sv.a->array()).matrix();
    RowT<T>& coef_x = bwd_.row(b);
    coef_x = (T(-4) * kappa_ * v.array() / sv.a->array().square()).matrix();
    const MatT<T>& gx = plus(bwd_, scale_cols(bwd_, gs, two_over_a), scale_cols(bwd_, *sv.x, coef_x));
    g = &gx;
  }
  return *g;
}

// ---------------------------------------------------------------------------
// exp/log chain

template <typename T>
ExpLogChain<T>::ExpLogChain(int depth, T kappa, const LowRankMap<T>* map)
    : depth_(depth), kappa_(kappa), map_(map) {
  if (depth < 1 || !(kappa < T(0))) {
    throw BenchError("ExpLogChain: need depth >= 1 and negative curvature");
  }
}

template <typename T>
const MatT<T>& ExpLogChain<T>::forward(const MatT<T>& p) {
  fwd_.reset();
  saved_.clear();
  const T c = std::sqrt(-kappa_);
  const Eigen::Index rows = p.rows();
  const Eigen::Index b = p.cols();
  origin_ = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(rows);
  origin_(0) = T(1) / c;
  j_origin_ = origin_;
  j_origin_(0) = -origin_(0);
  const T tiny = std::numeric_limits<T>::min();

  const MatT<T>* in = &p;
  for (int l = 0; l < depth_; ++l) {
    // log at the origin
    const RowT<T>& ip = colsum(fwd_, times_col(fwd_, *in, j_origin_));
    RowT<T>& alpha = fwd_.row(b);
    alpha = (kappa_ * ip.array()).max(T(1)).matrix();
    const MatT<T>& d = minus(fwd_, *in, outer(fwd_, origin_, alpha));
    const RowT<T>& nd2 = lorentz_colsum(fwd_, hadamard(fwd_, d, d));
    RowT<T>& norm_d = fwd_.row(b);
    norm_d = nd2.array().max(tiny).sqrt().matrix();
    RowT<T>& theta = fwd_.row(b);
    RowT<T>& k = fwd_.row(b);
    for (Eigen::Index t = 0; t < b; ++t) {
      theta(t) = std::acosh(alpha(t));
      k(t) = theta(t) > T(0) ? theta(t) / (c * norm_d(t)) : T(1);
    }
    const MatT<T>& u0 = scale_cols(fwd_, d, k);
    const MatT<T>& u1 = apply_map(fwd_, map_, u0, 1, false);
    // tangent projection at the origin
    const RowT<T>& beta_ip = colsum(fwd_, times_col(fwd_, u1, j_origin_));
    RowT<T>& beta = fwd_.row(b);
    beta = (kappa_ * beta_ip.array()).matrix();
    const MatT<T>& u = minus(fwd_, u1, outer(fwd_, origin_, beta));
    // exp at the origin
    const RowT<T>& nu2 = lorentz_colsum(fwd_, hadamard(fwd_, u, u));
    RowT<T>& z = fwd_.row(b);
    z = (c * nu2.array().max(T(0)).sqrt()).matrix();
    RowT<T>& ch = fwd_.row(b);
    RowT<T>& h = fwd_.row(b);
    for (Eigen::Index t = 0; t < b; ++t) {
      ch(t) = std::cosh(z(t));
      h(t) = sinhc(z(t));
    }
    const MatT<T>& r = plus(fwd_, outer(fwd_, origin_, ch), scale_cols(fwd_, u, h));
    // back onto the manifold: recompute the time coordinate
    MatT<T>& rs2 = fwd_.mat(rows - 1, b);
    rs2.noalias() = r.bottomRows(rows - 1).cwiseProduct(r.bottomRows(rows - 1));
    const RowT<T>& rs = colsum(fwd_, rs2);
    RowT<T>& time = fwd_.row(b);
    time = (rs.array() + T(1) / (-kappa_)).sqrt().matrix();
    MatT<T>& out = fwd_.mat(rows, b);
    out = r;
    out.row(0) = time;
    saved_.push_back({in, &d, &u, &r, &alpha, &theta, &norm_d, &k, &z, &h, &time});
    in = &out;
  }
  return *in;
}

template <typename T>
const MatT<T>& ExpLogChain<T>::backward(const MatT<T>& grad_out) {
  if (static_cast<int>(saved_.size()) != depth_) {
    throw BenchError("ExpLogChain::backward before forward");
  }
  bwd_.reset();
  const T c = std::sqrt(-kappa_);
  const T c2 = -kappa_;
  const Eigen::Index b = grad_out.cols();
  const MatT<T>* g = &grad_out;
  for (int l = depth_ - 1; l >= 0; --l) {
    const Saved& sv = saved_[static_cast<std::size_t>(l)];
    // manifold projection: time = sqrt(1/|kappa| + ||r_s||^2)
    RowT<T>& gt = bwd_.row(b);
    gt = (g->row(0).array() / sv.time->array()).matrix();
    MatT<T>& gr = plus(bwd_, *g, scale_cols(bwd_, *sv.r, gt));
    gr.row(0).setZero();
    // exp: r = cosh(z) o + sinhc(z) u,  dz/du = |kappa| J u / z
    const RowT<T>& g_o = colsum(bwd_, times_col(bwd_, gr, origin_));
    const RowT<T>& g_u = colsum(bwd_, hadamard(bwd_, gr, *sv.u));
    RowT<T>& coef = bwd_.row(b);
    for (Eigen::Index t = 0; t < b; ++t) {
      coef(t) = c2 * (g_o(t) * (*sv.h)(t) + g_u(t) * sinhc_slope_over_z((*sv.z)(t)));
    }
    const MatT<T>& gu =
        plus(bwd_, scale_cols(bwd_, gr, *sv.h), scale_cols(bwd_, time_flipped(bwd_, *sv.u), coef));
    // tangent projection: u = u1 - kappa <o, u1>_L o
    const RowT<T>& s = colsum(bwd_, times_col(bwd_, gu, origin_));
    RowT<T>& ks = bwd_.row(b);
    ks = (kappa_ * s.array()).matrix();
    const MatT<T>& gu1 = minus(bwd_, gu, outer(bwd_, j_origin_, ks));
    const MatT<T>& gu0 = apply_map(bwd_, map_, gu1, 1, true);
    // log: u0 = k d,  k = acosh(alpha) / (c ||d||_L),  d = p - alpha o
    const RowT<T>& gk = colsum(bwd_, hadamard(bwd_, gu0, *sv.d));
    RowT<T>& coef_d = bwd_.row(b);
    coef_d = (-sv.k->array() * gk.array() / sv.norm_d->array().square()).matrix();
    const MatT<T>& gd =
        plus(bwd_, scale_cols(bwd_, gu0, *sv.k), scale_cols(bwd_, time_flipped(bwd_, *sv.d), coef_d));
    const RowT<T>& gd_o = colsum(bwd_, times_col(bwd_, gd, origin_));
    RowT<T>& galpha = bwd_.row(b);
    for (Eigen::Index t = 0; t < b; ++t) {
      const T a = (*sv.alpha)(t);
      galpha(t) = a > T(1) ? kappa_ * (gk(t) / (std::sqrt(a * a - T(1)) * c * (*sv.norm_d)(t)) - gd_o(t))
                           : T(0);
    }
    const MatT<T>& gp = plus(bwd_, gd, outer(bwd_, j_origin_, galpha));
    g = &gp;
  }
  return *g;
}

template <typename T>
MatT<T> chart_to_hyperboloid(const MatT<T>& x, T kappa) {
  const T c = std::sqrt(std::abs(kappa));
  MatT<T> p(x.rows() + 1, x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const T q = x.col(t).squaredNorm();
    const T denom = T(1) + kappa * q;
    p(0, t) = (T(1) - kappa * q) / (c * denom);
    p.col(t).tail(x.rows()) = (T(2) / denom) * x.col(t);
  }
  return p;
}

template <typename T>
MatT<T> hyperboloid_to_chart(const MatT<T>& p, T kappa) {
  const T c = std::sqrt(std::abs(kappa));
  MatT<T> x(p.rows() - 1, p.cols());
  for (Eigen::Index t = 0; t < p.cols(); ++t) {
    x.col(t) = p.col(t).tail(p.rows() - 1) / (T(1) + c * p(0, t));
  }
  return x;
}

template class Pool<float>;
template class Pool<double>;
template class MosChain<float>;
template class MosChain<double>;
template class ExpLogChain<float>;
template class ExpLogChain<double>;
template MatT<float> chart_to_hyperboloid(const MatT<float>&, float);
template MatT<double> chart_to_hyperboloid(const MatT<double>&, double);
template MatT<float> hyperboloid_to_chart(const MatT<float>&, float);
template MatT<double> hyperboloid_to_chart(const MatT<double>&, double);

// ---------------------------------------------------------------------------
// Sweep

const char* method_name(Method m) noexcept { return m == Method::mos ? "mos" : "explog"; }

void BenchConfig::validate() const {
  if (dims.empty() || depths.empty()) {
    throw BenchError("bench: dims and depths must be non-empty");
  }
  if (repeats < 5 || warmup_iters < 1 || batch < 1) {
    throw BenchError("bench: need repeats >= 5, warmup >= 1, batch >= 1");
  }
  for (int d : dims) {
    if (d < 1) {
      throw BenchError("bench: dims must be positive");
    }
  }
  for (int d : depths) {
    if (d < 1) {
      throw BenchError("bench: depths must be positive");
    }
  }
  if (!(kappa < 0.0) || rank < 0 || !(min_sample_us >= 0.0)) {
    throw BenchError("bench: need negative kappa, rank >= 0, min_sample_us >= 0");
  }
}

const BenchRow* BenchReport::find(Method m, const std::string& phase, int dim, int depth) const {
  for (const BenchRow& r : rows) {
    if (r.method == m && r.phase == phase && r.dim == dim && r.depth == depth) {
      return &r;
    }
  }
  return nullptr;
}

const SpeedupRow* BenchReport::speedup(int dim, int depth) const {
  for (const SpeedupRow& s : speedups) {
    if (s.dim == dim && s.depth == depth) {
      return &s;
    }
  }
  return nullptr;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["baseline"] =
      "exp/log: per layer log at the origin, interior map in the tangent space, tangent projection, exp at the "
      "origin, time coordinate recomputed; general base-point formulas. MoS: per layer inverse stereographic "
      "projection, interior map, lift, stereographic projection. Every elementwise op materializes a tensor "
      "in both pipelines.";
  j["precision"] = config.precision == Precision::single ? "single" : "double";
  j["batch"] = config.batch;
  j["repeats"] = config.repeats;
  j["warmup_iters"] = config.warmup_iters;
  j["rank"] = config.rank;
  j["kappa"] = config.kappa;
  j["dims"] = config.dims;
  j["depths"] = config.depths;
  j["identity_check"] = {{"mos_max_error", mos_identity_error},
                         {"explog_max_error", explog_identity_error},
                         {"chart_agreement", chart_agreement_error}};
  nlohmann::ordered_json rs = nlohmann::ordered_json::array();
  for (const BenchRow& r : rows) {
    rs.push_back({{"method", method_name(r.method)},
                  {"phase", r.phase},
                  {"dim", r.dim},
                  {"depth", r.depth},
                  {"median_us", r.median_us},
                  {"min_us", r.min_us},
                  {"bytes", r.bytes},
                  {"inner_iters", r.inner_iters}});
  }
  j["rows"] = rs;
  nlohmann::ordered_json sp = nlohmann::ordered_json::array();
  for (const SpeedupRow& s : speedups) {
    sp.push_back(
        {{"dim", s.dim}, {"depth", s.depth}, {"forward", s.forward}, {"backward", s.backward}, {"total", s.total}});
  }
  j["speedups"] = sp;
  j["totals_us"] = {{"mos", mos_total_us}, {"explog", explog_total_us}};
  j["overall_speedup"] = mos_total_us > 0.0 ? explog_total_us / mos_total_us : 0.0;
  j["monotone"] = {{"mos", monotone_mos}, {"explog", monotone_explog}};
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

Timing time_callable(const std::function<void()>& fn, int warmup, int repeats, double min_sample_us) {
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) {
    fn();
  }
  const auto t0 = clock::now();
  fn();
  const double once = std::chrono::duration<double, std::micro>(clock::now() - t0).count();
  Timing out;
  if (once < min_sample_us) {
    out.inner_iters = static_cast<int>(std::ceil(min_sample_us / std::max(once, 0.01)));
  }
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    const auto s0 = clock::now();
    for (int i = 0; i < out.inner_iters; ++i) {
      fn();
    }
    samples.push_back(std::chrono::duration<double, std::micro>(clock::now() - s0).count() / out.inner_iters);
  }
  std::sort(samples.begin(), samples.end());
  out.min_us = samples.front();
  const std::size_t n = samples.size();
  out.median_us = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  return out;
}

namespace {

void pin_single_thread(std::vector<std::string>& notes) {
  Eigen::setNbThreads(1);
  const int cpu = sched_getcpu();
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu < 0 ? 0 : cpu, &set);
  if (sched_setaffinity(0, sizeof(set), &set) != 0) {
    notes.emplace_back("could not pin to a single CPU; timings may be noisier");
  }
}

MatT<double> random_chart_points(int dim, int batch, double kappa, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> radius(0.2, 0.6);
  const double c = std::sqrt(std::abs(kappa));
  MatT<double> x(dim, batch);
  for (int t = 0; t < batch; ++t) {
    Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(dim, [&]() { return gauss(rng); });
    x.col(t) = v.normalized() * (radius(rng) / c);
  }
  return x;
}

LowRankMap<double> random_map(int dim, int rank, std::mt19937_64& rng) {
  LowRankMap<double> m;
  if (rank == 0) {
    return m;
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double scale = 0.1 / std::sqrt(static_cast<double>(dim));
  m.A = MatT<double>::NullaryExpr(rank, dim, [&]() { return scale * u(rng); });
  m.B = MatT<double>::NullaryExpr(dim, rank, [&]() { return scale * u(rng); });
  return m;
}

template <typename T>
LowRankMap<T> cast_map(const LowRankMap<double>& m) {
  return LowRankMap<T>{m.A.template cast<T>(), m.B.template cast<T>()};
}

struct CellTimes {
  Timing forward;
  Timing backward;
  std::size_t forward_bytes = 0;
  std::size_t backward_bytes = 0;
};

template <typename Chain, typename T>
CellTimes time_chain(Chain& chain, const MatT<T>& input, const BenchConfig& cfg) {
  CellTimes out;
  chain.forward_pool().counting = true;
  const MatT<T>& y = chain.forward(input);
  chain.forward_pool().counting = false;
  out.forward_bytes = chain.forward_pool().bytes;
  const MatT<T> seed = MatT<T>::Ones(y.rows(), y.cols());
  chain.backward_pool().counting = true;
  chain.backward(seed);
  chain.backward_pool().counting = false;
  out.backward_bytes = chain.backward_pool().bytes;

  out.forward = time_callable([&] { chain.forward(input); }, cfg.warmup_iters, cfg.repeats, cfg.min_sample_us);
  chain.forward(input);
  out.backward = time_callable([&] { chain.backward(seed); }, cfg.warmup_iters, cfg.repeats, cfg.min_sample_us);
  return out;
}

template <typename T>
void sweep(const BenchConfig& cfg, BenchReport& report) {
  std::mt19937_64 rng(cfg.seed);
  const T kappa = static_cast<T>(cfg.kappa);
  for (int dim : cfg.dims) {
    const MatT<double> x64 = random_chart_points(dim, cfg.batch, cfg.kappa, rng);
    const LowRankMap<double> map64 = random_map(dim, cfg.rank, rng);
    const MatT<T> x = x64.cast<T>();
    const MatT<T> p = chart_to_hyperboloid<double>(x64, cfg.kappa).cast<T>();
    const LowRankMap<T> map = cast_map<T>(map64);
    for (int depth : cfg.depths) {
      MosChain<T> mos(depth, kappa, &map);
      ExpLogChain<T> explog(depth, kappa, &map);
      const CellTimes tm = time_chain(mos, x, cfg);
      const CellTimes te = time_chain(explog, p, cfg);
      auto push = [&](Method m, const char* phase, const Timing& t, std::size_t bytes) {
        report.rows.push_back({m, phase, dim, depth, t.median_us, t.min_us, bytes, t.inner_iters});
      };
      push(Method::mos, "forward", tm.forward, tm.forward_bytes);
      push(Method::mos, "backward", tm.backward, tm.backward_bytes);
      push(Method::explog, "forward", te.forward, te.forward_bytes);
      push(Method::explog, "backward", te.backward, te.backward_bytes);
      const double mos_total = tm.forward.median_us + tm.backward.median_us;
      const double explog_total = te.forward.median_us + te.backward.median_us;
      report.speedups.push_back({dim, depth, te.forward.median_us / tm.forward.median_us,
                                 te.backward.median_us / tm.backward.median_us, explog_total / mos_total});
      report.mos_total_us += mos_total;
      report.explog_total_us += explog_total;
    }
  }
}

double max_abs_error(const MatT<double>& a, const MatT<double>& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

bool monotone(const BenchReport& r, Method m) {
  const auto& dims = r.config.dims;
  const auto& depths = r.config.depths;
  auto median = [&](int dim, int depth) { return r.find(m, "forward", dim, depth)->median_us; };
  std::vector<int> sd = dims;
  std::vector<int> sp = depths;
  std::sort(sd.begin(), sd.end());
  std::sort(sp.begin(), sp.end());
  for (int depth : sp) {
    for (std::size_t i = 1; i < sd.size(); ++i) {
      if (median(sd[i], depth) < 0.95 * median(sd[i - 1], depth)) {
        return false;
      }
    }
  }
  for (int dim : sd) {
    for (std::size_t i = 1; i < sp.size(); ++i) {
      if (median(dim, sp[i]) < 0.95 * median(dim, sp[i - 1])) {
        return false;
      }
    }
  }
  return true;
}

} // namespace

BenchReport bench_mapping(const BenchConfig& config) {
  config.validate();
  BenchReport report;
  report.config = config;
  pin_single_thread(report.notes);

  // Both pipelines must be the identity when the interior map is, before any
  // timing is trusted. Checked in double at the deepest configuration.
  {
    std::mt19937_64 rng(config.seed + 1);
    const int depth = *std::max_element(config.depths.begin(), config.depths.end());
    for (int dim : config.dims) {
      const MatT<double> x = random_chart_points(dim, std::min(config.batch, 8), config.kappa, rng);
      const MatT<double> p = chart_to_hyperboloid<double>(x, config.kappa);
      MosChain<double> mos(depth, config.kappa);
      ExpLogChain<double> explog(depth, config.kappa);
      const MatT<double>& y = mos.forward(x);
      const MatT<double>& q = explog.forward(p);
      report.mos_identity_error = std::max(report.mos_identity_error, max_abs_error(y, x));
      report.explog_identity_error = std::max(report.explog_identity_error, max_abs_error(q, p));
      report.chart_agreement_error =
          std::max(report.chart_agreement_error, max_abs_error(hyperboloid_to_chart<double>(q, config.kappa), y));
    }
    const double worst =
        std::max({report.mos_identity_error, report.explog_identity_error, report.chart_agreement_error});
    if (!(worst <= 1e-8)) {
      throw BenchError("bench: identity-map equivalence check failed (max error " + std::to_string(worst) + ")");
    }
  }

  if (config.precision == Precision::single) {
    sweep<float>(config, report);
  } else {
    sweep<double>(config, report);
  }
  report.monotone_mos = monotone(report, Method::mos);
  report.monotone_explog = monotone(report, Method::explog);
  int scaled = 0;
  for (const BenchRow& r : report.rows) {
    scaled += r.inner_iters > 1 ? 1 : 0;
  }
  if (scaled > 0) {
    report.notes.push_back(std::to_string(scaled) +
                           " cells ran below the timer floor; their samples loop the work (see inner_iters)");
  }
  return report;
}

} // namespace mosgeom::bench
