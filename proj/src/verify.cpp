// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/verify.hpp"

#include "mosgeom/geometry.hpp"
#include "mosgeom/gradcheck.hpp"
#include "mosgeom/layer.hpp"
#include "mosgeom/optimizer.hpp"
#include "mosgeom/tape.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mosgeom {

bool SuiteResult::expect(bool ok, std::string_view what, double error) {
  ++checks;
  if (std::isfinite(error)) {
    worst = std::max(worst, error);
  } else {
    worst = std::numeric_limits<double>::infinity();
  }
  if (!ok) {
    ++failures;
    if (messages.size() < 8) {
      std::ostringstream msg;
      msg << what;
      if (error != 0.0) {
        msg << " (error " << error << ")";
      }
      messages.push_back(msg.str());
    }
  }
  return ok;
}

bool VerifyReport::passed() const noexcept {
  return !suites.empty() && std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed(); });
}

std::string VerifyReport::table() const {
  std::ostringstream out;
  out << std::left << std::setw(13) << "suite" << std::right << std::setw(10) << "checks" << std::setw(10)
      << "failures" << std::setw(14) << "worst" << std::setw(10) << "seconds" << "  result\n";
  for (const SuiteResult& s : suites) {
    out << std::left << std::setw(13) << s.name << std::right << std::setw(10) << s.checks << std::setw(10)
        << s.failures << std::setw(14) << std::setprecision(3) << std::scientific << s.worst << std::setw(10)
        << std::fixed << std::setprecision(2) << s.seconds << "  " << (s.passed() ? "PASS" : "FAIL") << "\n";
    out.unsetf(std::ios::floatfield);
    for (const std::string& m : s.messages) {
      out << "    " << m << "\n";
    }
  }
  return out.str();
}

namespace {

using Rng = std::mt19937_64;

Vec random_direction(int dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec v(dim);
  do {
    for (int i = 0; i < dim; ++i) {
      v(i) = gauss(rng);
    }
  } while (v.norm() == 0.0);
  return v.normalized();
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Mat random_mat(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Mat::NullaryExpr(rows, cols, [&]() { return u(rng); });
}

double rel_inf(const Vec& got, const Vec& want) {
  return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
}

/// Relative residual of the curvature-k manifold equation.
double constraint_residual(const AmbientPoint& p, double kappa) {
  const double sq = p.s.squaredNorm();
  const double lhs = kappa < 0.0 ? -p.xi * p.xi + sq : p.xi * p.xi + sq;
  return std::abs(lhs - 1.0 / kappa) / std::max({1.0, p.xi * p.xi + sq, 1.0 / std::abs(kappa)});
}

constexpr double kCurvatures[] = {-2.0, -1.0, -0.1, 0.1, 1.0, 2.0};

/// Point on the hyperboloid (from a chart point well inside the ball).
AmbientPoint random_hyperboloid_point(int dim, const Curvature& k, Rng& rng) {
  const double r = uniform(rng, 0.0, 0.9) / k.sqrt_abs();
  return inv_stereo(r * random_direction(dim, rng), k);
}

TangentVector random_tangent(const AmbientPoint& x, const Curvature& k, double max_z, Rng& rng) {
  const int dim = static_cast<int>(x.s.size());
  TangentVector u;
  u.base = x;
  u.space = random_direction(dim, rng);
  u.time = x.s.dot(u.space) / x.xi;
  const double norm = std::sqrt(std::max(lorentz_inner(u.components(), u.components()), 1e-300));
  const double target = uniform(rng, 0.0, max_z) / k.sqrt_abs();
  u.space *= target / norm;
  u.time *= target / norm;
  return u;
}

template <typename Fn>
SuiteResult timed(std::string name, Fn&& body) {
  SuiteResult s;
  s.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(s);
  } catch (const std::exception& e) {
    s.expect(false, std::string("suite aborted: ") + e.what());
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

} // namespace

// ---------------------------------------------------------------------------

SuiteResult suite_roundtrip(long cases, int max_dim, std::uint64_t seed) {
  return timed("roundtrip", [&](SuiteResult& s) {
    Rng rng(seed);
    for (long i = 0; i < cases; ++i) {
      const double kv = kCurvatures[i % 6];
      const Curvature k(kv);
      const int dim = uniform_int(rng, 1, max_dim);
      const double r = (kv < 0.0 ? uniform(rng, 0.0, 0.95) : uniform(rng, 0.0, 3.0)) / k.sqrt_abs();
      const Vec x = r * random_direction(dim, rng);
      try {
        const double err = rel_inf(stereo(inv_stereo(x, k), k), x);
        s.expect(err <= 1e-11, "stereo(inv_stereo(x)) != x", err);
      } catch (const GeometryError& e) {
        s.expect(false, e.what());
      }
      if (kv >= 0.0) {
        continue;
      }
      try {
        const AmbientPoint base = random_hyperboloid_point(dim, k, rng);
        const TangentVector u = random_tangent(base, k, 2.0, rng);
        const TangentVector back = log_map(base, exp_map(base, u, k), k);
        Vec want(dim + 1);
        want << u.time, u.space;
        Vec got(dim + 1);
        got << back.time, back.space;
        const double e1 = rel_inf(got, want);
        s.expect(e1 <= 1e-8, "log(exp(u)) != u", e1);

        const AmbientPoint y = random_hyperboloid_point(dim, k, rng);
        const AmbientPoint y2 = exp_map(base, log_map(base, y, k), k);
        const double e2 = rel_inf(y2.stacked(), y.stacked());
        s.expect(e2 <= 1e-8, "exp(log(y)) != y", e2);
      } catch (const GeometryError& e) {
        s.expect(false, e.what());
      }
    }
  });
}

SuiteResult suite_constraints(long cases, int max_dim, std::uint64_t seed) {
  return timed("constraints", [&](SuiteResult& s) {
    Rng rng(seed);
    for (long i = 0; i < cases; ++i) {
      const double kv = kCurvatures[i % 6];
      const Curvature k(kv);
      const int dim = uniform_int(rng, 1, max_dim);
      try {
        const double rx = (kv < 0.0 ? uniform(rng, 0.0, 0.95) : uniform(rng, 0.0, 3.0)) / k.sqrt_abs();
        const AmbientPoint p = inv_stereo(rx * random_direction(dim, rng), k);
        const double e1 = constraint_residual(p, kv);
        s.expect(e1 <= 1e-10, "inv_stereo leaves the manifold", e1);

        const double rs = (kv < 0.0 ? uniform(rng, 0.0, 5.0) : uniform(rng, 0.0, 0.95)) / k.sqrt_abs();
        const AmbientPoint q = mos_lift(rs * random_direction(dim, rng), k);
        const double e2 = constraint_residual(q, kv);
        s.expect(e2 <= 1e-10 && q.xi >= 0.0, "mos_lift leaves the manifold", e2);

        if (kv < 0.0) {
          const AmbientPoint base = random_hyperboloid_point(dim, k, rng);
          const TangentVector u = random_tangent(base, k, 2.0, rng);
          const double e3 = constraint_residual(exp_map(base, u, k), kv);
          s.expect(e3 <= 1e-10, "exp_map leaves the manifold", e3);
          const TangentVector v = log_map(base, random_hyperboloid_point(dim, k, rng), k);
          const double tangency = std::abs(lorentz_inner(base, v.components())) /
                                  std::max(1.0, base.stacked().norm() * v.components().stacked().norm());
          s.expect(tangency <= 1e-10, "log_map result is not tangent", tangency);
        }
      } catch (const GeometryError& e) {
        s.expect(false, e.what());
      }
    }
    // Flat space: the lift is the Euclidean norm.
    const Vec v = random_direction(5, rng) * 3.0;
    const AmbientPoint flat = mos_lift(v, Curvature(0.0));
    s.expect(std::abs(flat.xi - v.norm()) <= 1e-12, "flat lift is not the norm", std::abs(flat.xi - v.norm()));
  });
}

SuiteResult suite_scaling(long per_cell, std::uint64_t seed) {
  return timed("scaling", [&](SuiteResult& s) {
    Rng rng(seed);
    constexpr double kGammas[] = {0.1, 1.0, 10.0, 1000.0};
    // The dead band is shrunk so kappa / gamma^2 = 1e-7 still counts as curved.
    constexpr double kTinyDeadBand = 1e-12;
    for (double gamma : kGammas) {
      for (double kv : kCurvatures) {
        const Curvature k(kv, true, kTinyDeadBand);
        const Curvature k_scaled = k.with_kappa(kv / (gamma * gamma));
        const ScalingConfig scaling(gamma);
        long bad = 0;
        double cell_worst = 0.0;
        for (long i = 0; i < per_cell; ++i) {
          const int dim = uniform_int(rng, 2, 16);
          const double r = (kv < 0.0 ? uniform(rng, 0.0, 0.9) : uniform(rng, 0.0, 2.0)) / k.sqrt_abs();
          const Vec x = r * random_direction(dim, rng);
          Mat W = random_mat(dim, dim, 1.0, rng);
          if (kv > 0.0) {
            W *= 0.95 / W.norm(); // keeps ||W s|| inside the spherical domain
          }
          try {
            const Vec lhs = mos_transform(x, W, k);
            const Vec rhs = scaled_pipeline(x, W, k_scaled, scaling);
            const double err = (lhs - rhs).norm() / std::max(lhs.norm(), 1e-300);
            cell_worst = std::max(cell_worst, err);
            bad += err < 1e-6 ? 0 : 1;
            if (i == 0) {
              // The lift takes the upper sheet, so the anchor stays inside the
              // spherical domain where inv_stereo lands there too.
              const Mat I = Mat::Identity(dim, dim);
              const Vec x0 = uniform(rng, 0.0, 0.5) / k.sqrt_abs() * random_direction(dim, rng);
              const double anchor = rel_inf(scaled_pipeline(x0, I, k_scaled, scaling), x0);
              std::ostringstream what;
              what << "identity map not preserved (gamma " << gamma << ", kappa " << kv << ")";
              s.expect(anchor <= 1e-10, what.str(), anchor);
            }
          } catch (const GeometryError& e) {
            ++bad;
          }
        }
        std::ostringstream what;
        what << "gamma " << gamma << ", kappa " << kv << ": " << bad << "/" << per_cell << " pairs off";
        s.expect(bad == 0, what.str(), cell_worst);
      }
    }
  });
}

SuiteResult suite_gradbounds(long per_kappa, std::uint64_t seed) {
  return timed("gradbounds", [&](SuiteResult& s) {
    Rng rng(seed);
    for (double kv : kCurvatures) {
      const Curvature k(kv);
      const double R = (1.0 - limits::kSphericalMargin) / k.sqrt_abs();
      const double bound = kv < 0.0 ? 1.0 : spherical_gradient_bound(k, R);
      long bad = 0;
      double worst_excess = 0.0;
      for (long i = 0; i < per_kappa; ++i) {
        const int dim = uniform_int(rng, 1, 64);
        const double norm = kv < 0.0 ? std::pow(10.0, uniform(rng, -4.0, 4.0))
                                     : (i % 10 == 0 ? R : R * std::sqrt(uniform(rng, 0.0, 1.0)));
        const Vec u = norm * random_direction(dim, rng);
        try {
          const double g = lift_gradient_norm(u, k);
          const double slack = kv < 0.0 ? 0.0 : 1e-12;
          worst_excess = std::max(worst_excess, g - bound);
          bad += g <= bound + slack ? 0 : 1;
        } catch (const GeometryError&) {
          ++bad;
        }
      }
      std::ostringstream what;
      what << "kappa " << kv << ": " << bad << " samples above the bound";
      s.expect(bad == 0, what.str(), std::max(worst_excess, 0.0));

      // The analytic gradient agrees with differences of the lift itself.
      const Vec u = (kv < 0.0 ? 1.3 : 0.5 * R) * random_direction(4, rng);
      const Vec g = lift_gradient(u, k);
      double err = 0.0;
      for (int j = 0; j < 4; ++j) {
        Vec up = u;
        Vec dn = u;
        up(j) += 1e-6;
        dn(j) -= 1e-6;
        const double num = (mos_lift(up, k).xi - mos_lift(dn, k).xi) / 2e-6;
        err = std::max(err, gradient_relative_error(g(j), num, 1e-6));
      }
      s.expect(err <= 1e-6, "lift gradient disagrees with differences", err);
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

using Builder = std::function<Var(Tape&, std::map<std::string, Var>&)>;

GradCheckReport check_op(const ParamSet& params, const Builder& build, Rng& rng) {
  Mat weights;
  auto eval = [&](const ParamSet& ps, GradMap* grads) {
    Tape tape;
    std::map<std::string, Var> vars;
    for (const auto& [name, value] : ps) {
      vars[name] = tape.leaf(name, value);
    }
    const Var out = build(tape, vars);
    if (weights.size() == 0) {
      weights = random_mat(tape.value(out).rows(), tape.value(out).cols(), 1.0, rng);
    }
    const Var loss = tape.weighted_sum(out, weights);
    const double v = tape.scalar(loss);
    if (grads != nullptr) {
      *grads = tape.backward(loss);
    }
    return v;
  };
  GradMap grads;
  eval(params, &grads);
  return finite_diff_check([&](const ParamSet& ps) { return eval(ps, nullptr); }, params, grads);
}

Mat columns_with_norms(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    m.col(c) = uniform(rng, lo, hi) * random_direction(static_cast<int>(rows), rng);
  }
  return m;
}

Mat scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

struct LayerProblem {
  MoSLoRAParams base;
  Mat frozen;
  Mat tokens;
  Mat head;
  std::vector<int> labels;
};

LayerProblem make_layer_problem(Rng& rng) {
  LayerConfig cfg;
  cfg.d_in = 6;
  cfg.d_out = 5;
  cfg.rank = 3;
  cfg.scaling = ScalingConfig(1.0); // unit scale so curvature gradients are not tiny
  cfg.aux_coefficient = 0.05;
  LayerProblem p;
  p.base = MoSLoRAParams::init(cfg, rng());
  for (ExpertParams& e : p.base.experts) {
    e.A = random_mat(cfg.rank, cfg.d_in, 0.4, rng);
    e.B = random_mat(cfg.d_out, cfg.rank, 0.3, rng);
    if (e.group == GeometryGroup::hyperbolic) {
      e.curvature.kappa = -uniform(rng, 0.5, 1.5);
    } else if (e.group == GeometryGroup::spherical) {
      e.curvature.kappa = uniform(rng, 0.5, 1.5);
    }
  }
  p.base.router = random_mat(cfg.n_experts, cfg.d_in, 1.0, rng);
  p.frozen = random_mat(cfg.d_out, cfg.d_in, 0.5, rng);
  p.tokens = columns_with_norms(cfg.d_in, 7, 0.1, 0.5, rng);
  p.head = random_mat(3, cfg.d_out, 1.0, rng);
  for (int t = 0; t < 7; ++t) {
    p.labels.push_back(uniform_int(rng, 0, 2));
  }
  return p;
}

ParamSet layer_param_set(const LayerProblem& p) {
  ParamSet ps;
  ps["router"] = p.base.router;
  for (std::size_t e = 0; e < p.base.experts.size(); ++e) {
    const ExpertParams& ex = p.base.experts[e];
    const std::string base = "expert" + std::to_string(e) + ".";
    ps[base + "A"] = ex.A;
    ps[base + "B"] = ex.B;
    if (ex.curvature.learnable) {
      ps[base + "kappa"] = scalar(ex.curvature.kappa);
    }
  }
  ps["head"] = p.head;
  return ps;
}

double layer_loss(const LayerProblem& p, const ParamSet& ps, GradMap* grads,
                  const std::vector<std::vector<int>>* expected_routing) {
  MoSLoRAParams params = p.base;
  params.router = ps.at("router");
  for (std::size_t e = 0; e < params.experts.size(); ++e) {
    ExpertParams& ex = params.experts[e];
    const std::string base = "expert" + std::to_string(e) + ".";
    ex.A = ps.at(base + "A");
    ex.B = ps.at(base + "B");
    if (ex.curvature.learnable) {
      ex.curvature.kappa = ps.at(base + "kappa")(0, 0);
    }
  }
  Tape tape;
  const LayerLeaves leaves = register_layer_leaves(tape, params, "");
  const Var head = tape.leaf("head", ps.at("head"));
  const Var tokens = tape.constant(p.tokens);
  const TapedLayer layer = layer_forward_taped(tape, tokens, p.frozen, params, leaves);
  if (expected_routing != nullptr && layer.decision.indices != *expected_routing) {
    // Top-K selection is piecewise constant; a perturbation that flips it
    // has no derivative to compare against.
    throw GeometryError(GeometryError::Kind::invalid_argument, "routing changed under perturbation");
  }
  const Var logits = tape.matmul(head, tape.tanh(layer.output));
  const Var loss =
      tape.add(tape.cross_entropy(logits, p.labels), tape.scale(layer.aux_loss, params.config.aux_coefficient));
  const double v = tape.scalar(loss);
  if (grads != nullptr) {
    *grads = tape.backward(loss);
  }
  return v;
}

} // namespace

SuiteResult suite_gradcheck(int seeds, std::uint64_t seed) {
  return timed("gradcheck", [&](SuiteResult& s) {
    auto record = [&s](const std::string& label, const GradCheckReport& r) {
      s.expect(r.passed() && r.checked > 0, label, r.max_relative_error);
    };
    for (int i = 0; i < seeds; ++i) {
      Rng rng(seed + static_cast<std::uint64_t>(i) * 7919);
      auto M = [&](Eigen::Index r, Eigen::Index c) { return random_mat(r, c, 1.0, rng); };

      record("matmul", check_op({{"a", M(3, 4)}, {"b", M(4, 2)}},
                                [](Tape& t, auto& v) { return t.matmul(v["a"], v["b"]); }, rng));
      record("add", check_op({{"a", M(3, 2)}, {"b", M(3, 2)}},
                             [](Tape& t, auto& v) { return t.add(v["a"], v["b"]); }, rng));
      record("sub", check_op({{"a", M(3, 2)}, {"b", M(3, 2)}},
                             [](Tape& t, auto& v) { return t.sub(v["a"], v["b"]); }, rng));
      record("scale", check_op({{"a", M(3, 2)}}, [](Tape& t, auto& v) { return t.scale(v["a"], -1.7); }, rng));
      record("hadamard", check_op({{"a", M(3, 2)}, {"b", M(3, 2)}},
                                  [](Tape& t, auto& v) { return t.hadamard(v["a"], v["b"]); }, rng));
      const Mat denom = (M(3, 2).array().abs() + 0.5).matrix();
      record("divide", check_op({{"a", M(3, 2)}, {"b", denom}},
                                [](Tape& t, auto& v) { return t.divide(v["a"], v["b"]); }, rng));
      record("sqrt", check_op({{"a", denom}}, [](Tape& t, auto& v) { return t.sqrt(v["a"]); }, rng));
      record("tanh", check_op({{"a", M(3, 2)}}, [](Tape& t, auto& v) { return t.tanh(v["a"]); }, rng));
      record("col_sq_norms",
             check_op({{"a", M(4, 3)}}, [](Tape& t, auto& v) { return t.col_sq_norms(v["a"]); }, rng));
      record("sum", check_op({{"a", M(4, 3)}}, [](Tape& t, auto& v) { return t.sum(v["a"]); }, rng));
      record("add_col", check_op({{"m", M(3, 4)}, {"c", M(3, 1)}},
                                 [](Tape& t, auto& v) { return t.add_col(v["m"], v["c"]); }, rng));
      record("mul_row", check_op({{"m", M(3, 4)}, {"r", M(1, 4)}},
                                 [](Tape& t, auto& v) { return t.mul_row(v["m"], v["r"]); }, rng));
      record("softmax_cols",
             check_op({{"a", M(5, 3)}}, [](Tape& t, auto& v) { return t.softmax_cols(v["a"]); }, rng));
      record("gather_cols", check_op({{"a", M(3, 4)}},
                                     [](Tape& t, auto& v) { return t.gather_cols(v["a"], {2, 0, 2}); }, rng));
      record("scatter_cols", check_op({{"a", M(3, 2)}},
                                      [](Tape& t, auto& v) { return t.scatter_cols(v["a"], {3, 1}, 5); }, rng));
      const std::vector<int> labels{0, 3, 1, 1, 2};
      record("cross_entropy", check_op({{"z", M(4, 5)}},
                                       [&labels](Tape& t, auto& v) { return t.cross_entropy(v["z"], labels); },
                                       rng));

      for (double kv : {-uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0)}) {
        const Curvature k(kv);
        const double reach = 1.0 / k.sqrt_abs();
        const double eps0 = limits::kEpsilonZero;
        const std::string tag = kv < 0.0 ? " (hyperbolic)" : " (spherical)";
        record("inv_stereo_space" + tag,
               check_op({{"x", columns_with_norms(4, 3, 0.1 * reach, 0.8 * reach, rng)}, {"k", scalar(kv)}},
                        [eps0](Tape& t, auto& v) {
                          return t.inv_stereo_space(v["x"], v["k"], eps0, GuardMode::verify);
                        },
                        rng));
        record("lift_time" + tag,
               check_op({{"s", columns_with_norms(4, 3, 0.1 * reach, 0.8 * reach, rng)}, {"k", scalar(kv)}},
                        [eps0](Tape& t, auto& v) { return t.lift_time(v["s"], v["k"], eps0, GuardMode::verify); },
                        rng));
        Mat time(1, 3);
        for (int j = 0; j < 3; ++j) {
          time(0, j) = uniform(rng, 0.2, 2.0) * reach;
        }
        record("stereo" + tag, check_op({{"t", time}, {"s", M(4, 3)}, {"k", scalar(kv)}},
                                        [eps0](Tape& t, auto& v) { return t.stereo(v["t"], v["s"], v["k"], eps0); },
                                        rng));
        Mat mixed = columns_with_norms(4, 4, 0.1 * reach, 0.7 * reach, rng);
        mixed.col(1) *= 1.5 * reach / mixed.col(1).norm(); // clamped when the sign is active
        mixed.col(3) *= 1.3 * reach / mixed.col(3).norm();
        const double active = kv < 0.0 ? -1.0 : 1.0;
        record("radial_clamp" + tag,
               check_op({{"x", mixed}, {"k", scalar(kv)}},
                        [eps0, active](Tape& t, auto& v) {
                          return t.radial_clamp(v["x"], v["k"], eps0, active, limits::kSphericalMargin);
                        },
                        rng));
      }

      // Full adapted layer: cross-entropy head plus grouped auxiliary loss.
      const LayerProblem problem = make_layer_problem(rng);
      const ParamSet ps = layer_param_set(problem);
      GradMap grads;
      std::vector<std::vector<int>> routing;
      {
        layer_loss(problem, ps, &grads, nullptr);
        Tape probe;
        const LayerLeaves leaves = register_layer_leaves(probe, problem.base, "");
        routing = layer_forward_taped(probe, probe.constant(problem.tokens), problem.frozen, problem.base, leaves)
                      .decision.indices;
      }
      const GradCheckReport r = finite_diff_check(
          [&](const ParamSet& q) { return layer_loss(problem, q, nullptr, &routing); }, ps, grads);
      record("layer loss", r);
    }
  });
}

// ---------------------------------------------------------------------------

namespace {

LayerConfig aux_config(std::array<int, kGroupCount> sizes, int top_k) {
  LayerConfig cfg;
  cfg.d_in = 4;
  cfg.d_out = 4;
  cfg.group_sizes = sizes;
  cfg.n_experts = sizes[0] + sizes[1] + sizes[2];
  cfg.top_k = top_k;
  return cfg;
}

RoutingDecision manual_decision(const Mat& probs, std::vector<std::vector<int>> indices, const LayerConfig& cfg) {
  RoutingDecision d;
  d.probabilities = probs;
  for (const auto& sel : indices) {
    d.gates.emplace_back(sel.size(), 1.0 / static_cast<double>(sel.size()));
  }
  d.indices = std::move(indices);
  populate_group_stats(d, cfg);
  return d;
}

Mat random_probabilities(int experts, int tokens, Rng& rng) {
  Mat p = random_mat(experts, tokens, 3.0, rng).array().exp().matrix();
  for (int t = 0; t < tokens; ++t) {
    p.col(t) /= p.col(t).sum();
  }
  return p;
}

} // namespace

SuiteResult suite_auxloss(int trials, std::uint64_t seed) {
  return timed("auxloss", [&](SuiteResult& s) {
    Rng rng(seed);
    const double ulp = std::numeric_limits<double>::epsilon();

    // Uniform within-group routing gives the minimum 1: exactly for dyadic
    // group sizes, to a few ulps otherwise.
    {
      const LayerConfig cfg = aux_config({3, 3, 2}, 4);
      std::vector<std::vector<int>> idx;
      for (int t = 0; t < 6; ++t) {
        idx.push_back({t % 3, 3 + t % 3, 6, 7});
      }
      const AuxLossBreakdown b =
          grouped_aux_loss_breakdown(manual_decision(Mat::Constant(8, 6, 0.125), idx, cfg), cfg);
      for (double g : b.per_group) {
        s.expect(std::abs(g - 1.0) <= 4 * ulp, "uniform routing is not the minimum 1", std::abs(g - 1.0));
      }
      const LayerConfig dyadic = aux_config({4, 2, 2}, 4);
      idx.clear();
      for (int t = 0; t < 4; ++t) {
        idx.push_back({t % 4, (t + 2) % 4, 4 + t % 2, 6 + t % 2});
      }
      const double total = grouped_aux_loss(manual_decision(Mat::Constant(8, 4, 0.125), idx, dyadic), dyadic);
      s.expect(total == 1.0, "uniform dyadic routing is not exactly 1", std::abs(total - 1.0));
    }

    // Full concentration on one expert gives N_g exactly.
    {
      const LayerConfig cfg = aux_config({3, 3, 2}, 4);
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        const int start = g == 0 ? 0 : (g == 1 ? 3 : 6);
        Mat p = Mat::Zero(8, 5);
        for (int t = 0; t < 5; ++t) {
          p(start, t) = 0.5;
          int placed = 0;
          for (int e = 0; e < 8 && placed < 5; ++e) {
            if (e < start || e >= start + cfg.group_sizes[g]) {
              p(e, t) = 0.1;
              ++placed;
            }
          }
          p.col(t) /= p.col(t).sum();
        }
        const AuxLossBreakdown b = grouped_aux_loss_breakdown(decide_routing(p, cfg), cfg);
        s.expect(b.per_group[g] == static_cast<double>(cfg.group_sizes[g]),
                 std::string("concentrated ") + group_name(static_cast<GeometryGroup>(g)) + " group is not N_g",
                 std::abs(b.per_group[g] - cfg.group_sizes[g]));
      }
    }

    const LayerConfig cfg = aux_config({3, 3, 2}, 4);
    for (int trial = 0; trial < trials; ++trial) {
      // Moving mass between groups, selections fixed, leaves the loss alone.
      const int tokens = uniform_int(rng, 1, 12);
      const Mat p = random_probabilities(8, tokens, rng);
      const RoutingDecision base = decide_routing(p, cfg);
      Mat shifted = p;
      for (int t = 0; t < tokens; ++t) {
        shifted.col(t).segment(0, 3) *= uniform(rng, 0.2, 5.0);
        shifted.col(t).segment(3, 3) *= uniform(rng, 0.2, 5.0);
        shifted.col(t).segment(6, 2) *= uniform(rng, 0.2, 5.0);
        shifted.col(t) /= shifted.col(t).sum();
      }
      RoutingDecision moved = base;
      moved.probabilities = shifted;
      populate_group_stats(moved, cfg);
      const double diff = std::abs(grouped_aux_loss(moved, cfg) - grouped_aux_loss(base, cfg));
      s.expect(diff <= 1e-10, "cross-group mass shift changed the loss", diff);

      // A single token's decision can never beat the minimum.
      const RoutingDecision one = decide_routing(random_probabilities(8, 1, rng), cfg);
      const AuxLossBreakdown b = grouped_aux_loss_breakdown(one, cfg);
      for (double g : b.per_group) {
        s.expect(g >= 1.0 - 1e-12, "single-token group loss below 1", std::max(0.0, 1.0 - g));
      }
    }

    // Groups with no slots contribute their minimum and are flagged.
    {
      const LayerConfig single = aux_config({3, 3, 2}, 1);
      Mat p = Mat::Constant(8, 1, 0.05);
      p(4, 0) = 0.65;
      const AuxLossBreakdown b = grouped_aux_loss_breakdown(decide_routing(p, single), single);
      s.expect(b.empty_group[0] && b.empty_group[2] && !b.empty_group[1], "empty groups not flagged");
      s.expect(b.per_group[0] == 1.0 && b.per_group[2] == 1.0, "empty group does not contribute 1");
    }
  });
}

// ---------------------------------------------------------------------------

namespace {

struct FakeModel {
  Mat kappa = Mat::Zero(6, 1);
  Mat theta = Mat::Zero(3, 4);
  Mat frozen_kappa = Mat::Zero(2, 1);

  std::vector<ParamView> views() {
    return {{"kappa", ParamRole::curvature, true, {kappa.data(), static_cast<std::size_t>(kappa.size())}},
            {"theta", ParamRole::capacity, true, {theta.data(), static_cast<std::size_t>(theta.size())}},
            {"euclid_kappa", ParamRole::curvature, false, {frozen_kappa.data(), 2}}};
  }
};

GroupConfig adamw(double lr, double wd, long total) {
  GroupConfig g;
  g.schedule = Schedule{lr, 0.1, total};
  g.weight_decay = wd;
  return g;
}

bool bit_equal(const Mat& a, const Mat& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

} // namespace

SuiteResult suite_optimizer(int trials, std::uint64_t seed) {
  return timed("optimizer", [&](SuiteResult& s) {
    Rng rng(seed);
    constexpr long kSteps = 6;
    for (int trial = 0; trial < trials; ++trial) {
      FakeModel init;
      init.kappa = random_mat(6, 1, 1.0, rng);
      init.theta = random_mat(3, 4, 1.0, rng);
      std::vector<GradMap> grads(kSteps);
      for (GradMap& g : grads) {
        g["kappa"] = random_mat(6, 1, 1.0, rng);
        g["theta"] = random_mat(3, 4, 1.0, rng);
      }
      auto run = [&](const GroupConfig& curv, const GroupConfig& cap, bool unified) {
        FakeModel m = init;
        auto views = m.views();
        ParamGroups groups = unified ? partition_unified(views, cap) : partition(views, curv, cap);
        for (const GradMap& g : grads) {
          step(groups, views, g);
        }
        return m;
      };
      const double eta_k = uniform(rng, 1e-3, 1e-1);
      const double eta_t = uniform(rng, 1e-4, 1e-2);
      const FakeModel both = run(adamw(eta_k, 0.0, kSteps), adamw(eta_t, 0.01, kSteps), false);
      const FakeModel only_k = run(adamw(eta_k, 0.0, kSteps), adamw(0.0, 0.01, kSteps), false);
      const FakeModel only_t = run(adamw(0.0, 0.0, kSteps), adamw(eta_t, 0.01, kSteps), false);
      s.expect(bit_equal(both.kappa, only_k.kappa) && bit_equal(both.theta, only_t.theta),
               "group updates interfere with each other");
      s.expect(bit_equal(only_k.theta, init.theta) && bit_equal(only_t.kappa, init.kappa),
               "zero learning rate still moved a group");
      s.expect(bit_equal(both.frozen_kappa, init.frozen_kappa), "frozen curvature was updated");

      const GroupConfig same = adamw(eta_t, 0.01, kSteps);
      const FakeModel separated = run(same, same, false);
      const FakeModel unified = run(same, same, true);
      s.expect(bit_equal(separated.kappa, unified.kappa) && bit_equal(separated.theta, unified.theta),
               "equal-rate separated optimizer differs from the unified one");
    }

    // Plain gradient rule with one scalar per group.
    {
      Mat k = Mat::Zero(1, 1);
      Mat t = Mat::Zero(1, 1);
      std::vector<ParamView> views{{"k", ParamRole::curvature, true, {k.data(), 1}},
                                   {"t", ParamRole::capacity, true, {t.data(), 1}}};
      GroupConfig curv;
      curv.rule = UpdateRule::sgd;
      curv.schedule = Schedule{0.1, 0.0, 1};
      GroupConfig cap = curv;
      cap.schedule.base_lr = 0.01;
      ParamGroups groups = partition(views, curv, cap);
      step(groups, views, GradMap{{"k", Mat::Ones(1, 1)}, {"t", Mat::Ones(1, 1)}});
      s.expect(std::abs(k(0, 0) + 0.1) <= 1e-15 && std::abs(t(0, 0) + 0.01) <= 1e-15, "sgd step is wrong");
    }

    // Hand-rolled adaptive-moment recursion on a 2-vector.
    {
      Mat w(2, 1);
      w << 0.5, -1.5;
      std::vector<ParamView> views{{"w", ParamRole::capacity, true, {w.data(), 2}}};
      GroupConfig cap;
      cap.schedule = Schedule{0.01, 0.0, 3};
      cap.weight_decay = 0.01;
      ParamGroups groups = partition(views, GroupConfig{}, cap);
      const double g[3][2] = {{0.3, -0.2}, {-0.1, 0.4}, {0.25, 0.05}};
      double ref[2] = {0.5, -1.5};
      double m[2] = {0.0, 0.0};
      double v[2] = {0.0, 0.0};
      for (int t = 0; t < 3; ++t) {
        Mat gm(2, 1);
        gm << g[t][0], g[t][1];
        step(groups, views, GradMap{{"w", gm}});
        const double lr = 0.01 * (3.0 - t) / 3.0;
        for (int i = 0; i < 2; ++i) {
          m[i] = 0.9 * m[i] + 0.1 * g[t][i];
          v[i] = 0.999 * v[i] + 0.001 * g[t][i] * g[t][i];
          const double mh = m[i] / (1.0 - std::pow(0.9, t + 1));
          const double vh = v[i] / (1.0 - std::pow(0.999, t + 1));
          ref[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ref[i]);
        }
      }
      const double err = std::max(std::abs(w(0, 0) - ref[0]), std::abs(w(1, 0) - ref[1]));
      s.expect(err <= 1e-14, "adaptive-moment update differs from the reference recursion", err);
    }

    // Rejection and partition rules.
    {
      FakeModel m;
      auto views = m.views();
      ParamGroups groups = partition(views, adamw(0.1, 0.0, 10), adamw(0.1, 0.0, 10));
      GradMap bad{{"kappa", Mat::Ones(6, 1)}, {"theta", Mat::Ones(3, 4)}};
      bad["theta"](1, 2) = std::numeric_limits<double>::quiet_NaN();
      bool rejected = false;
      try {
        step(groups, views, bad);
      } catch (const OptimizerError&) {
        rejected = true;
      }
      s.expect(rejected && m.kappa.isZero() && m.theta.isZero(), "non-finite gradient was not rejected cleanly");

      GradMap zero{{"kappa", Mat::Zero(6, 1)}, {"theta", Mat::Zero(3, 4)}};
      step(groups, views, zero);
      s.expect(m.kappa.isZero() && m.theta.isZero(), "zero gradient moved parameters");

      views.push_back(views.front());
      bool duplicate = false;
      try {
        partition(views, GroupConfig{}, GroupConfig{});
      } catch (const OptimizerError&) {
        duplicate = true;
      }
      s.expect(duplicate, "duplicate parameter accepted");
      views.pop_back();
      views.back().role.reset();
      bool untagged = false;
      try {
        partition(views, GroupConfig{}, GroupConfig{});
      } catch (const OptimizerError&) {
        untagged = true;
      }
      s.expect(untagged, "untagged parameter accepted");
    }
    {
      LayerConfig cfg;
      cfg.d_in = 6;
      cfg.d_out = 4;
      MoSLoRAParams layer = MoSLoRAParams::init(cfg, seed);
      auto views = layer.parameter_views("");
      const ParamGroups groups = partition(views, GroupConfig{}, GroupConfig{});
      s.expect(groups.curvature_scalars(views) == 6, "default layer should expose 6 learnable curvatures");
    }
  });
}

// ---------------------------------------------------------------------------

SuiteResult suite_layer(int trials, std::uint64_t seed) {
  return timed("layer", [&](SuiteResult& s) {
    Rng rng(seed);
    for (int trial = 0; trial < trials; ++trial) {
      LayerConfig cfg;
      cfg.d_in = uniform_int(rng, 3, 12);
      cfg.d_out = uniform_int(rng, 2, 10);
      cfg.rank = uniform_int(rng, 1, 4);
      const int tokens = uniform_int(rng, 2, 10);
      const Mat X = random_mat(cfg.d_in, tokens, 1.0, rng);
      const Mat W = random_mat(cfg.d_out, cfg.d_in, 1.0, rng);

      // B = 0 at initialization: the layer is exactly the frozen projection.
      MoSLoRAParams fresh = MoSLoRAParams::init(cfg, rng());
      const LayerOutput y0 = layer_forward(X, W, fresh);
      bool transparent = true;
      for (int t = 0; t < tokens; ++t) {
        const Vec x = X.col(t);
        const Vec ref = W * x;
        transparent = transparent && bit_equal(y0.output.col(t), ref);
      }
      s.expect(transparent, "zero-initialized layer is not the frozen projection");

      // Euclidean experts reduce to the plain low-rank update.
      LayerConfig flat_cfg = cfg;
      flat_cfg.group_sizes = {0, 0, cfg.n_experts};
      MoSLoRAParams flat = MoSLoRAParams::init(flat_cfg, rng());
      for (ExpertParams& e : flat.experts) {
        e.B = random_mat(cfg.d_out, cfg.rank, 1.0, rng);
      }
      double worst = 0.0;
      const LayerOutput yf = layer_forward(X, W, flat);
      for (int t = 0; t < tokens; ++t) {
        const Vec x = X.col(t);
        Vec ref = W * x;
        const auto& sel = yf.decision.indices[static_cast<std::size_t>(t)];
        for (std::size_t k = 0; k < sel.size(); ++k) {
          const ExpertParams& e = flat.experts[static_cast<std::size_t>(sel[k])];
          const Vec lora = e.B * (e.A * x);
          worst = std::max(worst, rel_inf(expert_forward(x, e, flat_cfg.scaling), lora));
          ref += yf.decision.gates[static_cast<std::size_t>(t)][k] * lora;
        }
        worst = std::max(worst, rel_inf(yf.output.col(t), ref));
      }
      s.expect(worst <= 1e-10, "euclidean experts differ from the low-rank update", worst);

      // Batched and one-token-at-a-time forwards agree bit for bit.
      MoSLoRAParams live = MoSLoRAParams::init(cfg, rng());
      for (ExpertParams& e : live.experts) {
        e.B = random_mat(cfg.d_out, cfg.rank, 0.5, rng);
      }
      const LayerOutput batched = layer_forward(X, W, live);
      bool same = true;
      for (int t = 0; t < tokens; ++t) {
        const LayerOutput single = layer_forward(X.col(t), W, live);
        same = same && bit_equal(single.output, batched.output.col(t));
      }
      s.expect(same, "batched forward differs from per-token forward");

      // The taped forward computes the same function.
      Tape tape;
      const LayerLeaves leaves = register_layer_leaves(tape, live, "");
      const TapedLayer taped = layer_forward_taped(tape, tape.constant(X), W, live, leaves);
      const double diff = (tape.value(taped.output) - batched.output).cwiseAbs().maxCoeff() /
                          std::max(1.0, batched.output.cwiseAbs().maxCoeff());
      s.expect(diff <= 1e-12, "taped forward differs from the plain forward", diff);
      s.expect(std::abs(tape.scalar(taped.aux_loss) - batched.aux_loss) <= 1e-15, "taped aux loss differs");

      // Routing shape: K distinct experts in descending order, gates sum to 1.
      bool routing_ok = true;
      for (int t = 0; t < tokens; ++t) {
        const auto& sel = batched.decision.indices[static_cast<std::size_t>(t)];
        const auto& gates = batched.decision.gates[static_cast<std::size_t>(t)];
        double sum = 0.0;
        for (std::size_t k = 0; k < sel.size(); ++k) {
          sum += gates[k];
          if (k > 0 && batched.decision.probabilities(sel[k], t) > batched.decision.probabilities(sel[k - 1], t)) {
            routing_ok = false;
          }
        }
        routing_ok = routing_ok && static_cast<int>(sel.size()) == cfg.top_k && std::abs(sum - 1.0) <= 1e-12;
      }
      s.expect(routing_ok, "routing decision malformed");
    }
  });
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"roundtrip", "constraints", "scaling",   "gradbounds",
                                              "gradcheck", "auxloss",     "optimizer", "layer"};
  return names;
}

VerifyReport verify(const VerifyOptions& options) {
  std::vector<std::string> selected = options.suites.empty() ? suite_names() : options.suites;
  for (std::string& name : selected) {
    if (name == "lemma1") {
      name = "scaling"; // historical name of the scale-invariance grid
    }
    if (std::find(suite_names().begin(), suite_names().end(), name) == suite_names().end()) {
      throw std::invalid_argument("unknown suite '" + name + "'");
    }
  }
  const bool full = options.full;
  const std::uint64_t seed = options.seed;
  const std::map<std::string, std::function<SuiteResult()>> runners{
      {"roundtrip", [&] { return suite_roundtrip(full ? 10000 : 600, full ? 256 : 64, seed); }},
      {"constraints", [&] { return suite_constraints(full ? 10000 : 600, full ? 256 : 64, seed); }},
      {"scaling", [&] { return suite_scaling(full ? 1000 : 100, seed); }},
      {"gradbounds", [&] { return suite_gradbounds(full ? 100000 : 5000, seed); }},
      {"gradcheck", [&] { return suite_gradcheck(full ? 100 : 5, seed); }},
      {"auxloss", [&] { return suite_auxloss(full ? 500 : 50, seed); }},
      {"optimizer", [&] { return suite_optimizer(full ? 50 : 5, seed); }},
      {"layer", [&] { return suite_layer(full ? 50 : 5, seed); }},
  };
  VerifyReport report;
  for (const std::string& name : suite_names()) {
    if (std::find(selected.begin(), selected.end(), name) != selected.end()) {
      report.suites.push_back(runners.at(name)());
    }
  }
  return report;
}

} // namespace mosgeom
