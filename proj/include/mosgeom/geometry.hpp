// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace mosgeom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Numerical constants shared by every kernel. They are fixed for a run.
namespace limits {
inline constexpr double kEpsilonZero = 1e-6;     // |kappa| below this is flat
inline constexpr double kSphericalMargin = 0.05; // ||s|| <= (1 - margin) / sqrt(kappa)
inline constexpr double kPoleGuard = 1e-6;       // |1 + kappa ||x||^2|, |1 + sqrt|kappa| xi|
inline constexpr double kSeriesThreshold = 1e-6; // sinh(z)/z and z/sinh(z) switch to series
inline constexpr double kTangentTolerance = 1e-8;
inline constexpr double kAcoshTolerance = 1e-10;
} // namespace limits

/// How domain guards react to an input outside the safe region.
///
/// `verify` reports the violation as a GeometryError. `rescale` pulls the
/// offending vector radially back inside the margin, which is what the
/// training path wants.
enum class GuardMode { verify, rescale };

class GeometryError : public std::runtime_error {
 public:
  enum class Kind {
    dimension_mismatch,
    spherical_domain,
    pole,
    not_tangent,
    unsupported_curvature,
    acosh_domain,
    invalid_argument,
  };

  GeometryError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Signed curvature of a constant-curvature space.
///
/// Inside the dead band |kappa| < epsilon_zero the space is treated as exactly
/// Euclidean, so a learnable curvature can cross zero without 1/|kappa|
/// blowing up.
struct Curvature {
  double kappa = 0.0;
  bool learnable = true;
  double epsilon_zero = limits::kEpsilonZero;

  Curvature() = default;
  Curvature(double k, bool is_learnable = true, double eps0 = limits::kEpsilonZero);

  bool flat() const noexcept { return !(std::abs(kappa) >= epsilon_zero); }
  /// -1 for kappa < 0, +1 otherwise.
  double sgn() const noexcept { return kappa < 0.0 ? -1.0 : 1.0; }
  /// sgn(-kappa) evaluated on the effective curvature (0 inside the dead band).
  double lift_sign() const noexcept { return (!flat() && kappa > 0.0) ? -1.0 : 1.0; }
  /// 1/|kappa|, or 0 inside the dead band.
  double phi() const noexcept { return flat() ? 0.0 : 1.0 / std::abs(kappa); }
  /// sqrt(|kappa|), or 0 inside the dead band.
  double sqrt_abs() const noexcept { return flat() ? 0.0 : std::sqrt(std::abs(kappa)); }

  Curvature with_kappa(double k) const { return Curvature(k, learnable, epsilon_zero); }
};

/// (n+1)-vector split into a time-like coordinate and a space-like part.
struct AmbientPoint {
  double xi = 0.0;
  Vec s;

  AmbientPoint() = default;
  AmbientPoint(double time, Vec space) : xi(time), s(std::move(space)) {}

  Eigen::Index space_dim() const noexcept { return s.size(); }
  /// Stacked (xi; s) representation.
  Vec stacked() const;
  static AmbientPoint from_stacked(const Vec& v);
};

/// Tangent vector at `base`, stored in the same time/space split.
struct TangentVector {
  double time = 0.0;
  Vec space;
  AmbientPoint base;

  AmbientPoint components() const { return {time, space}; }
};

struct ScalingConfig {
  double gamma = 1e-3;

  ScalingConfig() = default;
  explicit ScalingConfig(double g);
};

double lorentz_inner(const AmbientPoint& x, const AmbientPoint& y);
double euclid_inner(const AmbientPoint& x, const AmbientPoint& y);

/// Radius bound (1 - margin)/sqrt(kappa) used for spherical inputs.
double spherical_radius(const Curvature& kappa, double margin = limits::kSphericalMargin);

/// Radicand sgn(-kappa) * sq_norm + phi(kappa) of the lifting coordinate.
/// Every lift in the library goes through this one function.
double lift_radicand(double sq_norm, const Curvature& kappa) noexcept;

/// Appends the unified time-like coordinate
///   xi' = sqrt(||s||^2 sgn(-kappa) + phi(kappa))
/// placing s on the curvature-kappa manifold (or its flat extension).
AmbientPoint mos_lift(const Vec& s, const Curvature& kappa, GuardMode mode = GuardMode::verify);

/// Inverse stereographic projection. The flat branch returns (||x||; x).
AmbientPoint inv_stereo(const Vec& x, const Curvature& kappa, GuardMode mode = GuardMode::verify);

/// Stereographic projection s'/(1 + sqrt|kappa| xi'); identity on s' when flat.
Vec stereo(const AmbientPoint& p, const Curvature& kappa);

/// Hyperboloid exponential map at x. Only kappa < 0 is supported.
AmbientPoint exp_map(const AmbientPoint& x, const TangentVector& u, const Curvature& kappa);

/// Hyperboloid logarithmic map at x. Only kappa < 0 is supported.
TangentVector log_map(const AmbientPoint& x, const AmbientPoint& y, const Curvature& kappa);

/// F_kappa(x) = stereo(mos_lift(W * space(inv_stereo(x)))).
Vec mos_transform(const Vec& x, const Mat& W, const Curvature& kappa,
                  GuardMode mode = GuardMode::verify);

/// (1/gamma) * F_kappa(gamma * x), which equals F_{kappa gamma^2}(x).
Vec scaled_pipeline(const Vec& x, const Mat& W, const Curvature& kappa, const ScalingConfig& scaling,
                    GuardMode mode = GuardMode::verify);

/// ||grad_u a_kappa(u)|| = ||u|| / sqrt(sgn(-kappa) ||u||^2 + phi(kappa)).
double lift_gradient_norm(const Vec& u, const Curvature& kappa);

/// Gradient of the lifting coordinate with respect to u.
Vec lift_gradient(const Vec& u, const Curvature& kappa);

/// Upper bound R / sqrt(1/|kappa| - R^2) on the spherical lift gradient.
double spherical_gradient_bound(const Curvature& kappa, double radius);

} // namespace mosgeom
