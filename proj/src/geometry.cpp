// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/geometry.hpp"

#include <sstream>

namespace mosgeom {

namespace {

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* op) {
  if (a != b) {
    std::ostringstream msg;
    msg << op << ": dimension mismatch (" << a << " vs " << b << ")";
    throw GeometryError(GeometryError::Kind::dimension_mismatch, msg.str());
  }
}

void require_hyperbolic(const Curvature& kappa, const char* op) {
  if (!(kappa.kappa < 0.0) || kappa.flat()) {
    throw GeometryError(GeometryError::Kind::unsupported_curvature,
                        std::string(op) + ": only negative curvature is supported");
  }
}

// sinh(z)/z with the removable singularity at 0 handled by its series.
double sinhc(double z) {
  if (std::abs(z) < limits::kSeriesThreshold) {
    return 1.0 + z * z / 6.0;
  }
  return std::sinh(z) / z;
}

// z/sinh(z), same treatment.
double inv_sinhc(double z) {
  if (std::abs(z) < limits::kSeriesThreshold) {
    return 1.0 - z * z / 6.0;
  }
  return z / std::sinh(z);
}

} // namespace

Curvature::Curvature(double k, bool is_learnable, double eps0)
    : kappa(k), learnable(is_learnable), epsilon_zero(eps0) {
  if (!(eps0 > 0.0)) {
    throw GeometryError(GeometryError::Kind::invalid_argument, "epsilon_zero must be positive");
  }
  if (!std::isfinite(k)) {
    throw GeometryError(GeometryError::Kind::invalid_argument, "curvature must be finite");
  }
}

Vec AmbientPoint::stacked() const {
  Vec out(s.size() + 1);
  out(0) = xi;
  out.tail(s.size()) = s;
  return out;
}

AmbientPoint AmbientPoint::from_stacked(const Vec& v) {
  if (v.size() < 1) {
    throw GeometryError(GeometryError::Kind::dimension_mismatch, "ambient point needs at least one coordinate");
  }
  return {v(0), v.tail(v.size() - 1)};
}

ScalingConfig::ScalingConfig(double g) : gamma(g) {
  if (!(g > 0.0) || !std::isfinite(g)) {
    throw GeometryError(GeometryError::Kind::invalid_argument, "scaling gamma must be positive");
  }
}

double lorentz_inner(const AmbientPoint& x, const AmbientPoint& y) {
  require_same_dim(x.s.size(), y.s.size(), "lorentz_inner");
  return -x.xi * y.xi + x.s.dot(y.s);
}

double euclid_inner(const AmbientPoint& x, const AmbientPoint& y) {
  require_same_dim(x.s.size(), y.s.size(), "euclid_inner");
  return x.xi * y.xi + x.s.dot(y.s);
}

double spherical_radius(const Curvature& kappa, double margin) {
  return (1.0 - margin) / std::sqrt(std::abs(kappa.kappa));
}

double lift_radicand(double sq_norm, const Curvature& kappa) noexcept {
#ifdef MOSGEOM_FAULT_FLIP_LIFT_SIGN
  return -kappa.lift_sign() * sq_norm + kappa.phi();
#else
  return kappa.lift_sign() * sq_norm + kappa.phi();
#endif
}

AmbientPoint mos_lift(const Vec& s, const Curvature& kappa, GuardMode mode) {
  Vec space = s;
  double sq = space.squaredNorm();
  if (!kappa.flat() && kappa.kappa > 0.0) {
    if (mode == GuardMode::rescale) {
      const double radius = spherical_radius(kappa);
      if (sq > radius * radius) {
        space *= radius / std::sqrt(sq);
        sq = space.squaredNorm();
      }
    } else if (sq > kappa.phi()) {
      std::ostringstream msg;
      msg << "mos_lift: ||s||^2 = " << sq << " exceeds 1/kappa = " << kappa.phi();
      throw GeometryError(GeometryError::Kind::spherical_domain, msg.str());
    }
  }
  const double radicand = lift_radicand(sq, kappa);
  if (radicand < 0.0 && mode == GuardMode::verify) {
    std::ostringstream msg;
    msg << "mos_lift: negative radicand " << radicand;
    throw GeometryError(GeometryError::Kind::spherical_domain, msg.str());
  }
  return {std::sqrt(std::max(radicand, 0.0)), std::move(space)};
}

AmbientPoint inv_stereo(const Vec& x, const Curvature& kappa, GuardMode mode) {
  if (kappa.flat()) {
    return {x.norm(), x};
  }
  Vec point = x;
  double sq = point.squaredNorm();
  if (mode == GuardMode::rescale && kappa.kappa < 0.0) {
    const double radius = spherical_radius(kappa);
    if (sq > radius * radius) {
      point *= radius / std::sqrt(sq);
      sq = point.squaredNorm();
    }
  }
  const double denom = 1.0 + kappa.kappa * sq;
  if (std::abs(denom) < limits::kPoleGuard) {
    std::ostringstream msg;
    msg << "inv_stereo: input at the stereographic pole (1 + kappa ||x||^2 = " << denom << ")";
    throw GeometryError(GeometryError::Kind::pole, msg.str());
  }
  const double xi = (1.0 - kappa.kappa * sq) / denom / kappa.sqrt_abs();
  return {xi, (2.0 / denom) * point};
}

Vec stereo(const AmbientPoint& p, const Curvature& kappa) {
  if (kappa.flat()) {
    return p.s;
  }
  const double denom = 1.0 + kappa.sqrt_abs() * p.xi;
  if (std::abs(denom) < limits::kPoleGuard) {
    std::ostringstream msg;
    msg << "stereo: point at the projection pole (1 + sqrt|kappa| xi = " << denom << ")";
    throw GeometryError(GeometryError::Kind::pole, msg.str());
  }
  return p.s / denom;
}

AmbientPoint exp_map(const AmbientPoint& x, const TangentVector& u, const Curvature& kappa) {
  require_hyperbolic(kappa, "exp_map");
  require_same_dim(x.s.size(), u.space.size(), "exp_map");
  const AmbientPoint v = u.components();
  const double tangency = lorentz_inner(x, v);
  const double scale = std::max(1.0, std::sqrt(std::abs(euclid_inner(x, x)) * std::abs(euclid_inner(v, v))));
  if (std::abs(tangency) > limits::kTangentTolerance * scale) {
    std::ostringstream msg;
    msg << "exp_map: vector is not tangent at the base point (<x,u>_L = " << tangency << ")";
    throw GeometryError(GeometryError::Kind::not_tangent, msg.str());
  }
  const double norm = std::sqrt(std::max(lorentz_inner(v, v), 0.0));
  const double z = kappa.sqrt_abs() * norm;
  const double c = std::cosh(z);
  const double k = sinhc(z);
  return {c * x.xi + k * v.xi, c * x.s + k * v.s};
}

TangentVector log_map(const AmbientPoint& x, const AmbientPoint& y, const Curvature& kappa) {
  require_hyperbolic(kappa, "log_map");
  require_same_dim(x.s.size(), y.s.size(), "log_map");
  double alpha = kappa.kappa * lorentz_inner(x, y);
  if (alpha < 1.0) {
    if (alpha < 1.0 - limits::kAcoshTolerance * std::max(1.0, std::abs(alpha))) {
      std::ostringstream msg;
      msg << "log_map: acosh argument " << alpha << " < 1";
      throw GeometryError(GeometryError::Kind::acosh_domain, msg.str());
    }
    alpha = 1.0;
  }
  const double theta = std::acosh(alpha);
  const double coef = inv_sinhc(theta);
  TangentVector out;
  out.time = coef * (y.xi - alpha * x.xi);
  out.space = coef * (y.s - alpha * x.s);
  out.base = x;
  return out;
}

Vec mos_transform(const Vec& x, const Mat& W, const Curvature& kappa, GuardMode mode) {
  require_same_dim(W.cols(), x.size(), "mos_transform");
  const AmbientPoint projected = inv_stereo(x, kappa, mode);
  const AmbientPoint lifted = mos_lift(W * projected.s, kappa, mode);
  return stereo(lifted, kappa);
}

Vec scaled_pipeline(const Vec& x, const Mat& W, const Curvature& kappa, const ScalingConfig& scaling,
                    GuardMode mode) {
  const double gamma = scaling.gamma;
  return (1.0 / gamma) * mos_transform(gamma * x, W, kappa, mode);
}

double lift_gradient_norm(const Vec& u, const Curvature& kappa) {
  const double sq = u.squaredNorm();
  if (!kappa.flat() && kappa.kappa > 0.0 && !(sq < kappa.phi())) {
    throw GeometryError(GeometryError::Kind::spherical_domain,
                        "lift_gradient_norm: ||u||^2 must be below 1/kappa");
  }
  if (sq == 0.0) {
    return 0.0;
  }
  return std::sqrt(sq) / std::sqrt(lift_radicand(sq, kappa));
}

Vec lift_gradient(const Vec& u, const Curvature& kappa) {
  const double sq = u.squaredNorm();
  if (!kappa.flat() && kappa.kappa > 0.0 && !(sq < kappa.phi())) {
    throw GeometryError(GeometryError::Kind::spherical_domain,
                        "lift_gradient: ||u||^2 must be below 1/kappa");
  }
  if (sq == 0.0) {
    return Vec::Zero(u.size());
  }
  return (kappa.lift_sign() / std::sqrt(lift_radicand(sq, kappa))) * u;
}

double spherical_gradient_bound(const Curvature& kappa, double radius) {
  return radius / std::sqrt(1.0 / std::abs(kappa.kappa) - radius * radius);
}

} // namespace mosgeom
