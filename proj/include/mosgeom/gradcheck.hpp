// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/tape.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mosgeom {

using ParamSet = std::map<std::string, Mat>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, Eigen::Index>> failing_coordinates;
  /// Coordinates whose perturbation left the geometric domain.
  std::vector<std::pair<std::string, Eigen::Index>> skipped_coordinates;
  std::size_t checked = 0;

  bool passed() const noexcept { return failing_coordinates.empty(); }
};

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error; below it the error is absolute.
  double abs_floor = 1e-6;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double gradient_relative_error(double analytic, double numeric, double floor);

/// Compares `analytic` against central differences (f(p+h) - f(p-h)) / 2h,
/// one coordinate at a time. Coordinates whose perturbed evaluation throws a
/// GeometryError are skipped and listed, never clamped.
GradCheckReport finite_diff_check(const std::function<double(const ParamSet&)>& f,
                                  const ParamSet& params, const GradMap& analytic,
                                  const GradCheckOptions& options = {});

} // namespace mosgeom
