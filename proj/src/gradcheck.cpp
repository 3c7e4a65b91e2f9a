// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mosgeom {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<double(const ParamSet&)>& f,
                                  const ParamSet& params, const GradMap& analytic,
                                  const GradCheckOptions& options) {
  if (!(options.h > 0.0)) {
    throw GradError("finite_diff_check: step h must be positive");
  }
  GradCheckReport report;
  ParamSet probe = params;
  for (const auto& [name, base] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) {
      throw GradError("finite_diff_check: no analytic gradient for '" + name + "'");
    }
    const Mat& grad = it->second;
    if (grad.rows() != base.rows() || grad.cols() != base.cols()) {
      throw GradError("finite_diff_check: gradient shape mismatch for '" + name + "'");
    }
    Mat& slot = probe.at(name);
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      const double original = base.data()[i];
      double plus = 0.0;
      double minus = 0.0;
      try {
        slot.data()[i] = original + options.h;
        plus = f(probe);
        slot.data()[i] = original - options.h;
        minus = f(probe);
      } catch (const GeometryError&) {
        slot.data()[i] = original;
        report.skipped_coordinates.emplace_back(name, i);
        continue;
      }
      slot.data()[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.h);
      const double err = gradient_relative_error(grad.data()[i], numeric, options.abs_floor);
      ++report.checked;
      if (!(err <= options.tolerance)) {
        report.failing_coordinates.emplace_back(name, i);
      }
      if (!(err <= report.max_relative_error)) {
        report.max_relative_error = std::isnan(err) ? INFINITY : err;
      }
    }
  }
  return report;
}

} // namespace mosgeom
