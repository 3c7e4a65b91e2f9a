// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/geometry.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosgeom {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;

  bool valid() const noexcept { return id != npos; }
};

/// Gradients of a scalar objective, keyed by leaf name.
using GradMap = std::map<std::string, Mat>;

class GradError : public std::runtime_error {
 public:
  GradError(const std::string& what, std::size_t node = Var::npos)
      : std::runtime_error(what), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// Reverse-mode tape over the fixed operation set used by the MoSLoRA layer.
///
/// Every value is a dense matrix. Geometry kernels treat each column as one
/// point and take the curvature as a 1x1 value so that d/dkappa flows like any
/// other gradient. Nodes are appended in evaluation order, so the recorded
/// list is already topologically sorted. A tape supports exactly one backward
/// pass; build a new tape for the next step.
class Tape {
 public:
  /// Vector-Jacobian product of a node: given dL/d(output), return one
  /// contribution per input in input order. An empty matrix means "no
  /// contribution".
  using Vjp = std::function<std::vector<Mat>(const Mat& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const std::string& name, Mat value);
  Var constant(Mat value);
  /// Appends a node with a caller-supplied local derivative.
  Var record(std::string op, std::vector<Var> inputs, Mat value, Vjp vjp);

  const Mat& value(Var v) const;
  double scalar(Var v) const;
  const std::string& op(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var hadamard(Var a, Var b);
  Var divide(Var a, Var b);
  Var sqrt(Var a);
  Var tanh(Var a);
  /// Row vector of squared column norms.
  Var col_sq_norms(Var a);
  Var sum(Var a);
  /// sum(weights .* a) as a 1x1 value.
  Var weighted_sum(Var a, const Mat& weights);
  /// m + col broadcast over columns.
  Var add_col(Var m, Var col);
  /// m .* row broadcast over rows.
  Var mul_row(Var m, Var row);
  Var softmax_cols(Var a);
  Var gather_cols(Var a, std::vector<Eigen::Index> cols);
  Var scatter_cols(Var a, std::vector<Eigen::Index> cols, Eigen::Index total_cols);
  /// Mean softmax cross-entropy over columns.
  Var cross_entropy(Var logits, std::span<const int> labels);

  /// Space-like part of the inverse stereographic projection, columnwise.
  Var inv_stereo_space(Var x, Var kappa, double epsilon_zero, GuardMode mode);
  /// Lifting coordinate sqrt(sgn(-kappa)||s||^2 + phi(kappa)) per column.
  Var lift_time(Var s, Var kappa, double epsilon_zero, GuardMode mode);
  /// s / (1 + sqrt|kappa| * time), columnwise.
  Var stereo(Var time, Var s, Var kappa, double epsilon_zero);
  /// Pulls columns with ||x|| > (1 - margin)/sqrt|kappa| back onto that
  /// radius. Only active when the effective curvature has sign `active_sign`.
  Var radial_clamp(Var x, Var kappa, double epsilon_zero, double active_sign, double margin);

  /// Propagates `seed` = dL/d(output) back to every leaf.
  GradMap backward(Var output, const Mat& seed);
  /// Same as above for a 1x1 output with seed 1.
  GradMap backward(Var output);

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Mat value;
    Vjp vjp;
    std::string leaf_name;
  };

  const Node& node(Var v) const;
  Var push(std::string op, std::vector<Var> inputs, Mat value, Vjp vjp);

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> leaves_;
  bool backward_done_ = false;
};

} // namespace mosgeom
