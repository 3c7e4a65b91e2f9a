// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/params.hpp"
#include "mosgeom/tape.hpp"

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosgeom {

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class UpdateRule { adamw, sgd };

/// Linear warmup from 0 followed by linear decay to 0.
struct Schedule {
  double base_lr = 3e-4;
  double warmup_ratio = 0.1;
  long total_steps = 1;

  long warmup_steps() const noexcept;
  double lr_at(long step) const noexcept;
};

struct GroupConfig {
  UpdateRule rule = UpdateRule::adamw;
  Schedule schedule{};
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Defaults: capacity AdamW at 3e-4 with weight decay 0.01; curvature AdamW at
/// `curvature_lr_ratio` times that rate with no weight decay. Warmup 0.1.
struct OptimizerConfig {
  GroupConfig curvature;
  GroupConfig capacity;

  static OptimizerConfig defaults(long total_steps, double capacity_lr = 3e-4, double curvature_lr_ratio = 10.0);
};

struct ParamState {
  std::vector<double> m;
  std::vector<double> v;
};

struct ParamGroup {
  std::string label;
  GroupConfig config;
  std::vector<std::string> members;
  std::map<std::string, ParamState> state;
  long steps = 0;
};

/// Disjoint split of the trainable parameters into curvature and capacity.
struct ParamGroups {
  ParamGroup curvature;
  ParamGroup capacity;

  std::size_t curvature_scalars(std::span<const ParamView> params) const;
};

/// Splits trainable handles by role. Frozen handles land in neither group.
/// Throws on an untagged handle or a name that appears twice.
ParamGroups partition(std::span<const ParamView> params, const GroupConfig& curvature, const GroupConfig& capacity);

/// Single-optimizer baseline: every trainable handle in one group (stored in
/// the capacity slot); the curvature group stays empty.
ParamGroups partition_unified(std::span<const ParamView> params, const GroupConfig& config);

struct StepReport {
  double curvature_lr = 0.0;
  double capacity_lr = 0.0;
};

/// Updates each parameter with its own group's rule and learning rate.
/// All gradients are validated before anything changes; a missing or
/// non-finite gradient rejects the whole step.
StepReport step(ParamGroups& groups, std::span<ParamView> params, const GradMap& grads);

} // namespace mosgeom
