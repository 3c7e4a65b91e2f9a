// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace mosgeom {

long Schedule::warmup_steps() const noexcept {
  return static_cast<long>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

double Schedule::lr_at(long step) const noexcept {
  const long warmup = warmup_steps();
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const long remaining = total_steps - warmup;
  if (remaining <= 0) {
    return 0.0;
  }
  const double frac = static_cast<double>(total_steps - step) / static_cast<double>(remaining);
  return base_lr * std::max(0.0, frac);
}

OptimizerConfig OptimizerConfig::defaults(long total_steps, double capacity_lr, double curvature_lr_ratio) {
  OptimizerConfig cfg;
  cfg.capacity.schedule = Schedule{capacity_lr, 0.1, total_steps};
  cfg.capacity.weight_decay = 0.01;
  cfg.curvature.schedule = Schedule{capacity_lr * curvature_lr_ratio, 0.1, total_steps};
  cfg.curvature.weight_decay = 0.0;
  return cfg;
}

std::size_t ParamGroups::curvature_scalars(std::span<const ParamView> params) const {
  std::size_t n = 0;
  for (const ParamView& p : params) {
    if (std::find(curvature.members.begin(), curvature.members.end(), p.name) != curvature.members.end()) {
      n += p.values.size();
    }
  }
  return n;
}

namespace {

void check_unique(std::span<const ParamView> params) {
  std::set<std::string> seen;
  for (const ParamView& p : params) {
    if (!seen.insert(p.name).second) {
      throw OptimizerError("partition: parameter '" + p.name + "' is tagged more than once");
    }
  }
}

ParamState fresh_state(const ParamView& p) {
  return ParamState{std::vector<double>(p.values.size(), 0.0), std::vector<double>(p.values.size(), 0.0)};
}

void update_group(ParamGroup& group, const std::map<std::string, ParamView*>& by_name, const GradMap& grads,
                  double lr) {
  const GroupConfig& cfg = group.config;
  const double t = static_cast<double>(group.steps + 1);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (const std::string& name : group.members) {
    ParamView& p = *by_name.at(name);
    const Mat& g = grads.at(name);
    ParamState& st = group.state.at(name);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double w = p.values[i];
      const double gi = g.data()[i];
      double direction = gi;
      if (cfg.rule == UpdateRule::adamw) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * gi;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double m_hat = st.m[i] / bias1;
        const double v_hat = st.v[i] / bias2;
        direction = m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
      p.values[i] = w - lr * (direction + cfg.weight_decay * w);
    }
  }
  ++group.steps;
}

} // namespace

ParamGroups partition(std::span<const ParamView> params, const GroupConfig& curvature, const GroupConfig& capacity) {
  check_unique(params);
  ParamGroups groups;
  groups.curvature.label = "curvature";
  groups.curvature.config = curvature;
  groups.capacity.label = "capacity";
  groups.capacity.config = capacity;
  for (const ParamView& p : params) {
    if (!p.role) {
      throw OptimizerError("partition: parameter '" + p.name + "' has no role tag");
    }
    if (!p.trainable) {
      continue;
    }
    ParamGroup& target = *p.role == ParamRole::curvature ? groups.curvature : groups.capacity;
    target.members.push_back(p.name);
    target.state.emplace(p.name, fresh_state(p));
  }
  return groups;
}

ParamGroups partition_unified(std::span<const ParamView> params, const GroupConfig& config) {
  check_unique(params);
  ParamGroups groups;
  groups.curvature.label = "curvature";
  groups.curvature.config = config;
  groups.capacity.label = "unified";
  groups.capacity.config = config;
  for (const ParamView& p : params) {
    if (!p.role) {
      throw OptimizerError("partition: parameter '" + p.name + "' has no role tag");
    }
    if (!p.trainable) {
      continue;
    }
    groups.capacity.members.push_back(p.name);
    groups.capacity.state.emplace(p.name, fresh_state(p));
  }
  return groups;
}

StepReport step(ParamGroups& groups, std::span<ParamView> params, const GradMap& grads) {
  std::map<std::string, ParamView*> by_name;
  for (ParamView& p : params) {
    by_name[p.name] = &p;
  }
  std::vector<std::string> bad;
  for (const ParamGroup* group : {&groups.curvature, &groups.capacity}) {
    for (const std::string& name : group->members) {
      const auto pit = by_name.find(name);
      const auto git = grads.find(name);
      if (pit == by_name.end()) {
        throw OptimizerError("step: parameter '" + name + "' not supplied");
      }
      if (git == grads.end() || static_cast<std::size_t>(git->second.size()) != pit->second->values.size()) {
        throw OptimizerError("step: missing or mis-shaped gradient for '" + name + "'");
      }
      if (!git->second.allFinite()) {
        bad.push_back(name);
      }
    }
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "step rejected: non-finite gradient for";
    for (const auto& n : bad) {
      msg << " " << n;
    }
    throw OptimizerError(msg.str());
  }
  StepReport report;
  report.curvature_lr = groups.curvature.config.schedule.lr_at(groups.curvature.steps);
  report.capacity_lr = groups.capacity.config.schedule.lr_at(groups.capacity.steps);
  update_group(groups.curvature, by_name, grads, report.curvature_lr);
  update_group(groups.capacity, by_name, grads, report.capacity_lr);
  return report;
}

} // namespace mosgeom
