// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/layer.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

namespace mosgeom {

const char* group_name(GeometryGroup group) noexcept {
  switch (group) {
    case GeometryGroup::hyperbolic:
      return "hyperbolic";
    case GeometryGroup::spherical:
      return "spherical";
    case GeometryGroup::euclidean:
      return "euclidean";
  }
  return "unknown";
}

void LayerConfig::validate() const {
  if (d_in <= 0 || d_out <= 0 || rank <= 0) {
    throw LayerError("layer config: d_in, d_out and rank must be positive");
  }
  if (n_experts <= 0 || top_k <= 0 || top_k > n_experts) {
    throw LayerError("layer config: need 0 < top_k <= n_experts");
  }
  int total = 0;
  for (int s : group_sizes) {
    if (s < 0) {
      throw LayerError("layer config: negative group size");
    }
    total += s;
  }
  if (total != n_experts) {
    throw LayerError("layer config: group sizes must sum to n_experts");
  }
  if (!(aux_coefficient >= 0.0)) {
    throw LayerError("layer config: aux coefficient must be non-negative");
  }
  if (initial_curvature[0] >= 0.0 && group_sizes[0] > 0) {
    throw LayerError("layer config: hyperbolic experts need negative initial curvature");
  }
  if (initial_curvature[1] <= 0.0 && group_sizes[1] > 0) {
    throw LayerError("layer config: spherical experts need positive initial curvature");
  }
}

GeometryGroup LayerConfig::group_of(int expert) const {
  int start = 0;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    if (expert < start + group_sizes[g]) {
      return static_cast<GeometryGroup>(g);
    }
    start += group_sizes[g];
  }
  throw LayerError("group_of: expert index out of range", expert);
}

int LayerConfig::active_groups() const noexcept {
  return static_cast<int>(std::count_if(group_sizes.begin(), group_sizes.end(), [](int s) { return s > 0; }));
}

void populate_group_stats(RoutingDecision& decision, const LayerConfig& config) {
  const Mat& probs = decision.probabilities;
  const Eigen::Index tokens = probs.cols();
  decision.expert_token_counts.assign(static_cast<std::size_t>(config.n_experts), 0);
  for (const auto& selected : decision.indices) {
    for (int e : selected) {
      ++decision.expert_token_counts[static_cast<std::size_t>(e)];
    }
  }

  decision.group_stats.clear();
  int start = 0;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    GroupStats stats;
    stats.group = static_cast<GeometryGroup>(g);
    const int size = config.group_sizes[g];
    for (int e = start; e < start + size; ++e) {
      stats.experts.push_back(e);
      stats.slots += decision.expert_token_counts[static_cast<std::size_t>(e)];
    }
    stats.dispatch_fraction.assign(static_cast<std::size_t>(size), 0.0);
    stats.mean_probability.assign(static_cast<std::size_t>(size), 0.0);
    for (int k = 0; k < size; ++k) {
      if (stats.slots > 0) {
        stats.dispatch_fraction[static_cast<std::size_t>(k)] =
            static_cast<double>(decision.expert_token_counts[static_cast<std::size_t>(start + k)]) /
            static_cast<double>(stats.slots);
      }
    }
    if (size > 0 && tokens > 0) {
      for (Eigen::Index t = 0; t < tokens; ++t) {
        const double mass = probs.col(t).segment(start, size).sum();
        for (int k = 0; k < size; ++k) {
          const double q = mass > 0.0 ? probs(start + k, t) / mass : 1.0 / size;
          stats.mean_probability[static_cast<std::size_t>(k)] += q;
        }
      }
      for (double& p : stats.mean_probability) {
        p /= static_cast<double>(tokens);
      }
    }
    decision.group_stats.push_back(std::move(stats));
    start += size;
  }
}

RoutingDecision decide_routing(const Mat& probabilities, const LayerConfig& config) {
  if (probabilities.rows() != config.n_experts) {
    throw LayerError("decide_routing: probability rows must equal n_experts");
  }
  RoutingDecision decision;
  decision.probabilities = probabilities;
  const Eigen::Index tokens = probabilities.cols();
  decision.indices.resize(static_cast<std::size_t>(tokens));
  decision.gates.resize(static_cast<std::size_t>(tokens));
  std::vector<int> order(static_cast<std::size_t>(config.n_experts));
  for (Eigen::Index t = 0; t < tokens; ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probabilities(a, t) > probabilities(b, t); });
    auto& selected = decision.indices[static_cast<std::size_t>(t)];
    selected.assign(order.begin(), order.begin() + config.top_k);
    double mass = 0.0;
    for (int e : selected) {
      mass += probabilities(e, t);
    }
    auto& gates = decision.gates[static_cast<std::size_t>(t)];
    gates.clear();
    for (int e : selected) {
      gates.push_back(probabilities(e, t) / mass);
    }
  }
  populate_group_stats(decision, config);
  return decision;
}

RoutingDecision route(const Mat& tokens, const Mat& router_weights, const LayerConfig& config) {
  if (router_weights.rows() != config.n_experts || router_weights.cols() != tokens.rows()) {
    throw LayerError("route: router weights must be n_experts x d_in");
  }
  Mat probs(config.n_experts, tokens.cols());
  for (Eigen::Index t = 0; t < tokens.cols(); ++t) {
    const Vec x = tokens.col(t);
    const Vec logits = router_weights * x;
    if (!logits.allFinite()) {
      throw LayerError("route: non-finite router logits", -1, static_cast<long>(t));
    }
    const double shift = logits.maxCoeff();
    Vec p = (logits.array() - shift).exp().matrix();
    p /= p.sum();
    probs.col(t) = p;
  }
  return decide_routing(probs, config);
}

AuxLossBreakdown grouped_aux_loss_breakdown(const RoutingDecision& decision, const LayerConfig& config) {
  if (decision.group_stats.size() != kGroupCount) {
    throw LayerError("grouped_aux_loss: group statistics not populated");
  }
  AuxLossBreakdown out;
  double sum = 0.0;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const GroupStats& stats = decision.group_stats[g];
    const int size = config.group_sizes[g];
    if (size == 0) {
      continue;
    }
    double loss = 1.0;
    if (stats.slots == 0) {
      out.empty_group[g] = true;
    } else {
      double dot = 0.0;
      for (std::size_t k = 0; k < stats.experts.size(); ++k) {
        dot += stats.dispatch_fraction[k] * stats.mean_probability[k];
      }
      loss = static_cast<double>(size) * dot;
    }
    out.per_group[g] = loss;
    sum += loss;
  }
  out.total = sum / static_cast<double>(config.active_groups());
  return out;
}

double grouped_aux_loss(const RoutingDecision& decision, const LayerConfig& config) {
  return grouped_aux_loss_breakdown(decision, config).total;
}

Vec expert_forward(const Vec& token, const ExpertParams& expert, const ScalingConfig& scaling, GuardMode mode) {
  if (expert.A.cols() != token.size() || expert.B.cols() != expert.A.rows()) {
    throw LayerError("expert_forward: expert factor shapes do not match the token");
  }
  const double gamma = scaling.gamma;
  const Vec scaled = gamma * token;
  const AmbientPoint projected = inv_stereo(scaled, expert.curvature, mode);
  const Vec hidden = expert.A * projected.s;
  const Vec delta = expert.B * hidden;
  const AmbientPoint lifted = mos_lift(delta, expert.curvature, mode);
  return (1.0 / gamma) * stereo(lifted, expert.curvature);
}

LayerOutput layer_forward(const Mat& tokens, const Mat& frozen_W, const std::vector<ExpertParams>& experts,
                          const LayerConfig& config, const Mat& router_weights) {
  config.validate();
  if (static_cast<int>(experts.size()) != config.n_experts) {
    throw LayerError("layer_forward: expert count differs from config");
  }
  if (tokens.rows() != config.d_in || frozen_W.rows() != config.d_out || frozen_W.cols() != config.d_in) {
    throw LayerError("layer_forward: token or frozen weight shape mismatch");
  }
  LayerOutput out;
  out.decision = route(tokens, router_weights, config);
  out.output.resize(config.d_out, tokens.cols());
  for (Eigen::Index t = 0; t < tokens.cols(); ++t) {
    const Vec x = tokens.col(t);
    Vec y = frozen_W * x;
    const auto& selected = out.decision.indices[static_cast<std::size_t>(t)];
    const auto& gates = out.decision.gates[static_cast<std::size_t>(t)];
    std::vector<std::size_t> order(selected.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return selected[a] < selected[b]; });
    for (std::size_t k : order) {
      const int e = selected[k];
      try {
        y += gates[k] * expert_forward(x, experts[static_cast<std::size_t>(e)], config.scaling, config.guard);
      } catch (const GeometryError& err) {
        std::ostringstream msg;
        msg << "expert " << e << ", token " << t << ": " << err.what();
        throw LayerError(msg.str(), e, static_cast<long>(t));
      }
    }
    if (!y.allFinite()) {
      throw LayerError("layer_forward: non-finite output", -1, static_cast<long>(t));
    }
    out.output.col(t) = y;
  }
  out.aux_loss = grouped_aux_loss(out.decision, config);
  out.per_expert_token_counts = out.decision.expert_token_counts;
  return out;
}

LayerOutput layer_forward(const Mat& tokens, const Mat& frozen_W, const MoSLoRAParams& params) {
  return layer_forward(tokens, frozen_W, params.experts, params.config, params.router);
}

MoSLoRAParams MoSLoRAParams::init(const LayerConfig& config, std::uint64_t seed) {
  config.validate();
  MoSLoRAParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d_in));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  p.router = Mat::NullaryExpr(config.n_experts, config.d_in, [&]() { return uniform(rng); });
  for (int e = 0; e < config.n_experts; ++e) {
    ExpertParams expert;
    expert.group = config.group_of(e);
    const auto g = static_cast<std::size_t>(expert.group);
    expert.A = Mat::NullaryExpr(config.rank, config.d_in, [&]() { return uniform(rng); });
    expert.B = Mat::Zero(config.d_out, config.rank);
    const bool learnable = expert.group != GeometryGroup::euclidean;
    expert.curvature = Curvature(config.initial_curvature[g], learnable, config.epsilon_zero);
    p.experts.push_back(std::move(expert));
  }
  return p;
}

std::vector<double> MoSLoRAParams::curvatures() const {
  std::vector<double> out;
  out.reserve(experts.size());
  for (const auto& e : experts) {
    out.push_back(e.curvature.kappa);
  }
  return out;
}

std::vector<ParamView> MoSLoRAParams::parameter_views(const std::string& prefix) {
  std::vector<ParamView> views;
  views.push_back({prefix + "router", ParamRole::capacity, true, {router.data(), static_cast<std::size_t>(router.size())}});
  for (std::size_t e = 0; e < experts.size(); ++e) {
    ExpertParams& ex = experts[e];
    const std::string base = prefix + "expert" + std::to_string(e) + ".";
    views.push_back({base + "A", ParamRole::capacity, true, {ex.A.data(), static_cast<std::size_t>(ex.A.size())}});
    views.push_back({base + "B", ParamRole::capacity, true, {ex.B.data(), static_cast<std::size_t>(ex.B.size())}});
    views.push_back({base + "kappa", ParamRole::curvature, ex.curvature.learnable, {&ex.curvature.kappa, 1}});
  }
  return views;
}

LayerLeaves register_layer_leaves(Tape& tape, const MoSLoRAParams& params, const std::string& prefix) {
  LayerLeaves leaves;
  leaves.router = tape.leaf(prefix + "router", params.router);
  for (std::size_t e = 0; e < params.experts.size(); ++e) {
    const ExpertParams& ex = params.experts[e];
    const std::string base = prefix + "expert" + std::to_string(e) + ".";
    leaves.A.push_back(tape.leaf(base + "A", ex.A));
    leaves.B.push_back(tape.leaf(base + "B", ex.B));
    Mat k(1, 1);
    k(0, 0) = ex.curvature.kappa;
    leaves.kappa.push_back(ex.curvature.learnable ? tape.leaf(base + "kappa", k) : tape.constant(k));
  }
  return leaves;
}

Var taped_expert_forward(Tape& tape, Var tokens, Var A, Var B, Var kappa, const LayerConfig& config) {
  const double gamma = config.scaling.gamma;
  const double eps0 = config.epsilon_zero;
  const bool rescale = config.guard == GuardMode::rescale;
  Var x = tape.scale(tokens, gamma);
  if (rescale) {
    x = tape.radial_clamp(x, kappa, eps0, -1.0, limits::kSphericalMargin);
  }
  Var s = tape.inv_stereo_space(x, kappa, eps0, config.guard);
  Var delta = tape.matmul(B, tape.matmul(A, s));
  if (rescale) {
    delta = tape.radial_clamp(delta, kappa, eps0, 1.0, limits::kSphericalMargin);
  }
  Var time = tape.lift_time(delta, kappa, eps0, config.guard);
  Var y = tape.stereo(time, delta, kappa, eps0);
  return tape.scale(y, 1.0 / gamma);
}

Var taped_topk_gates(Tape& tape, Var probabilities, const RoutingDecision& decision) {
  const Mat& p = tape.value(probabilities);
  Mat gates = Mat::Zero(p.rows(), p.cols());
  for (std::size_t t = 0; t < decision.indices.size(); ++t) {
    const auto& sel = decision.indices[t];
    for (std::size_t k = 0; k < sel.size(); ++k) {
      gates(sel[k], static_cast<Eigen::Index>(t)) = decision.gates[t][k];
    }
  }
  std::vector<std::vector<int>> indices = decision.indices;
  return tape.record("topk_gates", {probabilities}, gates,
                     [&tape, probabilities, indices = std::move(indices), gates](const Mat& g) {
                       const Mat& pv = tape.value(probabilities);
                       Mat gp = Mat::Zero(pv.rows(), pv.cols());
                       for (std::size_t t = 0; t < indices.size(); ++t) {
                         const auto ti = static_cast<Eigen::Index>(t);
                         double mass = 0.0;
                         double inner = 0.0;
                         for (int e : indices[t]) {
                           mass += pv(e, ti);
                           inner += g(e, ti) * gates(e, ti);
                         }
                         for (int e : indices[t]) {
                           gp(e, ti) = (g(e, ti) - inner) / mass;
                         }
                       }
                       return std::vector<Mat>{std::move(gp)};
                     });
}

Var taped_grouped_aux_loss(Tape& tape, Var probabilities, const RoutingDecision& decision,
                           const LayerConfig& config) {
  Mat value(1, 1);
  value(0, 0) = grouped_aux_loss(decision, config);
  const double groups = static_cast<double>(config.active_groups());
  std::vector<GroupStats> stats = decision.group_stats;
  return tape.record("grouped_aux_loss", {probabilities}, value,
                     [&tape, probabilities, stats = std::move(stats), groups](const Mat& g) {
                       const Mat& p = tape.value(probabilities);
                       const double tokens = static_cast<double>(p.cols());
                       Mat gp = Mat::Zero(p.rows(), p.cols());
                       for (const GroupStats& gs : stats) {
                         if (gs.experts.empty() || gs.slots == 0) {
                           continue;
                         }
                         const int start = gs.experts.front();
                         const int size = static_cast<int>(gs.experts.size());
                         const double weight = g(0, 0) * size / (groups * tokens);
                         for (Eigen::Index t = 0; t < p.cols(); ++t) {
                           const double mass = p.col(t).segment(start, size).sum();
                           if (!(mass > 0.0)) {
                             continue;
                           }
                           double fq = 0.0;
                           for (int k = 0; k < size; ++k) {
                             fq += gs.dispatch_fraction[static_cast<std::size_t>(k)] * p(start + k, t) / mass;
                           }
                           for (int k = 0; k < size; ++k) {
                             gp(start + k, t) =
                                 weight * (gs.dispatch_fraction[static_cast<std::size_t>(k)] - fq) / mass;
                           }
                         }
                       }
                       return std::vector<Mat>{std::move(gp)};
                     });
}

TapedLayer layer_forward_taped(Tape& tape, Var tokens, const Mat& frozen_W, const MoSLoRAParams& params,
                               const LayerLeaves& leaves) {
  const LayerConfig& config = params.config;
  config.validate();
  const Mat& x = tape.value(tokens);
  if (x.rows() != config.d_in || frozen_W.rows() != config.d_out || frozen_W.cols() != config.d_in) {
    throw LayerError("layer_forward_taped: token or frozen weight shape mismatch");
  }
  const Eigen::Index count = x.cols();

  TapedLayer out;
  Var logits = tape.matmul(leaves.router, tokens);
  if (!tape.value(logits).allFinite()) {
    throw LayerError("layer_forward_taped: non-finite router logits");
  }
  out.probabilities = tape.softmax_cols(logits);
  out.decision = decide_routing(tape.value(out.probabilities), config);
  Var gates = taped_topk_gates(tape, out.probabilities, out.decision);

  Var y = tape.matmul(tape.constant(frozen_W), tokens);
  for (int e = 0; e < config.n_experts; ++e) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index t = 0; t < count; ++t) {
      const auto& sel = out.decision.indices[static_cast<std::size_t>(t)];
      if (std::find(sel.begin(), sel.end(), e) != sel.end()) {
        cols.push_back(t);
      }
    }
    if (cols.empty()) {
      continue;
    }
    const auto ei = static_cast<std::size_t>(e);
    Var routed = tape.gather_cols(tokens, cols);
    Var expert_out;
    try {
      expert_out = taped_expert_forward(tape, routed, leaves.A[ei], leaves.B[ei], leaves.kappa[ei], config);
    } catch (const GeometryError& err) {
      throw LayerError(std::string("expert ") + std::to_string(e) + ": " + err.what(), e);
    }
    Mat selector = Mat::Zero(1, config.n_experts);
    selector(0, e) = 1.0;
    Var gate_row = tape.gather_cols(tape.matmul(tape.constant(selector), gates), cols);
    Var weighted = tape.mul_row(expert_out, gate_row);
    y = tape.add(y, tape.scatter_cols(weighted, std::move(cols), count));
  }
  out.output = y;
  out.aux_loss = taped_grouped_aux_loss(tape, out.probabilities, out.decision, config);
  return out;
}

} // namespace mosgeom
