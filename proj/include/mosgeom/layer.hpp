// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/geometry.hpp"
#include "mosgeom/params.hpp"
#include "mosgeom/tape.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosgeom {

enum class GeometryGroup : std::uint8_t { hyperbolic = 0, spherical = 1, euclidean = 2 };
inline constexpr std::size_t kGroupCount = 3;

const char* group_name(GeometryGroup group) noexcept;

class LayerError : public std::runtime_error {
 public:
  LayerError(const std::string& what, int expert = -1, long token = -1)
      : std::runtime_error(what), expert_(expert), token_(token) {}
  int expert() const noexcept { return expert_; }
  long token() const noexcept { return token_; }

 private:
  int expert_;
  long token_;
};

/// One low-rank expert living in its own curvature space.
struct ExpertParams {
  Mat A; // rank x d_in
  Mat B; // d_out x rank
  Curvature curvature;
  /// Balancing group; fixed at initialization even if the curvature later
  /// changes sign.
  GeometryGroup group = GeometryGroup::euclidean;
};

struct LayerConfig {
  int d_in = 0;
  int d_out = 0;
  int rank = 8;
  int n_experts = 8;
  int top_k = 4;
  /// Experts are laid out group by group: hyperbolic, spherical, euclidean.
  std::array<int, kGroupCount> group_sizes{3, 3, 2};
  std::array<double, kGroupCount> initial_curvature{-1.0, 1.0, 0.0};
  double aux_coefficient = 0.01;
  ScalingConfig scaling{};
  GuardMode guard = GuardMode::verify;
  double epsilon_zero = limits::kEpsilonZero;

  void validate() const;
  GeometryGroup group_of(int expert) const;
  /// Number of groups with at least one expert.
  int active_groups() const noexcept;
};

struct GroupStats {
  GeometryGroup group = GeometryGroup::euclidean;
  std::vector<int> experts;
  /// Share of the group's dispatched token slots sent to each expert.
  std::vector<double> dispatch_fraction;
  /// Mean over tokens of the within-group renormalized router probability.
  std::vector<double> mean_probability;
  int slots = 0;
};

struct RoutingDecision {
  /// Per token, the selected experts in descending probability order.
  std::vector<std::vector<int>> indices;
  /// Renormalized gates aligned with `indices`.
  std::vector<std::vector<double>> gates;
  /// Full softmax probabilities, n_experts x tokens.
  Mat probabilities;
  std::vector<GroupStats> group_stats;
  std::vector<int> expert_token_counts;
};

struct AuxLossBreakdown {
  double total = 0.0;
  std::array<double, kGroupCount> per_group{};
  /// Groups that received no token slots; they contribute their minimum 1.
  std::array<bool, kGroupCount> empty_group{};
};

struct LayerOutput {
  Mat output; // d_out x tokens
  double aux_loss = 0.0;
  std::vector<int> per_expert_token_counts;
  RoutingDecision decision;
};

/// Top-K selection and gate renormalization from full probabilities.
/// Ties go to the lowest expert index.
RoutingDecision decide_routing(const Mat& probabilities, const LayerConfig& config);

/// Recomputes group_stats and expert_token_counts from indices/probabilities.
void populate_group_stats(RoutingDecision& decision, const LayerConfig& config);

/// Softmax router over tokens (columns); router_weights is n_experts x d_in.
RoutingDecision route(const Mat& tokens, const Mat& router_weights, const LayerConfig& config);

/// L_g = N_g * sum_i f_i P_i per group, averaged over groups.
AuxLossBreakdown grouped_aux_loss_breakdown(const RoutingDecision& decision, const LayerConfig& config);
double grouped_aux_loss(const RoutingDecision& decision, const LayerConfig& config);

/// x -> gamma x -> inv_stereo -> B A s -> mos_lift -> stereo -> / gamma.
Vec expert_forward(const Vec& token, const ExpertParams& expert, const ScalingConfig& scaling,
                   GuardMode mode = GuardMode::verify);

LayerOutput layer_forward(const Mat& tokens, const Mat& frozen_W, const std::vector<ExpertParams>& experts,
                          const LayerConfig& config, const Mat& router_weights);

/// Trainable state of one adapted layer.
struct MoSLoRAParams {
  LayerConfig config;
  std::vector<ExpertParams> experts;
  Mat router; // n_experts x d_in

  /// A uniform in +-1/sqrt(d_in), B zero, router uniform in +-1/sqrt(d_in),
  /// curvature from the group's initial value. Euclidean curvature is frozen.
  static MoSLoRAParams init(const LayerConfig& config, std::uint64_t seed);

  std::vector<double> curvatures() const;
  /// Views in a fixed order: router, then per expert A, B, kappa.
  std::vector<ParamView> parameter_views(const std::string& prefix);
};

LayerOutput layer_forward(const Mat& tokens, const Mat& frozen_W, const MoSLoRAParams& params);

/// Leaves registered for one layer on a tape.
struct LayerLeaves {
  Var router;
  std::vector<Var> A;
  std::vector<Var> B;
  /// Curvature as a 1x1 value; constants for non-learnable experts.
  std::vector<Var> kappa;
};

LayerLeaves register_layer_leaves(Tape& tape, const MoSLoRAParams& params, const std::string& prefix);

struct TapedLayer {
  Var output;   // d_out x tokens, frozen path included
  Var aux_loss; // 1x1
  Var probabilities;
  RoutingDecision decision;
};

TapedLayer layer_forward_taped(Tape& tape, Var tokens, const Mat& frozen_W, const MoSLoRAParams& params,
                               const LayerLeaves& leaves);

/// Dense n_experts x tokens gate matrix on the tape (zero for unselected).
Var taped_topk_gates(Tape& tape, Var probabilities, const RoutingDecision& decision);

/// Grouped auxiliary loss as a tape node; gradient flows through the
/// within-group probabilities, dispatch fractions are treated as constants.
Var taped_grouped_aux_loss(Tape& tape, Var probabilities, const RoutingDecision& decision,
                           const LayerConfig& config);

/// Expert pipeline on a block of token columns.
Var taped_expert_forward(Tape& tape, Var tokens, Var A, Var B, Var kappa, const LayerConfig& config);

} // namespace mosgeom
