// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/checkpoint.hpp"
#include "mosgeom/layer.hpp"
#include "mosgeom/optimizer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosgeom {

class TaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { hierarchy, cycle, mixed };

const char* task_name(TaskKind kind) noexcept;

/// Labelled point clouds with known geometric structure. Features are
/// columns; the split is by generation order, so train and test never share
/// a sample.
struct SyntheticTask {
  TaskKind kind = TaskKind::hierarchy;
  Mat train_x;
  std::vector<int> train_y;
  Mat test_x;
  std::vector<int> test_y;
  int n_classes = 0;

  // generative parameters (0 when not applicable)
  int branching = 0;
  int depth = 0;
  int modulus = 0;
  double noise = 0.0;

  int n_features() const noexcept { return static_cast<int>(train_x.rows()); }
  /// Test accuracy of always predicting the most frequent training label.
  double majority_baseline() const;
};

struct TaskOptions {
  double noise = 0.1;
  double test_fraction = 0.2;
  int harmonics = 2; // cycle task only
};

/// Leaves of a complete b-ary tree of the given depth; features are a noisy
/// bag of the node indicators along the root-to-leaf path and the label is the
/// root subtree containing the leaf.
SyntheticTask gen_hierarchy_task(int branching, int depth, int n_samples, std::uint64_t seed,
                                 const TaskOptions& options = {});

/// Positions on a length-m cycle encoded by cos/sin harmonics plus a one-hot
/// of the position; the label is the successor (p + 1) mod m.
SyntheticTask gen_cycle_task(int modulus, int n_samples, std::uint64_t seed, const TaskOptions& options = {});

/// Half hierarchy, half cycle samples in disjoint feature blocks; cycle labels
/// are offset by the number of hierarchy classes.
SyntheticTask gen_mixed_task(int branching, int depth, int modulus, int n_samples, std::uint64_t seed,
                             const TaskOptions& options = {});

struct TrainConfig {
  int hidden = 64;
  int epochs = 3;
  /// Tokens per step; 0 means the whole training set every step.
  int batch_size = 32;
  double capacity_lr = 5e-3;
  double curvature_lr_ratio = 10.0;
  double capacity_weight_decay = 0.01;
  double curvature_weight_decay = 0.0;
  double warmup_ratio = 0.1;
  UpdateRule rule = UpdateRule::adamw;
  /// false: one optimizer over every trainable tensor at capacity_lr.
  bool separated = true;
  std::uint64_t seed = 7;
  /// d_in/d_out are filled from the task and hidden width.
  LayerConfig layer{};
};

/// Frozen first projection adapted by MoSLoRA, tanh, trainable linear head.
struct Model {
  Mat frozen_W; // hidden x features
  MoSLoRAParams layer;
  Mat head;      // classes x hidden
  Mat head_bias; // classes x 1

  static Model init(const SyntheticTask& task, const TrainConfig& config);

  /// Names: "layer.*" for the adapted layer, "head.W", "head.b".
  std::vector<ParamView> parameter_views();
  Mat logits(const Mat& features) const;
  Checkpoint to_checkpoint() const;
};

struct TrainRecord {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double task_loss = 0.0;
  double aux_loss = 0.0;
  double capacity_lr = 0.0;
  double curvature_lr = 0.0;
  std::vector<double> curvatures;
  /// Share of dispatched token slots per geometry group.
  std::array<double, kGroupCount> group_dispatch{};
  /// Filled on the last step of each epoch.
  std::optional<double> eval_train_loss;
  std::optional<double> eval_accuracy;

  bool operator==(const TrainRecord&) const = default;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  Model model;
  std::optional<ParamGroups> optimizer;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double test_accuracy = 0.0;
  double majority_baseline = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

/// Mean cross-entropy and accuracy of the model on a labelled set.
std::pair<double, double> evaluate(const Model& model, const Mat& features, const std::vector<int>& labels);

/// Minibatch training: cross-entropy + aux_coefficient * grouped aux loss,
/// one optimizer step per batch, one record per step. A non-finite loss stops
/// training and keeps the records up to the last good step.
TrainResult train(const SyntheticTask& task, const TrainConfig& config);

void dump_trajectories(const std::vector<TrainRecord>& records, const std::filesystem::path& path);
std::string format_trajectories(const std::vector<TrainRecord>& records);
std::vector<TrainRecord> parse_trajectories(const std::string& text);
std::vector<TrainRecord> read_trajectories(const std::filesystem::path& path);

} // namespace mosgeom
