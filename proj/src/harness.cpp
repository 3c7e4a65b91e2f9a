// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace mosgeom {

const char* task_name(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::hierarchy:
      return "hierarchy";
    case TaskKind::cycle:
      return "cycle";
    case TaskKind::mixed:
      return "mixed";
  }
  return "unknown";
}

double SyntheticTask::majority_baseline() const {
  if (train_y.empty() || test_y.empty()) {
    return 0.0;
  }
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int y : train_y) {
    ++counts[static_cast<std::size_t>(y)];
  }
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const auto hits = std::count(test_y.begin(), test_y.end(), majority);
  return static_cast<double>(hits) / static_cast<double>(test_y.size());
}

namespace {

struct Sampled {
  Mat x;
  std::vector<int> y;
};

int hierarchy_features(int branching, int depth) {
  long total = 0;
  long width = 1;
  for (int l = 1; l <= depth; ++l) {
    width *= branching;
    total += width;
    if (total > (1L << 20)) {
      throw TaskError("hierarchy task: tree too large for a dense encoding");
    }
  }
  return static_cast<int>(total);
}

/// Writes one leaf's path indicators into `col` (already zeroed), returns label.
int sample_hierarchy(std::mt19937_64& rng, int branching, int depth, Eigen::Ref<Vec> col) {
  std::uniform_int_distribution<int> child(0, branching - 1);
  long offset = 0;
  long width = 1;
  long prefix = 0;
  int root_child = 0;
  for (int l = 1; l <= depth; ++l) {
    const int c = child(rng);
    if (l == 1) {
      root_child = c;
    }
    prefix = prefix * branching + c;
    width *= branching;
    col(offset + prefix) = 1.0;
    offset += width;
  }
  return root_child;
}

int sample_cycle(std::mt19937_64& rng, int modulus, int harmonics, Eigen::Ref<Vec> col) {
  std::uniform_int_distribution<int> pos(0, modulus - 1);
  const int p = pos(rng);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(p) / static_cast<double>(modulus);
  for (int h = 0; h < harmonics; ++h) {
    col(2 * h) = std::cos((h + 1) * angle);
    col(2 * h + 1) = std::sin((h + 1) * angle);
  }
  col(2 * harmonics + p) = 1.0;
  return (p + 1) % modulus;
}

void add_noise(std::mt19937_64& rng, double noise, Mat& x) {
  if (noise <= 0.0) {
    return;
  }
  std::normal_distribution<double> gauss(0.0, noise);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      x(r, c) += gauss(rng);
    }
  }
}

void split(SyntheticTask& task, const Sampled& all, const TaskOptions& options) {
  const auto n = static_cast<Eigen::Index>(all.y.size());
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0)) {
    throw TaskError("test fraction must lie in (0, 1)");
  }
  Eigen::Index n_test = static_cast<Eigen::Index>(std::llround(options.test_fraction * static_cast<double>(n)));
  n_test = std::clamp<Eigen::Index>(n_test, 1, n - 1);
  const Eigen::Index n_train = n - n_test;
  task.train_x = all.x.leftCols(n_train);
  task.test_x = all.x.rightCols(n_test);
  task.train_y.assign(all.y.begin(), all.y.begin() + n_train);
  task.test_y.assign(all.y.begin() + n_train, all.y.end());
}

void check_common(int n_samples, const TaskOptions& options) {
  if (n_samples < 2) {
    throw TaskError("need at least two samples");
  }
  if (!(options.noise >= 0.0) || !std::isfinite(options.noise)) {
    throw TaskError("noise must be finite and non-negative");
  }
}

} // namespace

SyntheticTask gen_hierarchy_task(int branching, int depth, int n_samples, std::uint64_t seed,
                                 const TaskOptions& options) {
  if (branching < 2 || depth < 1) {
    throw TaskError("hierarchy task: need branching >= 2 and depth >= 1");
  }
  check_common(n_samples, options);
  const int features = hierarchy_features(branching, depth);
  std::mt19937_64 rng(seed);
  Sampled all{Mat::Zero(features, n_samples), {}};
  for (int i = 0; i < n_samples; ++i) {
    all.y.push_back(sample_hierarchy(rng, branching, depth, all.x.col(i)));
  }
  add_noise(rng, options.noise, all.x);

  SyntheticTask task;
  task.kind = TaskKind::hierarchy;
  task.n_classes = branching;
  task.branching = branching;
  task.depth = depth;
  task.noise = options.noise;
  split(task, all, options);
  return task;
}

SyntheticTask gen_cycle_task(int modulus, int n_samples, std::uint64_t seed, const TaskOptions& options) {
  if (modulus < 3) {
    throw TaskError("cycle task: modulus must be at least 3");
  }
  if (options.harmonics < 1) {
    throw TaskError("cycle task: need at least one harmonic");
  }
  check_common(n_samples, options);
  std::mt19937_64 rng(seed);
  Sampled all{Mat::Zero(2 * options.harmonics + modulus, n_samples), {}};
  for (int i = 0; i < n_samples; ++i) {
    all.y.push_back(sample_cycle(rng, modulus, options.harmonics, all.x.col(i)));
  }
  add_noise(rng, options.noise, all.x);

  SyntheticTask task;
  task.kind = TaskKind::cycle;
  task.n_classes = modulus;
  task.modulus = modulus;
  task.noise = options.noise;
  split(task, all, options);
  return task;
}

SyntheticTask gen_mixed_task(int branching, int depth, int modulus, int n_samples, std::uint64_t seed,
                             const TaskOptions& options) {
  if (branching < 2 || depth < 1 || modulus < 3 || options.harmonics < 1) {
    throw TaskError("mixed task: need branching >= 2, depth >= 1, modulus >= 3");
  }
  check_common(n_samples, options);
  const int fh = hierarchy_features(branching, depth);
  const int fc = 2 * options.harmonics + modulus;
  std::mt19937_64 rng(seed);
  Sampled all{Mat::Zero(fh + fc, n_samples), {}};
  for (int i = 0; i < n_samples; ++i) {
    if (i % 2 == 0) {
      all.y.push_back(sample_hierarchy(rng, branching, depth, all.x.col(i).head(fh)));
    } else {
      all.y.push_back(branching + sample_cycle(rng, modulus, options.harmonics, all.x.col(i).tail(fc)));
    }
  }
  add_noise(rng, options.noise, all.x);

  SyntheticTask task;
  task.kind = TaskKind::mixed;
  task.n_classes = branching + modulus;
  task.branching = branching;
  task.depth = depth;
  task.modulus = modulus;
  task.noise = options.noise;
  split(task, all, options);
  return task;
}

// ---------------------------------------------------------------------------
// Model

Model Model::init(const SyntheticTask& task, const TrainConfig& config) {
  if (config.hidden <= 0) {
    throw TaskError("hidden width must be positive");
  }
  if (task.train_x.cols() == 0 || task.n_classes < 2) {
    throw TaskError("task has no training data");
  }
  LayerConfig layer = config.layer;
  layer.d_in = task.n_features();
  layer.d_out = config.hidden;

  Model m;
  std::mt19937_64 rng(config.seed);
  // Scale the frozen projection so hidden pre-activations have unit spread.
  const double rms = std::sqrt(task.train_x.colwise().squaredNorm().mean());
  const double bound = std::sqrt(3.0) / std::max(rms, 1e-12);
  std::uniform_real_distribution<double> frozen(-bound, bound);
  m.frozen_W = Mat::NullaryExpr(config.hidden, layer.d_in, [&]() { return frozen(rng); });
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(config.hidden));
  std::uniform_real_distribution<double> head(-head_bound, head_bound);
  m.head = Mat::NullaryExpr(task.n_classes, config.hidden, [&]() { return head(rng); });
  m.head_bias = Mat::Zero(task.n_classes, 1);
  m.layer = MoSLoRAParams::init(layer, rng());
  return m;
}

std::vector<ParamView> Model::parameter_views() {
  std::vector<ParamView> views = layer.parameter_views("layer.");
  views.push_back({"head.W", ParamRole::capacity, true, {head.data(), static_cast<std::size_t>(head.size())}});
  views.push_back(
      {"head.b", ParamRole::capacity, true, {head_bias.data(), static_cast<std::size_t>(head_bias.size())}});
  return views;
}

Mat Model::logits(const Mat& features) const {
  const LayerOutput out = layer_forward(features, frozen_W, layer);
  Mat z = head * out.output.array().tanh().matrix();
  z.colwise() += head_bias.col(0);
  return z;
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint c;
  c.layer = layer;
  c.tensors["frozen.W"] = frozen_W;
  c.tensors["head.W"] = head;
  c.tensors["head.b"] = head_bias;
  return c;
}

std::pair<double, double> evaluate(const Model& model, const Mat& features, const std::vector<int>& labels) {
  if (features.cols() == 0) {
    return {0.0, 0.0};
  }
  const Mat z = model.logits(features);
  double loss = 0.0;
  long hits = 0;
  for (Eigen::Index t = 0; t < z.cols(); ++t) {
    const double shift = z.col(t).maxCoeff();
    const double lse = shift + std::log((z.col(t).array() - shift).exp().sum());
    const int y = labels[static_cast<std::size_t>(t)];
    loss += lse - z(y, t);
    Eigen::Index best = 0;
    z.col(t).maxCoeff(&best);
    hits += best == y ? 1 : 0;
  }
  const double n = static_cast<double>(z.cols());
  return {loss / n, static_cast<double>(hits) / n};
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::array<double, kGroupCount> dispatch_shares(const RoutingDecision& decision) {
  std::array<double, kGroupCount> out{};
  double total = 0.0;
  for (const GroupStats& g : decision.group_stats) {
    total += g.slots;
  }
  if (total > 0.0) {
    for (const GroupStats& g : decision.group_stats) {
      out[static_cast<std::size_t>(g.group)] = g.slots / total;
    }
  }
  return out;
}

} // namespace

TrainResult train(const SyntheticTask& task, const TrainConfig& config) {
  if (config.epochs < 1) {
    throw TaskError("train: epochs must be at least 1");
  }
  TrainResult result;
  Model model = Model::init(task, config);
  std::vector<ParamView> views = model.parameter_views();

  const long n_train = task.train_x.cols();
  const long batch = config.batch_size <= 0 ? n_train : std::min<long>(config.batch_size, n_train);
  const long steps_per_epoch = (n_train + batch - 1) / batch;
  const long total_steps = steps_per_epoch * config.epochs;

  GroupConfig capacity;
  capacity.rule = config.rule;
  capacity.schedule = Schedule{config.capacity_lr, config.warmup_ratio, total_steps};
  capacity.weight_decay = config.capacity_weight_decay;
  GroupConfig curvature = capacity;
  curvature.schedule.base_lr = config.capacity_lr * config.curvature_lr_ratio;
  curvature.weight_decay = config.curvature_weight_decay;
  ParamGroups groups =
      config.separated ? partition(views, curvature, capacity) : partition_unified(views, capacity);

  result.majority_baseline = task.majority_baseline();
  result.initial_train_loss = evaluate(model, task.train_x, task.train_y).first;
  const double alpha = model.layer.config.aux_coefficient;

  std::mt19937_64 order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
  long step_index = 0;
  for (int epoch = 0; epoch < config.epochs && !result.aborted; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    if (batch < n_train) {
      std::shuffle(order.begin(), order.end(), order_rng);
    }
    for (long s = 0; s < steps_per_epoch; ++s, ++step_index) {
      const long begin = s * batch;
      const long end = std::min(n_train, begin + batch);
      Mat x(task.train_x.rows(), end - begin);
      std::vector<int> labels;
      for (long i = begin; i < end; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(i)];
        x.col(i - begin) = task.train_x.col(src);
        labels.push_back(task.train_y[static_cast<std::size_t>(src)]);
      }

      TrainRecord rec;
      rec.step = step_index;
      rec.epoch = epoch;
      GradMap grads;
      try {
        Tape tape;
        LayerLeaves leaves = register_layer_leaves(tape, model.layer, "layer.");
        Var head = tape.leaf("head.W", model.head);
        Var bias = tape.leaf("head.b", model.head_bias);
        Var tokens = tape.constant(x);
        TapedLayer layer = layer_forward_taped(tape, tokens, model.frozen_W, model.layer, leaves);
        Var logits = tape.add_col(tape.matmul(head, tape.tanh(layer.output)), bias);
        Var task_loss = tape.cross_entropy(logits, labels);
        Var total = tape.add(task_loss, tape.scale(layer.aux_loss, alpha));
        rec.task_loss = tape.scalar(task_loss);
        rec.aux_loss = tape.scalar(layer.aux_loss);
        rec.loss = tape.scalar(total);
        rec.group_dispatch = dispatch_shares(layer.decision);
        if (!std::isfinite(rec.loss)) {
          result.aborted = true;
          result.abort_reason = "non-finite loss at step " + std::to_string(step_index);
          break;
        }
        grads = tape.backward(total);
        const StepReport lr = step(groups, views, grads);
        rec.capacity_lr = lr.capacity_lr;
        rec.curvature_lr = lr.curvature_lr;
      } catch (const std::exception& e) {
        result.aborted = true;
        result.abort_reason = "step " + std::to_string(step_index) + ": " + e.what();
        break;
      }
      rec.curvatures = model.layer.curvatures();
      if (s + 1 == steps_per_epoch) {
        const auto [train_loss, _] = evaluate(model, task.train_x, task.train_y);
        rec.eval_train_loss = train_loss;
        rec.eval_accuracy = evaluate(model, task.test_x, task.test_y).second;
      }
      result.records.push_back(std::move(rec));
    }
  }

  result.final_train_loss = evaluate(model, task.train_x, task.train_y).first;
  result.test_accuracy = evaluate(model, task.test_x, task.test_y).second;
  result.optimizer = std::move(groups);
  views.clear();
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Trajectory files

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("trajectory: bad number '" + std::string(s) + "'");
  }
  return v;
}

long parse_long(std::string_view s) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("trajectory: bad integer '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  return out;
}

constexpr int kLeadingColumns = 7; // step .. curvature_lr
constexpr int kTrailingColumns = 5; // 3 dispatch + 2 eval

} // namespace

std::string format_trajectories(const std::vector<TrainRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("dump_trajectories: no records");
  }
  const std::size_t n_kappa = records.front().curvatures.size();
  std::string out = "step,epoch,loss,task_loss,aux_loss,capacity_lr,curvature_lr";
  for (std::size_t e = 0; e < n_kappa; ++e) {
    out += ",kappa_" + std::to_string(e);
  }
  out += ",dispatch_hyperbolic,dispatch_spherical,dispatch_euclidean,eval_train_loss,eval_accuracy\n";
  for (const TrainRecord& r : records) {
    if (r.curvatures.size() != n_kappa) {
      throw std::invalid_argument("dump_trajectories: inconsistent expert count");
    }
    out += std::to_string(r.step) + ',' + std::to_string(r.epoch);
    for (double v : {r.loss, r.task_loss, r.aux_loss, r.capacity_lr, r.curvature_lr}) {
      out += ',' + fmt_double(v);
    }
    for (double k : r.curvatures) {
      out += ',' + fmt_double(k);
    }
    for (double d : r.group_dispatch) {
      out += ',' + fmt_double(d);
    }
    out += ',' + (r.eval_train_loss ? fmt_double(*r.eval_train_loss) : std::string());
    out += ',' + (r.eval_accuracy ? fmt_double(*r.eval_accuracy) : std::string());
    out += '\n';
  }
  return out;
}

std::vector<TrainRecord> parse_trajectories(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("trajectory: empty file");
  }
  const auto header = split_fields(line);
  const int columns = static_cast<int>(header.size());
  const int n_kappa = columns - kLeadingColumns - kTrailingColumns;
  if (n_kappa < 0 || header.front() != "step") {
    throw std::runtime_error("trajectory: unrecognized header");
  }
  std::vector<TrainRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto f = split_fields(line);
    if (static_cast<int>(f.size()) != columns) {
      throw std::runtime_error("trajectory: wrong field count in row " + std::to_string(records.size() + 1));
    }
    TrainRecord r;
    r.step = parse_long(f[0]);
    r.epoch = static_cast<int>(parse_long(f[1]));
    r.loss = parse_double(f[2]);
    r.task_loss = parse_double(f[3]);
    r.aux_loss = parse_double(f[4]);
    r.capacity_lr = parse_double(f[5]);
    r.curvature_lr = parse_double(f[6]);
    for (int e = 0; e < n_kappa; ++e) {
      r.curvatures.push_back(parse_double(f[static_cast<std::size_t>(kLeadingColumns + e)]));
    }
    const std::size_t d0 = static_cast<std::size_t>(kLeadingColumns + n_kappa);
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      r.group_dispatch[g] = parse_double(f[d0 + g]);
    }
    if (!f[d0 + 3].empty()) {
      r.eval_train_loss = parse_double(f[d0 + 3]);
    }
    if (!f[d0 + 4].empty()) {
      r.eval_accuracy = parse_double(f[d0 + 4]);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void dump_trajectories(const std::vector<TrainRecord>& records, const std::filesystem::path& path) {
  const std::string text = format_trajectories(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  f << text;
  if (!f) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

std::vector<TrainRecord> read_trajectories(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_trajectories(buf.str());
}

} // namespace mosgeom
