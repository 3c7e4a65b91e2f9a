// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "mosgeom/bench.hpp"
#include "mosgeom/checkpoint.hpp"
#include "mosgeom/verify.hpp"

#include <CLI11.hpp>
#include <boost/program_options.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace mosgeom::cli {

namespace po = boost::program_options;

namespace {

template <typename T>
T parse_number(std::string_view text, const std::string& what) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(what + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) {
    return {};
  }
  return std::string(s.substr(b, s.find_last_not_of(" \t") - b + 1));
}

template <typename T, std::size_t N>
std::array<T, N> parse_triple(const std::string& text, const std::string& what) {
  std::array<T, N> out{};
  std::size_t i = 0;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (i == N) {
      throw ConfigError(what + ": expected " + std::to_string(N) + " comma-separated values");
    }
    out[i++] = parse_number<T>(trim(item), what);
  }
  if (i != N) {
    throw ConfigError(what + ": expected " + std::to_string(N) + " comma-separated values");
  }
  return out;
}

TaskKind parse_kind(const std::string& s) {
  if (s == "hierarchy") return TaskKind::hierarchy;
  if (s == "cycle") return TaskKind::cycle;
  if (s == "mixed") return TaskKind::mixed;
  throw ConfigError("task.kind: expected hierarchy, cycle or mixed, got '" + s + "'");
}

template <typename T>
void take(const po::variables_map& vm, const char* key, T& target) {
  if (vm.count(key) != 0) {
    target = vm[key].as<T>();
  }
}

} // namespace

RunConfig parse_run_config(const std::string& text) {
  po::options_description desc;
  // clang-format off
  desc.add_options()
      ("seed", po::value<std::uint64_t>())
      ("task.kind", po::value<std::string>())
      ("task.samples", po::value<int>())
      ("task.branching", po::value<int>())
      ("task.depth", po::value<int>())
      ("task.modulus", po::value<int>())
      ("task.noise", po::value<double>())
      ("task.test_fraction", po::value<double>())
      ("task.harmonics", po::value<int>())
      ("layer.hidden", po::value<int>())
      ("layer.rank", po::value<int>())
      ("layer.top_k", po::value<int>())
      ("layer.groups", po::value<std::string>())
      ("layer.initial_kappa", po::value<std::string>())
      ("layer.gamma", po::value<double>())
      ("layer.aux_coefficient", po::value<double>())
      ("layer.epsilon_zero", po::value<double>())
      ("layer.guard", po::value<std::string>())
      ("optimizer.rule", po::value<std::string>())
      ("optimizer.separated", po::value<bool>())
      ("optimizer.capacity_lr", po::value<double>())
      ("optimizer.curvature_lr_ratio", po::value<double>())
      ("optimizer.capacity_weight_decay", po::value<double>())
      ("optimizer.curvature_weight_decay", po::value<double>())
      ("schedule.epochs", po::value<int>())
      ("schedule.batch_size", po::value<int>())
      ("schedule.warmup_ratio", po::value<double>());
  // clang-format on

  po::variables_map vm;
  try {
    std::istringstream in(text);
    po::store(po::parse_config_file(in, desc, false), vm);
    po::notify(vm);
  } catch (const po::error& e) {
    throw ConfigError(e.what());
  }

  RunConfig cfg;
  TaskSpec& task = cfg.task;
  TrainConfig& train = cfg.train;
  take(vm, "seed", train.seed);
  if (vm.count("task.kind") != 0) {
    task.kind = parse_kind(vm["task.kind"].as<std::string>());
  }
  take(vm, "task.samples", task.samples);
  take(vm, "task.branching", task.branching);
  take(vm, "task.depth", task.depth);
  take(vm, "task.modulus", task.modulus);
  take(vm, "task.noise", task.options.noise);
  take(vm, "task.test_fraction", task.options.test_fraction);
  take(vm, "task.harmonics", task.options.harmonics);

  LayerConfig& layer = train.layer;
  take(vm, "layer.hidden", train.hidden);
  take(vm, "layer.rank", layer.rank);
  take(vm, "layer.top_k", layer.top_k);
  if (vm.count("layer.groups") != 0) {
    layer.group_sizes = parse_triple<int, kGroupCount>(vm["layer.groups"].as<std::string>(), "layer.groups");
    layer.n_experts = layer.group_sizes[0] + layer.group_sizes[1] + layer.group_sizes[2];
  }
  if (vm.count("layer.initial_kappa") != 0) {
    layer.initial_curvature =
        parse_triple<double, kGroupCount>(vm["layer.initial_kappa"].as<std::string>(), "layer.initial_kappa");
  }
  if (vm.count("layer.gamma") != 0) {
    try {
      layer.scaling = ScalingConfig(vm["layer.gamma"].as<double>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("layer.gamma: ") + e.what());
    }
  }
  take(vm, "layer.aux_coefficient", layer.aux_coefficient);
  take(vm, "layer.epsilon_zero", layer.epsilon_zero);
  if (vm.count("layer.guard") != 0) {
    const std::string g = vm["layer.guard"].as<std::string>();
    if (g == "verify") {
      layer.guard = GuardMode::verify;
    } else if (g == "rescale") {
      layer.guard = GuardMode::rescale;
    } else {
      throw ConfigError("layer.guard: expected verify or rescale, got '" + g + "'");
    }
  }

  if (vm.count("optimizer.rule") != 0) {
    const std::string r = vm["optimizer.rule"].as<std::string>();
    if (r == "adamw") {
      train.rule = UpdateRule::adamw;
    } else if (r == "sgd") {
      train.rule = UpdateRule::sgd;
    } else {
      throw ConfigError("optimizer.rule: expected adamw or sgd, got '" + r + "'");
    }
  }
  take(vm, "optimizer.separated", train.separated);
  take(vm, "optimizer.capacity_lr", train.capacity_lr);
  take(vm, "optimizer.curvature_lr_ratio", train.curvature_lr_ratio);
  take(vm, "optimizer.capacity_weight_decay", train.capacity_weight_decay);
  take(vm, "optimizer.curvature_weight_decay", train.curvature_weight_decay);
  take(vm, "schedule.epochs", train.epochs);
  take(vm, "schedule.batch_size", train.batch_size);
  take(vm, "schedule.warmup_ratio", train.warmup_ratio);

  // Range checks that do not need the data.
  if (task.samples < 10) throw ConfigError("task.samples must be >= 10");
  if (train.hidden < 1) throw ConfigError("layer.hidden must be >= 1");
  if (train.epochs < 1) throw ConfigError("schedule.epochs must be >= 1");
  if (train.batch_size < 0) throw ConfigError("schedule.batch_size must be >= 0");
  if (!(train.warmup_ratio >= 0.0 && train.warmup_ratio <= 1.0)) {
    throw ConfigError("schedule.warmup_ratio must be in [0, 1]");
  }
  if (!(train.capacity_lr >= 0.0) || !(train.curvature_lr_ratio >= 0.0)) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (!(train.capacity_weight_decay >= 0.0) || !(train.curvature_weight_decay >= 0.0)) {
    throw ConfigError("weight decay must be non-negative");
  }
  LayerConfig probe = layer;
  probe.d_in = 1;
  probe.d_out = 1;
  try {
    probe.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[layer]: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::filesystem::filesystem_error("cannot open config", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

SyntheticTask make_task(const TaskSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case TaskKind::hierarchy:
      return gen_hierarchy_task(spec.branching, spec.depth, spec.samples, seed, spec.options);
    case TaskKind::cycle:
      return gen_cycle_task(spec.modulus, spec.samples, seed, spec.options);
    case TaskKind::mixed:
      return gen_mixed_task(spec.branching, spec.depth, spec.modulus, spec.samples, seed, spec.options);
  }
  throw TaskError("unknown task kind");
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value) {
  if (flag) {
    return *flag;
  }
  if (const char* env = std::getenv("MOSGEOM_SEED"); env != nullptr && *env != '\0') {
    return parse_number<std::uint64_t>(env, "MOSGEOM_SEED");
  }
  return config_value;
}

// ---------------------------------------------------------------------------

namespace {

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string checkpoint;
  std::string trajectory;
};

struct BenchArgs {
  std::vector<int> dims;
  std::vector<int> depths;
  std::optional<int> batch;
  std::optional<int> repeats;
  std::optional<int> warmup;
  std::optional<int> rank;
  std::optional<double> kappa;
  std::string precision = "double";
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct VerifyArgs {
  std::vector<std::string> suites;
  bool full = false;
  std::optional<std::uint64_t> seed;
};

struct DumpArgs {
  std::string checkpoint;
  std::string trajectory;
  bool json = false;
};

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) {
    throw std::filesystem::filesystem_error(std::string(what) + " not found", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    cfg = load_run_config(a.config);
  }
  cfg.train.seed = resolve_seed(a.seed, cfg.train.seed);
  SyntheticTask task;
  try {
    task = make_task(cfg.task, cfg.train.seed);
  } catch (const TaskError& e) {
    throw ConfigError(std::string("[task]: ") + e.what());
  }

  const std::filesystem::path dir(a.out_dir);
  const std::filesystem::path ckpt = a.checkpoint.empty() ? dir / "checkpoint.mosg" : std::filesystem::path(a.checkpoint);
  const std::filesystem::path traj = a.trajectory.empty() ? dir / "trajectory.csv" : std::filesystem::path(a.trajectory);
  for (const auto& p : {ckpt, traj}) {
    if (p.has_parent_path()) {
      std::filesystem::create_directories(p.parent_path());
    }
  }

  out << "task " << task_name(task.kind) << ": " << task.train_x.cols() << " train / " << task.test_x.cols()
      << " test samples, " << task.n_features() << " features, " << task.n_classes << " classes, seed "
      << cfg.train.seed << "\n";
  const TrainResult result = train(task, cfg.train);
  dump_trajectories(result.records, traj);
  Checkpoint c = result.model.to_checkpoint();
  c.optimizer = result.optimizer;
  save_checkpoint(ckpt, c);

  out << "steps " << result.records.size() << ", loss " << result.initial_train_loss << " -> "
      << result.final_train_loss << ", test accuracy " << result.test_accuracy << " (majority "
      << result.majority_baseline << ")\n";
  out << "curvatures";
  for (double k : result.model.layer.curvatures()) {
    out << " " << k;
  }
  out << "\nwrote " << traj.string() << " and " << ckpt.string() << "\n";
  if (result.aborted) {
    err << "training aborted: " << result.abort_reason << "\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  bench::BenchConfig cfg;
  if (!a.dims.empty()) cfg.dims = a.dims;
  if (!a.depths.empty()) cfg.depths = a.depths;
  if (a.batch) cfg.batch = *a.batch;
  if (a.repeats) cfg.repeats = *a.repeats;
  if (a.warmup) cfg.warmup_iters = *a.warmup;
  if (a.rank) cfg.rank = *a.rank;
  if (a.kappa) cfg.kappa = *a.kappa;
  cfg.precision = a.precision == "single" ? bench::Precision::single : bench::Precision::double_;
  cfg.seed = static_cast<unsigned>(resolve_seed(a.seed, cfg.seed));
  try {
    cfg.validate();
  } catch (const bench::BenchError& e) {
    throw CLI::ValidationError(e.what());
  }

  const bench::BenchReport report = bench::bench_mapping(cfg);
  out << std::left << std::setw(6) << "dim" << std::setw(7) << "depth" << std::right << std::setw(12) << "mos_us"
      << std::setw(12) << "explog_us" << std::setw(10) << "fwd_x" << std::setw(10) << "bwd_x" << std::setw(10)
      << "total_x\n";
  out << std::fixed;
  for (const bench::SpeedupRow& s : report.speedups) {
    const auto* mf = report.find(bench::Method::mos, "forward", s.dim, s.depth);
    const auto* mb = report.find(bench::Method::mos, "backward", s.dim, s.depth);
    const auto* ef = report.find(bench::Method::explog, "forward", s.dim, s.depth);
    const auto* eb = report.find(bench::Method::explog, "backward", s.dim, s.depth);
    out << std::left << std::setw(6) << s.dim << std::setw(7) << s.depth << std::right << std::setprecision(1)
        << std::setw(12) << mf->median_us + mb->median_us << std::setw(12) << ef->median_us + eb->median_us
        << std::setprecision(2) << std::setw(10) << s.forward << std::setw(10) << s.backward << std::setw(10)
        << s.total << "\n";
  }
  out.unsetf(std::ios::floatfield);
  out << "totals: mos " << report.mos_total_us / 1000.0 << " ms, exp/log " << report.explog_total_us / 1000.0
      << " ms; identity check " << std::max(report.mos_identity_error, report.explog_identity_error) << "\n";
  for (const std::string& note : report.notes) {
    out << "note: " << note << "\n";
  }
  if (!a.out.empty()) {
    const std::filesystem::path p(a.out);
    if (p.has_parent_path()) {
      std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(p, std::ios::binary);
    f << report.to_json() << "\n";
    if (!f) {
      throw std::runtime_error("cannot write " + a.out);
    }
    out << "wrote " << a.out << "\n";
  }
  return kOk;
}

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  VerifyOptions opts;
  opts.suites = a.suites;
  opts.full = a.full;
  opts.seed = resolve_seed(a.seed, opts.seed);
  VerifyReport report;
  try {
    report = verify(opts);
  } catch (const std::invalid_argument& e) {
    throw CLI::ValidationError(e.what());
  }
  out << report.table();
  out << (report.passed() ? "all suites passed\n" : "FAILED\n");
  return report.passed() ? kOk : kSuiteFailure;
}

int cmd_dump(const DumpArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.trajectory.empty()) {
    throw CLI::ValidationError("give exactly one of --checkpoint or --trajectory");
  }
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    const Checkpoint c = load_checkpoint(a.checkpoint);
    if (a.json) {
      nlohmann::ordered_json doc = nlohmann::ordered_json::array();
      for (std::size_t e = 0; e < c.layer.experts.size(); ++e) {
        const ExpertParams& ex = c.layer.experts[e];
        doc.push_back({{"expert", e},
                       {"group", group_name(ex.group)},
                       {"kappa", ex.curvature.kappa},
                       {"learnable", ex.curvature.learnable}});
      }
      out << doc.dump(2) << "\n";
    } else {
      out << "expert,group,kappa,learnable\n" << std::setprecision(17);
      for (std::size_t e = 0; e < c.layer.experts.size(); ++e) {
        const ExpertParams& ex = c.layer.experts[e];
        out << e << "," << group_name(ex.group) << "," << ex.curvature.kappa << ","
            << (ex.curvature.learnable ? 1 : 0) << "\n";
      }
    }
    return kOk;
  }
  require_file(a.trajectory, "trajectory");
  const std::vector<TrainRecord> records = read_trajectories(a.trajectory);
  const std::size_t n = records.empty() ? 0 : records.front().curvatures.size();
  if (a.json) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const TrainRecord& r : records) {
      doc.push_back({{"step", r.step}, {"kappa", r.curvatures}});
    }
    out << doc.dump(2) << "\n";
  } else {
    out << "step";
    for (std::size_t i = 0; i < n; ++i) {
      out << ",kappa_" << i;
    }
    out << "\n" << std::setprecision(17);
    for (const TrainRecord& r : records) {
      out << r.step;
      for (double k : r.curvatures) {
        out << "," << k;
      }
      out << "\n";
    }
  }
  return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture-of-space geometric LoRA experts: training, benchmarks and verification", "mosgeom"};
  app.require_subcommand(0, 1);

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the adapted layer on a synthetic task");
  train_cmd->add_option("-c,--config", ta.config, "Config file (key = value, [layer] [optimizer] [task] [schedule])");
  train_cmd->add_option("--seed", ta.seed, "Seed; overrides MOSGEOM_SEED and the config");
  train_cmd->add_option("-o,--out", ta.out_dir, "Output directory for checkpoint.mosg and trajectory.csv");
  train_cmd->add_option("--checkpoint", ta.checkpoint, "Checkpoint path (overrides --out)");
  train_cmd->add_option("--trajectory", ta.trajectory, "Trajectory CSV path (overrides --out)");

  BenchArgs ba;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Time MoS against exp/log mapping chains");
  bench_cmd->add_option("--dims", ba.dims, "Layer widths, comma separated")->delimiter(',');
  bench_cmd->add_option("--depths", ba.depths, "Layer counts, comma separated")->delimiter(',');
  bench_cmd->add_option("--batch", ba.batch, "Tokens per call");
  bench_cmd->add_option("--repeats", ba.repeats, "Timed samples (>= 5)");
  bench_cmd->add_option("--warmup", ba.warmup, "Discarded warmup calls (>= 1)");
  bench_cmd->add_option("--rank", ba.rank, "Rank of the interior map I + BA; 0 is the identity");
  bench_cmd->add_option("--kappa", ba.kappa, "Curvature (< 0)");
  bench_cmd->add_option("--precision", ba.precision, "single or double")
      ->check(CLI::IsMember({"single", "double"}));
  bench_cmd->add_option("--seed", ba.seed, "Seed for inputs");
  bench_cmd->add_option("-o,--out", ba.out, "Write the JSON report here");

  VerifyArgs va;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run the property suites");
  verify_cmd->add_option("-s,--suite", va.suites, "Suite to run (repeatable); default all");
  verify_cmd->add_flag("--full", va.full, "Full sample counts");
  verify_cmd->add_option("--seed", va.seed, "Seed");

  DumpArgs da;
  CLI::App* dump_cmd = app.add_subcommand("dump-curvature", "Print expert curvatures");
  dump_cmd->add_option("--checkpoint", da.checkpoint, "Checkpoint file");
  dump_cmd->add_option("--trajectory", da.trajectory, "Trajectory CSV (curvature per step)");
  dump_cmd->add_flag("--json", da.json, "JSON instead of CSV");

  if (args.empty()) {
    err << app.help();
    return kUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (train_cmd->parsed()) return cmd_train(ta, out, err);
    if (bench_cmd->parsed()) return cmd_bench(ba, out);
    if (verify_cmd->parsed()) return cmd_verify(va, out);
    if (dump_cmd->parsed()) return cmd_dump(da, out);
    err << app.help();
    return kUsage;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    if (e.code() == std::errc::no_such_file_or_directory) {
      err << "missing file: " << e.path1().string() << "\n";
      return kMissingFile;
    }
    err << "error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

} // namespace mosgeom::cli
