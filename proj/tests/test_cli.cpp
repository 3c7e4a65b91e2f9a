// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mosgeom;
using namespace mosgeom::cli;

namespace {

namespace fs = std::filesystem;

struct Ran {
  int code;
  std::string out;
  std::string err;
};

Ran run_cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mosgeom_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kSmallConfig = R"(# small run
seed = 3
[task]
kind = cycle
samples = 120
modulus = 5
[layer]
hidden = 8
rank = 2
[schedule]
epochs = 2
)";

} // namespace

TEST(Config, ParsesSections) {
  const RunConfig c = parse_run_config(R"(
seed = 11   # trailing comment
[task]
kind = mixed
branching = 2
[layer]
groups = 4, 2, 2
initial_kappa = -0.5, 0.5, 0
gamma = 0.01
guard = rescale
[optimizer]
rule = sgd
separated = false
capacity_lr = 0.1
curvature_lr_ratio = 3
[schedule]
warmup_ratio = 0.2
batch_size = 0
)");
  EXPECT_EQ(c.train.seed, 11u);
  EXPECT_EQ(c.task.kind, TaskKind::mixed);
  EXPECT_EQ(c.task.branching, 2);
  EXPECT_EQ(c.train.layer.group_sizes, (std::array<int, 3>{4, 2, 2}));
  EXPECT_EQ(c.train.layer.initial_curvature[0], -0.5);
  EXPECT_EQ(c.train.layer.scaling.gamma, 0.01);
  EXPECT_EQ(c.train.layer.guard, GuardMode::rescale);
  EXPECT_EQ(c.train.rule, UpdateRule::sgd);
  EXPECT_FALSE(c.train.separated);
  EXPECT_EQ(c.train.capacity_lr, 0.1);
  EXPECT_EQ(c.train.curvature_lr_ratio, 3.0);
  EXPECT_EQ(c.train.warmup_ratio, 0.2);
  EXPECT_EQ(c.train.batch_size, 0);
}

TEST(Config, RejectsMalformed) {
  EXPECT_THROW(parse_run_config("[layer]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[layer]\nrank = eight\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[layer]\ngroups = 3,3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[layer]\ntop_k = 20\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[task]\nkind = spiral\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[schedule]\nepochs = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[nope]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config("just words\n"), ConfigError);
}

TEST(Seed, Precedence) {
  ::unsetenv("MOSGEOM_SEED");
  EXPECT_EQ(resolve_seed(std::nullopt, 5), 5u);
  ::setenv("MOSGEOM_SEED", "9", 1);
  EXPECT_EQ(resolve_seed(std::nullopt, 5), 9u);
  EXPECT_EQ(resolve_seed(4, 5), 4u);
  ::setenv("MOSGEOM_SEED", "x9", 1);
  EXPECT_THROW(resolve_seed(std::nullopt, 5), ConfigError);
  ::unsetenv("MOSGEOM_SEED");
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli({}).code, kUsage);
  EXPECT_NE(run_cli({}).err.find("train"), std::string::npos);
  EXPECT_EQ(run_cli({"--help"}).code, kOk);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kUsage);
  EXPECT_EQ(run_cli({"verify", "--bogus"}).code, kUsage);
  EXPECT_EQ(run_cli({"verify", "--suite", "nope"}).code, kUsage);
  EXPECT_EQ(run_cli({"bench", "--repeats", "2"}).code, kUsage);
  EXPECT_EQ(run_cli({"train", "--config", "/nonexistent/c.cfg"}).code, kMissingFile);
  EXPECT_EQ(run_cli({"dump-curvature", "--checkpoint", "/nonexistent/x"}).code, kMissingFile);
  EXPECT_EQ(run_cli({"dump-curvature"}).code, kUsage);

  const fs::path dir = scratch("codes");
  write(dir / "bad.cfg", "[layer]\nrank = -\n");
  EXPECT_EQ(run_cli({"train", "--config", (dir / "bad.cfg").string()}).code, kBadConfig);
  write(dir / "garbage.mosg", "not a checkpoint");
  EXPECT_EQ(run_cli({"dump-curvature", "--checkpoint", (dir / "garbage.mosg").string()}).code, kRuntime);
}

TEST(Cli, VerifyFilter) {
  const Ran r = run_cli({"verify", "--suite", "scaling"});
  EXPECT_EQ(r.code, kOk);
  EXPECT_NE(r.out.find("scaling"), std::string::npos);
  EXPECT_EQ(r.out.find("roundtrip"), std::string::npos);
}

TEST(Cli, TrainTwiceIsByteIdentical) {
  ::unsetenv("MOSGEOM_SEED");
  const fs::path dir = scratch("train");
  write(dir / "c.cfg", kSmallConfig);
  const std::string cfg = (dir / "c.cfg").string();
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--seed", "7", "-o", (dir / "a").string()}).code, kOk);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--seed", "7", "-o", (dir / "b").string()}).code, kOk);
  EXPECT_EQ(slurp(dir / "a" / "trajectory.csv"), slurp(dir / "b" / "trajectory.csv"));
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.mosg"), slurp(dir / "b" / "checkpoint.mosg"));
  EXPECT_FALSE(slurp(dir / "a" / "trajectory.csv").empty());

  // The environment seed applies when no flag is given and loses to the flag.
  ::setenv("MOSGEOM_SEED", "7", 1);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "-o", (dir / "env").string()}).code, kOk);
  ::setenv("MOSGEOM_SEED", "123", 1);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--seed", "7", "-o", (dir / "flag").string()}).code, kOk);
  ::unsetenv("MOSGEOM_SEED");
  ASSERT_EQ(run_cli({"train", "--config", cfg, "-o", (dir / "cfgseed").string()}).code, kOk);
  EXPECT_EQ(slurp(dir / "env" / "trajectory.csv"), slurp(dir / "a" / "trajectory.csv"));
  EXPECT_EQ(slurp(dir / "flag" / "trajectory.csv"), slurp(dir / "a" / "trajectory.csv"));
  EXPECT_NE(slurp(dir / "cfgseed" / "trajectory.csv"), slurp(dir / "a" / "trajectory.csv"));

  const Ran dump = run_cli({"dump-curvature", "--checkpoint", (dir / "a" / "checkpoint.mosg").string()});
  EXPECT_EQ(dump.code, kOk);
  EXPECT_EQ(dump.out.rfind("expert,group,kappa,learnable\n", 0), 0u);
  EXPECT_NE(dump.out.find("7,euclidean,0,0"), std::string::npos);
  const Ran traj = run_cli({"dump-curvature", "--json", "--trajectory", (dir / "a" / "trajectory.csv").string()});
  EXPECT_EQ(traj.code, kOk);
  EXPECT_EQ(nlohmann::json::parse(traj.out).front().at("kappa").size(), 8u);
}

TEST(Cli, BenchWritesReport) {
  const fs::path dir = scratch("bench");
  const fs::path out = dir / "report.json";
  const Ran r = run_cli({"bench", "--dims", "64,128", "--depths", "4", "--repeats", "5", "-o", out.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto doc = nlohmann::json::parse(slurp(out));
  EXPECT_EQ(doc.at("rows").size(), 8u); // 2 dims x 1 depth x 2 phases, per method
  int mos_forward = 0;
  for (const auto& row : doc.at("rows")) {
    mos_forward += row.at("method") == "mos" && row.at("phase") == "forward" ? 1 : 0;
  }
  EXPECT_EQ(mos_forward, 2);
}
