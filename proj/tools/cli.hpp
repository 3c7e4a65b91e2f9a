// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/harness.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosgeom::cli {

enum ExitCode : int {
  kOk = 0,
  kSuiteFailure = 1,
  kUsage = 2,
  kBadConfig = 3,
  kMissingFile = 4,
  kRuntime = 5,
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TaskSpec {
  TaskKind kind = TaskKind::hierarchy;
  int samples = 2000;
  int branching = 3;
  int depth = 4;
  int modulus = 7;
  TaskOptions options{};
};

struct RunConfig {
  TaskSpec task;
  TrainConfig train;
};

/// Line-oriented `key = value` text with `# comments` and [layer],
/// [optimizer], [task], [schedule] sections. Throws ConfigError on unknown
/// keys, bad values or invalid combinations.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

SyntheticTask make_task(const TaskSpec& spec, std::uint64_t seed);

/// CLI flag > MOSGEOM_SEED > config value.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value);

/// Entry point shared by the binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mosgeom::cli
