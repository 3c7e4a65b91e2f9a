// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mosgeom {

struct SuiteResult {
  std::string name;
  long checks = 0;
  long failures = 0;
  /// Largest error seen, in the suite's own units.
  double worst = 0.0;
  std::vector<std::string> messages;
  double seconds = 0.0;

  bool passed() const noexcept { return checks > 0 && failures == 0; }
  /// Counts one check; keeps the first few failure messages.
  bool expect(bool ok, std::string_view what, double error = 0.0);
};

struct VerifyOptions {
  /// Empty runs every suite.
  std::vector<std::string> suites;
  /// Full sample counts (slower); otherwise a quick pass.
  bool full = false;
  std::uint64_t seed = 7;
};

struct VerifyReport {
  std::vector<SuiteResult> suites;
  bool passed() const noexcept;
  std::string table() const;
};

/// roundtrip, constraints, scaling, gradbounds, gradcheck, auxloss, optimizer, layer
const std::vector<std::string>& suite_names();

/// Throws std::invalid_argument for an unknown suite name.
VerifyReport verify(const VerifyOptions& options);

// Individual suites, sized explicitly.

/// stereo(inv_stereo(x)) = x to 1e-11; exp/log round trips to 1e-8.
SuiteResult suite_roundtrip(long cases, int max_dim, std::uint64_t seed);
/// Manifold constraints of every projection and lift to 1e-10.
SuiteResult suite_constraints(long cases, int max_dim, std::uint64_t seed);
/// Scale invariance F_k(x) = F_{k/g^2}(g x) / g to 1e-6 on the
/// gamma x kappa grid, plus the identity-map anchor F_k(x) = x.
SuiteResult suite_scaling(long per_cell, std::uint64_t seed);
/// Lifting-coordinate gradient norms: <= 1 for kappa < 0, below the
/// margin bound for kappa > 0.
SuiteResult suite_gradbounds(long per_kappa, std::uint64_t seed);
/// Central differences (h = 1e-5) against the tape for every primitive and
/// the full layer loss, relative error < 1e-4.
SuiteResult suite_gradcheck(int seeds, std::uint64_t seed);
SuiteResult suite_auxloss(int trials, std::uint64_t seed);
SuiteResult suite_optimizer(int trials, std::uint64_t seed);
SuiteResult suite_layer(int trials, std::uint64_t seed);

} // namespace mosgeom
