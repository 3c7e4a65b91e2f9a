// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>

namespace mosgeom {

/// Which side of the separated update a trainable tensor belongs to.
enum class ParamRole { curvature, capacity };

/// Mutable view of one named parameter tensor, flattened in storage order.
struct ParamView {
  std::string name;
  std::optional<ParamRole> role;
  bool trainable = true;
  std::span<double> values;
};

} // namespace mosgeom
