// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mosgeom/layer.hpp"
#include "mosgeom/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mosgeom {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Layout (all little-endian):
///   u8 version, "MOSG"
///   header: i32 d_in, d_out, rank, n_experts, top_k; i32 x3 group sizes;
///           f64 x3 initial curvature; f64 gamma, aux coefficient, eps0;
///           u8 guard; per expert u8 group tag and u8 learnable flag
///   body:   per expert A then B (row-major f64), router (row-major f64),
///           kappa vector (f64 x n_experts)
///   u32 section count, then sections: u8 kind, string name, payload
///     kind 1 (tensor):    u32 rows, u32 cols, row-major f64
///     kind 2 (optimizer): one parameter group with its moment buffers
/// Strings are u32 length + bytes.
struct Checkpoint {
  MoSLoRAParams layer;
  std::map<std::string, Mat> tensors;
  std::optional<ParamGroups> optimizer;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace mosgeom
