// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/checkpoint.hpp"
#include "mosgeom/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace mosgeom;

namespace {

Checkpoint sample_checkpoint(bool with_optimizer) {
  const SyntheticTask task = gen_hierarchy_task(2, 2, 60, 1);
  TrainConfig cfg;
  cfg.hidden = 6;
  cfg.epochs = 1;
  cfg.layer.rank = 2;
  const TrainResult r = train(task, cfg);
  Checkpoint c = r.model.to_checkpoint();
  if (with_optimizer) {
    c.optimizer = r.optimizer;
  }
  return c;
}

} // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const Checkpoint c = sample_checkpoint(true);
  const std::string bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(d), bytes);
  ASSERT_EQ(d.layer.experts.size(), c.layer.experts.size());
  for (std::size_t e = 0; e < c.layer.experts.size(); ++e) {
    EXPECT_EQ(d.layer.experts[e].A, c.layer.experts[e].A);
    EXPECT_EQ(d.layer.experts[e].B, c.layer.experts[e].B);
    EXPECT_EQ(d.layer.experts[e].curvature.kappa, c.layer.experts[e].curvature.kappa);
    EXPECT_EQ(d.layer.experts[e].curvature.learnable, c.layer.experts[e].curvature.learnable);
    EXPECT_EQ(d.layer.experts[e].group, c.layer.experts[e].group);
  }
  EXPECT_EQ(d.layer.router, c.layer.router);
  EXPECT_EQ(d.tensors, c.tensors);
  ASSERT_TRUE(d.optimizer.has_value());
  EXPECT_EQ(d.optimizer->curvature.steps, c.optimizer->curvature.steps);
  EXPECT_EQ(d.optimizer->capacity.members, c.optimizer->capacity.members);
  EXPECT_EQ(d.optimizer->capacity.state.at("layer.expert0.A").v, c.optimizer->capacity.state.at("layer.expert0.A").v);
}

TEST(Checkpoint, FileRoundTrip) {
  const Checkpoint c = sample_checkpoint(false);
  const auto path = std::filesystem::temp_directory_path() / "mosgeom_test_ckpt.bin";
  save_checkpoint(path, c);
  const Checkpoint d = load_checkpoint(path);
  EXPECT_EQ(encode_checkpoint(d), encode_checkpoint(c));
  EXPECT_FALSE(d.optimizer.has_value());
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(load_checkpoint(path));
}

TEST(Checkpoint, RejectsDamage) {
  const std::string bytes = encode_checkpoint(sample_checkpoint(true));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[2] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  std::string bad_version = bytes;
  bad_version[0] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(decode_checkpoint(bad_version), CheckpointError);
  EXPECT_THROW(decode_checkpoint(""), CheckpointError);
}
