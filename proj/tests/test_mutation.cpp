// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

// Linked against the library built with the lift sign flipped; the property
// suites must notice.

#include "mosgeom/verify.hpp"

#include <gtest/gtest.h>

using namespace mosgeom;

TEST(Mutation, FlippedLiftSignIsCaught) {
  VerifyOptions o;
  o.suites = {"scaling", "constraints"};
  const VerifyReport r = verify(o);
  ASSERT_EQ(r.suites.size(), 2u);
  for (const SuiteResult& s : r.suites) {
    EXPECT_FALSE(s.passed()) << s.name << " did not notice the flipped sign";
  }
}

TEST(Mutation, UnrelatedSuitesStillPass) {
  VerifyOptions o;
  o.suites = {"auxloss", "optimizer"};
  EXPECT_TRUE(verify(o).passed());
}
