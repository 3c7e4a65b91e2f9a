// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/verify.hpp"

#include <gtest/gtest.h>

using namespace mosgeom;

TEST(Verify, QuickPassIsGreen) {
  const VerifyReport r = verify({});
  EXPECT_EQ(r.suites.size(), suite_names().size());
  EXPECT_TRUE(r.passed()) << r.table();
}

TEST(Verify, FilterAndUnknown) {
  VerifyOptions o;
  o.suites = {"auxloss", "scaling"};
  const VerifyReport r = verify(o);
  ASSERT_EQ(r.suites.size(), 2u);
  EXPECT_EQ(r.suites[0].name, "scaling"); // canonical order
  EXPECT_EQ(r.suites[1].name, "auxloss");
  o.suites = {"lemma1"};
  ASSERT_EQ(verify(o).suites.size(), 1u);
  EXPECT_EQ(verify(o).suites[0].name, "scaling");
  o.suites = {"bogus"};
  EXPECT_THROW(verify(o), std::invalid_argument);
}

TEST(SuiteResult, CountsAndKeepsWorst) {
  SuiteResult s;
  EXPECT_FALSE(s.passed()); // no checks yet
  s.expect(true, "fine", 1e-9);
  s.expect(false, "broken", 2.0);
  EXPECT_EQ(s.checks, 2);
  EXPECT_EQ(s.failures, 1);
  EXPECT_EQ(s.worst, 2.0);
  ASSERT_EQ(s.messages.size(), 1u);
  EXPECT_NE(s.messages[0].find("broken"), std::string::npos);
}
