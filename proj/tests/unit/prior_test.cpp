// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cdistill/error.hpp"
#include "cdistill/prior.hpp"
#include "cdistill/prior_assign.hpp"
#include "testing.hpp"

namespace cdistill {
namespace {

const std::string kFixture = std::string(CDISTILL_SOURCE_DIR) + "/data/fixtures/reference_priors.json";

TEST(Prior, ReferenceFixtureCifar100Column) {
  const PriorTable t = load_reference_priors(kFixture, "cifar100");
  EXPECT_EQ(t.reference_ipc, 50);
  EXPECT_DOUBLE_EQ(lookup_alpha(t, "resnet18-like"), 64.00);
  EXPECT_DOUBLE_EQ(lookup_alpha(t, "shufflenetv2-like"), 51.62);
  EXPECT_EQ(t.entries.size(), 5u);
}

TEST(Prior, HighResolutionColumnsUseIpcTen) {
  EXPECT_EQ(load_reference_priors(kFixture, "imagenet1k").reference_ipc, 10);
  EXPECT_EQ(load_reference_priors(kFixture, "tiny-imagenet").reference_ipc, 10);
}

TEST(Prior, MissingEntryAndColumn) {
  const PriorTable t = load_reference_priors(kFixture, "cifar10");
  try {
    lookup_alpha(t, "vit-like");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingPrior);
  }
  try {
    load_reference_priors(kFixture, "svhn");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingPrior);
  }
}

TEST(Prior, SaveLoadRoundTrip) {
  const testing::ScratchDir dir("prior");
  PriorTable t;
  t.dataset_id = "toy10";
  t.reference_ipc = 4;
  t.evaluation_arch = "tiny-cnn";
  t.entries = {{"tiny-cnn", 41.25}, {"tiny-cnn@1", 39.5}};
  t.provenance = {{"tiny-cnn", "abc"}, {"tiny-cnn@1", "def"}};
  save_prior(t, dir / "p.prior");
  EXPECT_EQ(load_prior(dir / "p.prior"), t);
}

TEST(Prior, OutOfRangeScoreIsRejectedOnLoad) {
  Json j = prior_to_json(PriorTable{"toy10", 4, "tiny-cnn", {{"a", 101.0}}, {}});
  try {
    prior_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidScore);
  }
}

// Stubbed stages: the score is a pure function of the member, so the table
// is fully predictable and the seeds each member sees can be checked.
TEST(PriorAssign, UsesInjectedStagesPerMember) {
  const Model a = testing::tiny_bn_net(1);
  const Model b = testing::tiny_bn_net(2);
  const std::vector<CommitteeMember> committee{{"a", &a, "da"}, {"b", &b, "db"}};
  std::vector<std::uint64_t> distill_seeds;
  PriorStages stages;
  stages.config_digest = "cfg";
  stages.distill = [&](const CommitteeMember& m, int ipc, std::uint64_t seed) {
    distill_seeds.push_back(seed);
    SyntheticSet s;
    s.ipc = ipc;
    s.dataset_id = m.member_id;
    return s;
  };
  stages.evaluate = [](const SyntheticSet& s, Model&, std::uint64_t) { return s.dataset_id == "a" ? 60.0 : 45.0; };
  const PriorTable t = assign_prior_performance(committee, "toy10", 3, "tiny-cnn", 9, stages);
  EXPECT_EQ(t.entries.at("a"), 60.0);
  EXPECT_EQ(t.entries.at("b"), 45.0);
  EXPECT_EQ(t.reference_ipc, 3);
  ASSERT_EQ(distill_seeds.size(), 2u);
  EXPECT_EQ(distill_seeds[0], distill_seeds[1]);
  EXPECT_NE(t.provenance.at("a"), t.provenance.at("b"));

  const PriorTable again = assign_prior_performance(committee, "toy10", 3, "tiny-cnn", 9, stages);
  EXPECT_EQ(again, t);
}

TEST(PriorAssign, MissingModelIsIncompleteCommittee) {
  const std::vector<CommitteeMember> committee{{"a", nullptr, ""}};
  try {
    assign_prior_performance(committee, "toy10", 3, "tiny-cnn", 0, PriorStages{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IncompleteCommittee);
  }
}

}  // namespace
}  // namespace cdistill
