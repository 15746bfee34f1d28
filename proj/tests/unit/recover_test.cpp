// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "cdistill/dataset.hpp"
#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/recover.hpp"
#include "testing.hpp"

namespace cdistill {
namespace {

const LabeledDataset& toy() {
  static const LabeledDataset d = generate_split(builtin_manifest("toy10"), "train");
  return d;
}

struct Committee {
  std::vector<Model> models;
  std::vector<CommitteeMember> members;
  PriorTable prior;

  explicit Committee(int n) {
    const auto ids = member_ids(std::vector<std::string>(n, "tiny-cnn"));
    for (int i = 0; i < n; ++i) models.push_back(build_backbone({"tiny-cnn", 10, 16, 16, 3}, 100 + i));
    for (int i = 0; i < n; ++i) {
      members.push_back({ids[i], &models[i], models[i].digest()});
      prior.entries[ids[i]] = 40.0 + i;
    }
    prior.dataset_id = "toy10";
  }
};

RecoverConfig quick_config() {
  RecoverConfig cfg;
  cfg.iterations = 4;
  cfg.voting.N = 2;
  return cfg;
}

TEST(Recover, MemberIdsSuffixDuplicatesOnly) {
  EXPECT_EQ(member_ids({"a", "b", "a"}), (std::vector<std::string>{"a@0", "b", "a@1"}));
  EXPECT_EQ(member_ids({"a"}), (std::vector<std::string>{"a"}));
}

TEST(Recover, RealPatchInitRecordsSameClassSources) {
  const SyntheticSet s = init_synthetic(toy(), 3, InitMode::RealPatch, 16, 16, 5);
  ASSERT_EQ(s.images.n(), 30);
  ASSERT_EQ(s.init_records.size(), 30u);
  for (const auto& r : s.init_records) {
    EXPECT_EQ(toy().labels[r.source_index], s.labels[r.slot]);
    EXPECT_GE(r.box.height * r.box.width, 16 * 16 / 2 - 16);
  }
  for (int i = 0; i < 30; ++i) EXPECT_EQ(s.labels[i], i % 10);
}

TEST(Recover, InsufficientDataForIpc) {
  try {
    init_synthetic(toy(), 21, InitMode::RealPatch, 16, 16, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
}

TEST(Recover, DistillIsDeterministicAndJobIndependent) {
  Committee c(3);
  const RecoverConfig cfg = quick_config();
  const SyntheticSet a = distill(toy(), c.members, &c.prior, 2, cfg, 1);
  const SyntheticSet b = distill(toy(), c.members, &c.prior, 2, cfg, 2);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  RecoverConfig other = cfg;
  other.seed = 1;
  EXPECT_NE(sha256_hex(distill(toy(), c.members, &c.prior, 2, other).images), sha256_hex(a.images));
}

TEST(Recover, SwitchPerIpcHoldsSubsetForTheRound) {
  Committee c(3);
  const RecoverConfig cfg = quick_config();
  const SyntheticSet s = distill(toy(), c.members, &c.prior, 3, cfg);
  ASSERT_EQ(s.provenance.size(), 3u);
  for (const auto& p : s.provenance) {
    ASSERT_EQ(p.members.size(), 2u);
    for (const auto& row : p.trace) {
      ASSERT_EQ(row.loss.per_member.size(), 2u);
      EXPECT_EQ(row.loss.per_member[0].member, p.members[0]);
      EXPECT_EQ(row.loss.per_member[1].member, p.members[1]);
    }
    EXPECT_NEAR(p.weights[0] + p.weights[1], 1.0, 1e-12);
    EXPECT_LT(p.weights[0], p.weights[1]);  // later members have larger alpha
  }
}

TEST(Recover, EqualVoterMatchesPriorWithEqualScores) {
  Committee c(3);
  for (auto& [k, v] : c.prior.entries) v = 50.0;
  RecoverConfig prior_cfg = quick_config();
  RecoverConfig equal_cfg = prior_cfg;
  equal_cfg.voting.voter_mode = VoterMode::Equal;
  const SyntheticSet a = distill(toy(), c.members, &c.prior, 2, prior_cfg);
  const SyntheticSet b = distill(toy(), c.members, &c.prior, 2, equal_cfg);
  for (std::size_t r = 0; r < a.provenance.size(); ++r) {
    EXPECT_EQ(a.provenance[r].subset, b.provenance[r].subset);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.provenance[r].weights[k], b.provenance[r].weights[k], 1e-15);
  }
}

TEST(Recover, SingleBackboneRunsWithoutVoting) {
  Committee c(1);
  RecoverConfig cfg = quick_config();
  cfg.voting.N = 5;  // ignored for a committee of one
  const SyntheticSet s = distill(toy(), c.members, nullptr, 1, cfg);
  EXPECT_EQ(s.provenance[0].weights, std::vector<Scalar>{1.0});
}

TEST(Recover, PriorVotingWithoutTableIsMissingPrior) {
  Committee c(2);
  try {
    distill(toy(), c.members, nullptr, 1, quick_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingPrior);
  }
}

// The statistic term of an untrained committee has a floor, so the total
// falls by a bit under half in this budget.
TEST(Recover, OptimizationLowersTheLoss) {
  Committee c(2);
  RecoverConfig cfg = quick_config();
  cfg.iterations = 40;
  cfg.augmentation.random_resized_crop = false;
  cfg.augmentation.horizontal_flip = false;
  const SyntheticSet s = distill(toy(), c.members, &c.prior, 1, cfg);
  const auto& trace = s.provenance[0].trace;
  EXPECT_LT(trace.back().loss.total, 0.6 * trace.front().loss.total);
}

TEST(Recover, ZeroIterationsKeepsTheInitialization) {
  Committee c(2);
  RecoverConfig cfg = quick_config();
  cfg.iterations = 0;
  cfg.init_mode = InitMode::GaussianNoise;
  const SyntheticSet s = distill(toy(), c.members, &c.prior, 2, cfg);
  const SyntheticSet init = init_synthetic(toy(), 2, InitMode::GaussianNoise, 16, 16, derive_seed(cfg.seed, "init"));
  EXPECT_EQ(s.images, init.images);
}

TEST(Recover, ExportLoadRoundTrip) {
  const testing::ScratchDir dir("syn");
  Committee c(2);
  const SyntheticSet s = distill(toy(), c.members, &c.prior, 2, quick_config());
  export_synthetic(s, dir / "set");
  EXPECT_TRUE(std::filesystem::exists(dir / "set/3/1.ppm"));
  const SyntheticSet back = load_synthetic(dir / "set");
  EXPECT_EQ(back.images, s.images);
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.ipc, 2);
  EXPECT_EQ(back.config_digest, s.config_digest);
  EXPECT_FALSE(loss_csv(s).empty());
}

TEST(Recover, ConfigDigestIgnoresSeed) {
  RecoverConfig a, b;
  b.seed = 99;
  EXPECT_EQ(recover_config_digest(a), recover_config_digest(b));
  b.lambda_bn = 0.02;
  EXPECT_NE(recover_config_digest(a), recover_config_digest(b));
}

TEST(ImageOps, AugmentBackwardIsTheAdjoint) {
  const Tensor x = testing::random_tensor({4, 3, 12, 12}, 1);
  const Tensor dy = testing::random_tensor({4, 3, 12, 12}, 2);
  Rng rng(3);
  const Augmented a = augment_batch(x, {}, rng);
  const Tensor dx = augment_backward(dy, a.records, x.shape());
  Scalar lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += a.images[i] * dy[i];
    rhs += x[i] * dx[i];
  }
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
}

TEST(ImageOps, CropBoxStaysInsideAndHonorsScale) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const CropBox b = sample_crop_box(rng, 32, 32, 0.5, 1.0);
    EXPECT_GE(b.top, 0);
    EXPECT_GE(b.left, 0);
    EXPECT_LE(b.top + b.height, 32);
    EXPECT_LE(b.left + b.width, 32);
  }
}

}  // namespace
}  // namespace cdistill
