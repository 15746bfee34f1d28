// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cdistill/config.hpp"
#include "cdistill/dataset.hpp"
#include "cdistill/error.hpp"
#include "cdistill/squeeze.hpp"

namespace cdistill {
namespace {

const LabeledDataset& toy_train() {
  static const LabeledDataset d = generate_split(builtin_manifest("toy10"), "train");
  return d;
}
const LabeledDataset& toy_test() {
  static const LabeledDataset d = generate_split(builtin_manifest("toy10"), "test");
  return d;
}

TEST(Dataset, ProceduralSplitsAreStableAndDisjointInSeed) {
  const DatasetManifest m = builtin_manifest("toy10");
  const LabeledDataset a = generate_split(m, "train");
  EXPECT_EQ(a.size(), 200);
  EXPECT_EQ(split_digest(a), split_digest(generate_split(m, "train")));
  EXPECT_NE(split_digest(a), split_digest(generate_split(m, "test")));
  for (int c = 0; c < 10; ++c) EXPECT_EQ(a.indices_of_class(c).size(), 20u);
}

TEST(Dataset, UnknownBuiltinIsAConfigError) {
  try {
    builtin_manifest("cifar10");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
}

TEST(Squeeze, TinyCnnLearnsToySet) {
  const SqueezeConfig cfg = squeeze_preset("toy10");
  const TrainedTeacher t = pretrain({"tiny-cnn", 10, 16, 16, 3}, toy_train(), toy_test(), cfg);
  EXPECT_GT(t.train_accuracy, 90.0);
  EXPECT_GT(t.test_accuracy, 30.0);  // chance is 10
  ASSERT_EQ(t.epoch_loss.size(), static_cast<std::size_t>(cfg.epochs));
  EXPECT_LT(t.epoch_loss.back(), t.epoch_loss.front());
}

TEST(Squeeze, TrainingIsDeterministic) {
  SqueezeConfig cfg = squeeze_preset("toy10");
  cfg.epochs = 2;
  const BackboneSpec spec{"tiny-cnn", 10, 16, 16, 3};
  EXPECT_EQ(pretrain(spec, toy_train(), {}, cfg).model.digest(), pretrain(spec, toy_train(), {}, cfg).model.digest());
}

TEST(Squeeze, RunningStatisticsMoveDuringTraining) {
  SqueezeConfig cfg = squeeze_preset("toy10");
  cfg.epochs = 1;
  const TrainedTeacher t = pretrain({"tiny-cnn", 10, 16, 16, 3}, toy_train(), {}, cfg);
  const BNStatistics s = read_running_stats(t.model);
  bool moved = false;
  for (const auto& l : s.layers)
    for (double v : l.mean) moved |= v != 0.0;
  EXPECT_TRUE(moved);
}

TEST(Squeeze, TeacherDigestBindsSeedAndData) {
  const BackboneSpec spec{"tiny-cnn", 10, 16, 16, 3};
  SqueezeConfig a;
  SqueezeConfig b;
  b.seed = 1;
  const std::string d = split_digest(toy_train());
  EXPECT_NE(teacher_digest(spec, a, d), teacher_digest(spec, b, d));
  EXPECT_NE(teacher_digest(spec, a, d), teacher_digest(spec, a, split_digest(toy_test())));
  EXPECT_EQ(teacher_digest(spec, a, d), teacher_digest(spec, a, d));
}

TEST(Squeeze, InvalidInputs) {
  SqueezeConfig cfg;
  cfg.epochs = 0;
  try {
    pretrain({"tiny-cnn", 10, 16, 16, 3}, toy_train(), {}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
  try {
    pretrain({"tiny-cnn", 5, 16, 16, 3}, toy_train(), {}, SqueezeConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LabelError);
  }
  try {
    pretrain({"tiny-cnn", 10, 16, 16, 3}, LabeledDataset{}, {}, SqueezeConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

}  // namespace
}  // namespace cdistill
