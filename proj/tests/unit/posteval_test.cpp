// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "cdistill/config.hpp"
#include "cdistill/error.hpp"
#include "cdistill/losses.hpp"
#include "cdistill/posteval.hpp"
#include "cdistill/squeeze.hpp"
#include "testing.hpp"

namespace cdistill {
namespace {

using testing::random_tensor;

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_EQ(cosine_lr(0, 100, 0.01, 0.0), 0.01);
  EXPECT_EQ(cosine_lr(100, 100, 0.01, 0.0), 0.0);
  EXPECT_NEAR(cosine_lr(50, 100, 0.01, 0.0), 0.005, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 0.01, 0.002), 0.006, 1e-18);
}

TEST(CosineLr, CyclesAndStretch) {
  // Two cycles: back at the top halfway through, at the bottom at the end.
  EXPECT_NEAR(cosine_lr(50, 100, 1.0, 0.0, 2, CosineMode::Cycles), 1.0, 1e-15);
  EXPECT_NEAR(cosine_lr(25, 100, 1.0, 0.0, 2, CosineMode::Cycles), 0.5, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 1.0, 0.0, 2, CosineMode::Cycles), 0.0, 1e-15);
  // Stretched by two: the run ends at the half-cosine midpoint.
  EXPECT_NEAR(cosine_lr(100, 100, 1.0, 0.0, 2, CosineMode::Stretch), 0.5, 1e-15);
}

TEST(CosineLr, OutOfRange) {
  try {
    cosine_lr(101, 100, 1.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RangeError);
  }
}

TEST(KdLoss, OneHotTeacherAgainstUniformStudentIsLn2) {
  const Tensor student(Shape{1, 2, 1, 1}, std::vector<Scalar>{0.0, 0.0});
  const Tensor teacher(Shape{1, 2, 1, 1}, std::vector<Scalar>{0.0, -1000.0});
  EXPECT_NEAR(kd_loss(student, teacher, 1.0).loss, std::numbers::ln2, 1e-9);
}

TEST(KdLoss, ZeroForIdenticalLogitsAndGradientMatches) {
  const Tensor s = random_tensor({3, 5, 1, 1}, 1);
  EXPECT_NEAR(kd_loss(s, s, 2.0).loss, 0.0, 1e-12);
  const Tensor t = random_tensor({3, 5, 1, 1}, 2);
  for (Scalar tau : {1.0, 4.0}) {
    const LossAndGrad lg = kd_loss(s, t, tau);
    const Tensor fd = testing::numeric_gradient([&](const Tensor& v) { return kd_loss(v, t, tau).loss; }, s);
    EXPECT_LT(testing::max_relative_error(lg.grad, fd), 1e-6);
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  try {
    cross_entropy(Tensor(1, 3, 1, 1), std::vector<int>{3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LabelError);
  }
}

TEST(CutMix, LambdaIsExactAreaFraction) {
  const Tensor x = random_tensor({4, 3, 10, 10}, 3);
  const CutMixResult r = apply_cutmix(x, {1, 0, 3, 2}, {2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(r.lambda, 1.0 - 20.0 / 100.0);
  EXPECT_EQ(r.images.at(0, 1, 3, 4), x.at(1, 1, 3, 4));
  EXPECT_EQ(r.images.at(0, 1, 0, 0), x.at(0, 1, 0, 0));
}

TEST(CutMix, RandomPartnersArePermutation) {
  const Tensor x = random_tensor({6, 3, 8, 8}, 1);
  Rng rng(4);
  const CutMixResult r = cutmix(x, rng, 1.0);
  std::set<int> p(r.partner.begin(), r.partner.end());
  EXPECT_EQ(p.size(), 6u);
  EXPECT_NEAR(r.lambda, 1.0 - double(r.box.height * r.box.width) / 64.0, 1e-15);
  try {
    Rng g(1);
    cutmix(random_tensor({1, 3, 8, 8}, 1), g, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateBatch);
  }
}

TEST(PostEval, BatchSizeRule) {
  PostEvalConfig cfg;
  EXPECT_EQ(cfg.effective_batch_size(10), 10);
  EXPECT_EQ(cfg.effective_batch_size(16), 10);
  EXPECT_EQ(cfg.effective_batch_size(17), 16);
  cfg.batch_size = 32;
  EXPECT_EQ(cfg.effective_batch_size(10), 32);
}

TEST(PostEval, TraceCsvRoundTrip) {
  TrainingTrace t;
  t.per_epoch.push_back({0, 12.5, std::nan(""), 1.25, 0.001});
  t.per_epoch.push_back({1, 20.0, 33.3, 1.0, 0.0005});
  const TrainingTrace back = TrainingTrace::from_csv(t.to_csv());
  ASSERT_EQ(back.per_epoch.size(), 2u);
  EXPECT_TRUE(std::isnan(back.per_epoch[0].test_top1));
  EXPECT_EQ(back.per_epoch[1].test_top1, 33.3);
  EXPECT_EQ(back.per_epoch[1].lr, 0.0005);
}

class StudentTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const DatasetManifest m = builtin_manifest("toy10");
    train_ = new LabeledDataset(generate_split(m, "train"));
    test_ = new LabeledDataset(generate_split(m, "test"));
    SqueezeConfig s = squeeze_preset("toy10");
    s.epochs = 10;
    teacher_ = new Model(pretrain({"tiny-cnn", 10, 16, 16, 3}, *train_, {}, s).model);
    set_ = new SyntheticSet(init_synthetic(*train_, 3, InitMode::RealPatch, 16, 16, 1));
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete teacher_;
    delete set_;
  }
  static PostEvalConfig config() {
    PostEvalConfig cfg;
    cfg.epochs = 6;
    cfg.learning_rate = 0.01;
    cfg.test_tail = 2;
    return cfg;
  }

  static inline LabeledDataset* train_ = nullptr;
  static inline LabeledDataset* test_ = nullptr;
  static inline Model* teacher_ = nullptr;
  static inline SyntheticSet* set_ = nullptr;
};

TEST_F(StudentTraining, DeterministicAndTeacherUntouched) {
  const std::string before = teacher_->digest();
  const PostEvalResult a = train_student(*set_, *teacher_, *test_, config());
  const PostEvalResult b = train_student(*set_, *teacher_, *test_, config());
  EXPECT_EQ(a.test_top1, b.test_top1);
  EXPECT_EQ(a.trace.to_csv(), b.trace.to_csv());
  EXPECT_EQ(teacher_->digest(), before);
  ASSERT_EQ(a.trace.per_epoch.size(), 6u);
  EXPECT_TRUE(std::isnan(a.trace.per_epoch[3].test_top1));
  EXPECT_FALSE(std::isnan(a.trace.per_epoch[4].test_top1));
  EXPECT_EQ(a.test_top1, a.trace.per_epoch.back().test_top1);
}

TEST_F(StudentTraining, ObserverSeesEveryBatchAndFreshLabels) {
  int calls = 0;
  std::set<std::string> image_digests;
  const BatchObserver obs = [&](int, int, const std::string& images, const std::string&) {
    ++calls;
    image_digests.insert(images);
  };
  train_student(*set_, *teacher_, *test_, config(), obs);
  // 30 images at batch 16: one full batch and one of 14 per epoch.
  EXPECT_EQ(calls, 12);
  EXPECT_EQ(image_digests.size(), 12u);
}

TEST_F(StudentTraining, LabelModesDiffer) {
  PostEvalConfig running = config();
  running.labels.mode = LabelMode::Running;
  const auto a = train_student(*set_, *teacher_, *test_, config());
  const auto b = train_student(*set_, *teacher_, *test_, running);
  EXPECT_NE(a.trace.to_csv(), b.trace.to_csv());
}

}  // namespace
}  // namespace cdistill
