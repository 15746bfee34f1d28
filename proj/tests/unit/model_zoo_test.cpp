// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "cdistill/checkpoint.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/losses.hpp"
#include "cdistill/model.hpp"
#include "testing.hpp"

namespace cdistill {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_tensor;

TEST(ModelZoo, EveryArchitectureProducesLogits) {
  const auto archs = registered_architectures();
  ASSERT_GE(archs.size(), 6u);
  for (const auto& arch : archs) {
    const Model m = build_backbone({arch, 10, 16, 16, 3}, 7);
    ForwardPass pass;
    const Tensor y = m.forward(random_tensor({2, 3, 16, 16}, 1), pass);
    EXPECT_EQ(y.shape(), (Shape{2, 10, 1, 1})) << arch;
    EXPECT_TRUE(y.all_finite()) << arch;
    EXPECT_GE(m.num_norm_layers(), 3u) << arch;
  }
}

TEST(ModelZoo, BuildIsDeterministicInSeed) {
  const BackboneSpec spec{"resnet18-like", 10, 16, 16, 3};
  EXPECT_EQ(build_backbone(spec, 3).digest(), build_backbone(spec, 3).digest());
  EXPECT_NE(build_backbone(spec, 3).digest(), build_backbone(spec, 4).digest());
}

TEST(ModelZoo, UnknownArchitectureIsRejected) {
  try {
    build_backbone({"vgg-imaginary", 10, 32, 32, 3}, 0);
    FAIL() << "expected UnknownArchitecture";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownArchitecture);
  }
}

TEST(ModelZoo, ForwardDoesNotMutateModel) {
  const Model m = build_backbone({"tiny-cnn", 10, 16, 16, 3}, 1);
  const std::string before = m.digest();
  ForwardPass pass;
  pass.mode = NormMode::Batch;
  pass.record = true;
  const Tensor x = random_tensor({4, 3, 16, 16}, 2);
  const Tensor y = m.forward(x, pass);
  Gradients g = m.make_gradients();
  m.backward(Tensor(y.shape(), 1.0), pass, &g);
  EXPECT_EQ(m.digest(), before);
  EXPECT_EQ(pass.capture.layers.size(), m.num_norm_layers());
}

// Input gradient of every architecture's cross-entropy against central
// differences, checked on a handful of pixels.
TEST(ModelZoo, InputGradientMatchesFiniteDifferences) {
  for (const auto& arch : registered_architectures()) {
    const Model m = build_backbone({arch, 4, 8, 8, 3}, 11);
    const Tensor x = random_tensor({3, 3, 8, 8}, 5);
    const std::vector<int> y{0, 2, 3};
    auto loss = [&](const Tensor& in) {
      ForwardPass p;
      p.mode = NormMode::Batch;
      return cross_entropy(m.forward(in, p), y).loss;
    };
    ForwardPass pass;
    pass.mode = NormMode::Batch;
    pass.record = true;
    const LossAndGrad lg = cross_entropy(m.forward(x, pass), y);
    const Tensor dx = m.backward(lg.grad, pass, nullptr);

    Tensor probe = x;
    Scalar worst = 0;
    for (std::size_t i = 0; i < x.size(); i += 37) {
      const Scalar h = 1e-6;
      probe[i] = x[i] + h;
      const Scalar up = loss(probe);
      probe[i] = x[i] - h;
      const Scalar down = loss(probe);
      probe[i] = x[i];
      const Scalar fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - dx[i]) / std::max({std::abs(fd), std::abs(dx[i]), 1e-7}));
    }
    EXPECT_LT(worst, 1e-4) << arch;
  }
}

TEST(ModelZoo, ParameterGradientMatchesFiniteDifferences) {
  Model m = testing::tiny_bn_net(3);
  const Tensor x = random_tensor({4, 3, 6, 6}, 9);
  const std::vector<int> y{0, 1, 2, 1};
  ForwardPass pass;
  pass.mode = NormMode::Batch;
  pass.record = true;
  const LossAndGrad lg = cross_entropy(m.forward(x, pass), y);
  Gradients g = m.make_gradients();
  m.backward(lg.grad, pass, &g);

  const auto& params = m.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = *params[k].value;
    const Tensor w0 = w;
    auto f = [&](const Tensor& v) {
      w = v;
      ForwardPass p;
      p.mode = NormMode::Batch;
      return cross_entropy(m.forward(x, p), y).loss;
    };
    const Tensor fd = numeric_gradient(f, w0);
    w = w0;
    EXPECT_LT(max_relative_error(g.slots[k], fd), 1e-4) << params[k].name;
  }
}

TEST(ModelZoo, RunningModeUsesStoredStatistics) {
  Model m = testing::tiny_bn_net(4);
  const Tensor x = random_tensor({1, 3, 6, 6}, 1);
  ForwardPass a;
  const Tensor before = m.forward(x, a);
  BNStatistics s = m.running_stats();
  for (auto& l : s.layers)
    for (auto& v : l.mean) v += 0.25;
  m.set_running_stats(s);
  ForwardPass b;
  EXPECT_GT(max_abs_diff(before, m.forward(x, b)), 1e-6);
}

TEST(ModelZoo, NoNormalizationLayersIsReported) {
  Sequential f;
  f.emplace<Conv2d>(3, 4, 3, 1, 1);
  f.emplace<GlobalAvgPool>();
  const Model m({"plain", 2, 4, 4, 3}, std::move(f), Linear(4, 2));
  try {
    read_running_stats(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoNormalizationLayers);
  }
}

TEST(ModelZoo, ShapeErrorOnWrongChannels) {
  const Model m = build_backbone({"tiny-cnn", 10, 16, 16, 3}, 1);
  ForwardPass pass;
  try {
    m.forward(Tensor(1, 1, 16, 16), pass);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeError);
  }
}

TEST(Checkpoint, RoundTripPreservesDigestAndMeta) {
  const testing::ScratchDir dir("ckpt");
  const Model m = build_backbone({"mobilenetv2-like", 10, 16, 16, 3}, 21);
  save_checkpoint(m, dir / "m.ckpt", {{"note", "x"}});
  Json meta;
  const Model back = load_checkpoint(dir / "m.ckpt", &meta);
  EXPECT_EQ(back.digest(), m.digest());
  EXPECT_EQ(back.spec(), m.spec());
  EXPECT_EQ(meta.at("note"), "x");
}

TEST(Checkpoint, CorruptFileIsAFormatError) {
  const testing::ScratchDir dir("ckpt-bad");
  const Model m = build_backbone({"tiny-cnn", 10, 16, 16, 3}, 1);
  save_checkpoint(m, dir / "m.ckpt");
  std::string bytes = read_file(dir / "m.ckpt");
  bytes[0] = 'X';
  atomic_write(dir / "m.ckpt", bytes);
  try {
    load_checkpoint(dir / "m.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::FormatError);
  }
}

}  // namespace
}  // namespace cdistill
