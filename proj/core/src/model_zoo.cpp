// SPDX-License-Identifier: Apache-2.0
// Desk-scale backbone family. Widths and depths are reduced so every member
// trains on one CPU core, while each keeps its characteristic block type.
#include <cmath>
#include <functional>
#include <map>

#include "cdistill/error.hpp"
#include "cdistill/model.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

namespace {

using Kind = Pool2d::Kind;

void conv_bn(Sequential& s, int in, int out, int k, int stride, int groups = 1) {
  s.emplace<Conv2d>(in, out, k, stride, k / 2, groups);
  s.emplace<BatchNorm2d>(out);
}

void conv_bn_relu(Sequential& s, int in, int out, int k, int stride, int groups = 1, Scalar cap = 0) {
  conv_bn(s, in, out, k, stride, groups);
  s.emplace<ReLU>(cap);
}

struct Built {
  Sequential features;
  int feature_dim;
};

Built tiny_cnn(int c) {
  Sequential s;
  conv_bn_relu(s, c, 16, 3, 1);
  s.emplace<Pool2d>(Kind::Max);
  conv_bn_relu(s, 16, 32, 3, 1);
  s.emplace<Pool2d>(Kind::Max);
  conv_bn_relu(s, 32, 64, 3, 1);
  s.emplace<GlobalAvgPool>();
  return {std::move(s), 64};
}

LayerPtr basic_block(int in, int out, int stride) {
  Sequential main;
  conv_bn_relu(main, in, out, 3, stride);
  conv_bn(main, out, out, 3, 1);
  std::optional<Sequential> shortcut;
  if (stride != 1 || in != out) {
    shortcut.emplace();
    conv_bn(*shortcut, in, out, 1, stride);
  }
  return std::make_unique<Residual>(std::move(main), std::move(shortcut), true);
}

Built resnet18_like(int c) {
  Sequential s;
  conv_bn_relu(s, c, 16, 3, 1);
  const int widths[] = {16, 32, 64, 128};
  int in = 16;
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < 2; ++b) {
      s.add(basic_block(in, widths[stage], (stage > 0 && b == 0) ? 2 : 1));
      in = widths[stage];
    }
  }
  s.emplace<GlobalAvgPool>();
  return {std::move(s), in};
}

LayerPtr bottleneck(int in, int mid, int stride) {
  const int out = mid * 4;
  Sequential main;
  conv_bn_relu(main, in, mid, 1, 1);
  conv_bn_relu(main, mid, mid, 3, stride);
  conv_bn(main, mid, out, 1, 1);
  std::optional<Sequential> shortcut;
  if (stride != 1 || in != out) {
    shortcut.emplace();
    conv_bn(*shortcut, in, out, 1, stride);
  }
  return std::make_unique<Residual>(std::move(main), std::move(shortcut), true);
}

Built resnet50_like(int c) {
  Sequential s;
  conv_bn_relu(s, c, 16, 3, 1);
  const int mids[] = {8, 16, 32, 64};
  int in = 16;
  for (int stage = 0; stage < 4; ++stage) {
    s.add(bottleneck(in, mids[stage], stage > 0 ? 2 : 1));
    in = mids[stage] * 4;
  }
  s.emplace<GlobalAvgPool>();
  return {std::move(s), in};
}

// Pre-activation dense layer: x -> concat(x, conv3x3(relu(bn(conv1x1(relu(bn(x)))))))
LayerPtr dense_layer(int in, int growth) {
  Sequential body;
  body.emplace<BatchNorm2d>(in);
  body.emplace<ReLU>();
  body.emplace<Conv2d>(in, 4 * growth, 1, 1, 0);
  body.emplace<BatchNorm2d>(4 * growth);
  body.emplace<ReLU>();
  body.emplace<Conv2d>(4 * growth, growth, 3, 1, 1);
  return std::make_unique<Concat>(Concat::Branch{std::nullopt, 0, -1}, Concat::Branch{std::move(body), 0, -1});
}

Built densenet121_like(int c) {
  const int growth = 8;
  Sequential s;
  s.emplace<Conv2d>(c, 2 * growth, 3, 1, 1);
  int ch = 2 * growth;
  const int layers_per_block[] = {3, 3, 3};
  for (int b = 0; b < 3; ++b) {
    for (int l = 0; l < layers_per_block[b]; ++l) {
      s.add(dense_layer(ch, growth));
      ch += growth;
    }
    if (b < 2) {
      s.emplace<BatchNorm2d>(ch);
      s.emplace<ReLU>();
      s.emplace<Conv2d>(ch, ch / 2, 1, 1, 0);
      s.emplace<Pool2d>(Kind::Average);
      ch /= 2;
    }
  }
  s.emplace<BatchNorm2d>(ch);
  s.emplace<ReLU>();
  s.emplace<GlobalAvgPool>();
  return {std::move(s), ch};
}

LayerPtr inverted_residual(int in, int out, int stride, int expand) {
  const int hidden = in * expand;
  Sequential main;
  if (expand != 1) conv_bn_relu(main, in, hidden, 1, 1, 1, 6.0);
  conv_bn_relu(main, hidden, hidden, 3, stride, hidden, 6.0);
  conv_bn(main, hidden, out, 1, 1);
  if (stride == 1 && in == out) {
    return std::make_unique<Residual>(std::move(main), std::nullopt, false);
  }
  return std::make_unique<Sequential>(std::move(main));
}

Built mobilenetv2_like(int c) {
  Sequential s;
  conv_bn_relu(s, c, 16, 3, 1, 1, 6.0);
  struct Row {
    int t, c, n, s;
  };
  const Row rows[] = {{1, 16, 1, 1}, {4, 24, 2, 2}, {4, 32, 2, 2}, {4, 64, 1, 2}};
  int in = 16;
  for (const auto& r : rows) {
    for (int i = 0; i < r.n; ++i) {
      s.add(inverted_residual(in, r.c, i == 0 ? r.s : 1, r.t));
      in = r.c;
    }
  }
  conv_bn_relu(s, in, 128, 1, 1, 1, 6.0);
  s.emplace<GlobalAvgPool>();
  return {std::move(s), 128};
}

LayerPtr shuffle_unit(int in, int out, int stride) {
  std::unique_ptr<Concat> unit;
  if (stride == 1) {
    const int half = in / 2;
    Sequential right;
    conv_bn_relu(right, half, half, 1, 1);
    conv_bn(right, half, half, 3, 1, half);
    conv_bn_relu(right, half, half, 1, 1);
    unit = std::make_unique<Concat>(Concat::Branch{std::nullopt, 0, half},
                                    Concat::Branch{std::move(right), half, in});
  } else {
    const int half = out / 2;
    Sequential left;
    conv_bn(left, in, in, 3, 2, in);
    conv_bn_relu(left, in, half, 1, 1);
    Sequential right;
    conv_bn_relu(right, in, half, 1, 1);
    conv_bn(right, half, half, 3, 2, half);
    conv_bn_relu(right, half, half, 1, 1);
    unit = std::make_unique<Concat>(Concat::Branch{std::move(left), 0, -1},
                                    Concat::Branch{std::move(right), 0, -1});
  }
  Sequential s;
  s.add(std::move(unit));
  s.emplace<ChannelShuffle>(2);
  return std::make_unique<Sequential>(std::move(s));
}

Built shufflenetv2_like(int c) {
  Sequential s;
  conv_bn_relu(s, c, 24, 3, 1);
  const int widths[] = {48, 96, 192};
  int in = 24;
  for (int w : widths) {
    s.add(shuffle_unit(in, w, 2));
    s.add(shuffle_unit(w, w, 1));
    in = w;
  }
  conv_bn_relu(s, in, 256, 1, 1);
  s.emplace<GlobalAvgPool>();
  return {std::move(s), 256};
}

const std::map<std::string, std::function<Built(int)>>& registry() {
  static const std::map<std::string, std::function<Built(int)>> r = {
      {"tiny-cnn", tiny_cnn},
      {"resnet18-like", resnet18_like},
      {"resnet50-like", resnet50_like},
      {"densenet121-like", densenet121_like},
      {"mobilenetv2-like", mobilenetv2_like},
      {"shufflenetv2-like", shufflenetv2_like},
  };
  return r;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void initialize(Model& model, std::uint64_t seed) {
  Rng rng = make_rng(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& p : model.parameters()) {
    Tensor& t = *p.value;
    if (ends_with(p.name, ".gamma")) {
      t.fill(1.0);
    } else if (ends_with(p.name, ".beta") || ends_with(p.name, ".bias")) {
      t.fill(0.0);
    } else {
      // He-normal on fan-in for convolutions, variance 1/fan_in for the head.
      const double fan_in = double(t.shape().sample_size());
      const double gain = p.name.rfind("head.", 0) == 0 ? 1.0 : 2.0;
      const double std = std::sqrt(gain / fan_in);
      for (auto& v : t.values()) v = std * normal(rng);
    }
  }
}

}  // namespace

std::vector<std::string> registered_architectures() {
  std::vector<std::string> out;
  for (const auto& [name, _] : registry()) out.push_back(name);
  return out;
}

Model build_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  const auto& r = registry();
  const auto it = r.find(spec.arch_id);
  if (it == r.end()) fail(ErrorKind::UnknownArchitecture, "no architecture named '" + spec.arch_id + "'");
  require(spec.num_classes > 0 && spec.channels > 0 && spec.height > 0 && spec.width > 0,
          ErrorKind::ShapeError, "invalid backbone spec " + spec.str());
  Built b = it->second(spec.channels);
  const Shape out = b.features.output_shape(Shape{1, spec.channels, spec.height, spec.width});
  require(out.c == b.feature_dim && out.h == 1 && out.w == 1, ErrorKind::ShapeError,
          "feature extractor output " + out.str());
  Model model(spec, std::move(b.features), Linear(b.feature_dim, spec.num_classes));
  initialize(model, seed);
  return model;
}

}  // namespace cdistill
