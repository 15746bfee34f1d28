// SPDX-License-Identifier: Apache-2.0
#include "cdistill/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

namespace fs = std::filesystem;

Json manifest_to_json(const DatasetManifest& m) {
  Json j;
  j["dataset_id"] = m.dataset_id;
  j["num_classes"] = m.num_classes;
  j["channels"] = m.channels;
  j["resolution"] = {m.height, m.width};
  j["normalization"] = {{"mean", m.mean}, {"std", m.std}};
  j["reference_ipc"] = m.reference_ipc;
  Json src;
  src["kind"] = m.source;
  src["seed"] = m.seed;
  src["train_per_class"] = m.train_per_class;
  src["test_per_class"] = m.test_per_class;
  if (m.source == "files") {
    src["train_file"] = m.train_file;
    src["test_file"] = m.test_file;
    src["train_sha256"] = m.train_sha256;
    src["test_sha256"] = m.test_sha256;
  }
  j["source"] = src;
  return j;
}

DatasetManifest manifest_from_json(const Json& j) {
  try {
    DatasetManifest m;
    m.dataset_id = j.at("dataset_id");
    m.num_classes = j.at("num_classes");
    m.channels = j.at("channels");
    m.height = j.at("resolution").at(0);
    m.width = j.at("resolution").at(1);
    m.mean = j.at("normalization").at("mean").get<std::vector<double>>();
    m.std = j.at("normalization").at("std").get<std::vector<double>>();
    m.reference_ipc = j.at("reference_ipc");
    const Json& s = j.at("source");
    m.source = s.at("kind");
    m.seed = s.value("seed", std::uint64_t{0});
    m.train_per_class = s.value("train_per_class", 0);
    m.test_per_class = s.value("test_per_class", 0);
    m.train_file = s.value("train_file", "");
    m.test_file = s.value("test_file", "");
    m.train_sha256 = s.value("train_sha256", "");
    m.test_sha256 = s.value("test_sha256", "");
    require(m.num_classes > 0 && m.channels > 0 && m.height > 0 && m.width > 0 && m.reference_ipc > 0,
            ErrorKind::InvalidConfig, "manifest " + m.dataset_id + " has non-positive extents");
    require(static_cast<int>(m.mean.size()) == m.channels && static_cast<int>(m.std.size()) == m.channels,
            ErrorKind::InvalidConfig, "normalization constants must have one entry per channel");
    for (double s_ : m.std) require(s_ > 0, ErrorKind::InvalidConfig, "normalization std must be positive");
    require(m.source == "procedural" || m.source == "files", ErrorKind::InvalidConfig,
            "unknown dataset source '" + m.source + "'");
    return m;
  } catch (const Json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("dataset manifest: ") + e.what());
  }
}

DatasetManifest load_manifest(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::InvalidConfig, path + ": " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.base_dir = fs::path(path).parent_path().string();
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  atomic_write(path, manifest_to_json(m).dump(2) + "\n");
}

DatasetManifest builtin_manifest(const std::string& dataset_id) {
  DatasetManifest m;
  m.dataset_id = dataset_id;
  if (dataset_id == "toy10") {
    m.height = m.width = 16;
    m.train_per_class = 20;
    m.test_per_class = 20;
    m.seed = 101;
  } else if (dataset_id == "shapes10") {
    m.height = m.width = 32;
    m.train_per_class = 500;
    m.test_per_class = 100;
    m.seed = 202;
  } else {
    fail(ErrorKind::InvalidConfig, "no bundled dataset named '" + dataset_id + "'");
  }
  m.reference_ipc = 50;
  return m;
}

std::vector<int> LabeledDataset::indices_of_class(int cls) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    if (labels[i] == cls) out.push_back(i);
  return out;
}

namespace {

// Signed distance (pixels) to one of five shape families centered at the origin.
double shape_distance(int kind, double u, double v, double r, double theta) {
  const double cu = std::cos(theta) * u + std::sin(theta) * v;
  const double cv = -std::sin(theta) * u + std::cos(theta) * v;
  switch (kind) {
    case 0:
      return std::hypot(u, v) - r;
    case 1:
      return std::max(std::abs(cu), std::abs(cv)) - 0.8 * r;
    case 2: {
      double d = -1e9;
      for (int k = 0; k < 3; ++k) {
        const double a = theta + 2 * std::numbers::pi * k / 3;
        d = std::max(d, u * std::cos(a) + v * std::sin(a));
      }
      return d - 0.5 * r;
    }
    case 3:
      return std::min(std::max(std::abs(cu) - r, std::abs(cv) - r / 3),
                      std::max(std::abs(cu) - r / 3, std::abs(cv) - r));
    default:
      return std::abs(std::hypot(u, v) - 0.7 * r) - 0.28 * r;
  }
}

void paint(std::vector<double>& img, int H, int W, int kind, double cx, double cy, double r, double theta,
           const double color[3], double opacity) {
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double d = shape_distance(kind, x + 0.5 - cx, y + 0.5 - cy, r, theta);
      const double a = std::clamp(0.5 - d, 0.0, 1.0) * opacity;
      if (a <= 0) continue;
      for (int c = 0; c < 3; ++c) {
        double& p = img[c * plane + y * W + x];
        p = (1 - a) * p + a * color[c];
      }
    }
  }
}

// One [0, 1] image of class `cls`: a colored shape (family = cls % 5, palette
// = cls / 5 mod 2) on a gradient background with a faint distractor and noise.
std::vector<double> render(int cls, int H, int W, Rng& rng) {
  static const double palettes[2][3] = {{0.85, 0.35, 0.2}, {0.2, 0.45, 0.85}};
  std::normal_distribution<double> noise(0.0, 0.04);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> img(3 * plane);
  double bg[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = uniform_real(rng, 0.3, 0.7);
    gx[c] = uniform_real(rng, -0.2, 0.2);
    gy[c] = uniform_real(rng, -0.2, 0.2);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        img[c * plane + y * W + x] = bg[c] + gx[c] * (double(x) / W - 0.5) + gy[c] * (double(y) / H - 0.5);

  const double S = std::min(H, W);
  if (uniform_real(rng) < 0.5) {
    const int kind = uniform_int(rng, 0, 4);
    const double gray = uniform_real(rng, 0.2, 0.8);
    const double col[3] = {gray, gray, gray};
    paint(img, H, W, kind, uniform_real(rng, 0.1, 0.9) * W, uniform_real(rng, 0.1, 0.9) * H,
          uniform_real(rng, 0.08, 0.15) * S, uniform_real(rng, 0, 2 * std::numbers::pi), col, 0.6);
  }
  const int kind = cls % 5;
  const double* base = palettes[(cls / 5) % 2];
  double col[3];
  for (int c = 0; c < 3; ++c) col[c] = std::clamp(base[c] + uniform_real(rng, -0.15, 0.15), 0.0, 1.0);
  paint(img, H, W, kind, uniform_real(rng, 0.3, 0.7) * W, uniform_real(rng, 0.3, 0.7) * H,
        uniform_real(rng, 0.18, 0.32) * S, uniform_real(rng, 0, 2 * std::numbers::pi), col, 1.0);
  for (auto& p : img) p = std::clamp(p + noise(rng), 0.0, 1.0);
  return img;
}

LabeledDataset from_unit(const DatasetManifest& m, const std::string& split, const Tensor& unit,
                         std::vector<int> labels) {
  LabeledDataset d;
  d.dataset_id = m.dataset_id;
  d.split = split;
  d.num_classes = m.num_classes;
  d.mean = m.mean;
  d.std = m.std;
  d.images = unit;
  const std::size_t plane = unit.shape().plane();
  for (int n = 0; n < unit.n(); ++n)
    for (int c = 0; c < unit.c(); ++c) {
      Scalar* p = d.images.data() + d.images.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m.mean[c]) / m.std[c];
    }
  for (int y : labels)
    require(y >= 0 && y < m.num_classes, ErrorKind::LabelError, "label outside class range in " + split);
  d.labels = std::move(labels);
  return d;
}

Tensor unit_split(const DatasetManifest& m, const std::string& split, std::vector<int>& labels) {
  require(m.channels == 3, ErrorKind::InvalidConfig, "procedural datasets are RGB");
  require(split == "train" || split == "test", ErrorKind::InvalidConfig, "unknown split " + split);
  const int per = split == "train" ? m.train_per_class : m.test_per_class;
  require(per > 0, ErrorKind::InvalidConfig, "split " + split + " has no samples per class");
  const int N = per * m.num_classes;
  Tensor out(Shape{N, 3, m.height, m.width});
  labels.assign(N, 0);
  // Samples are interleaved by class so any prefix stays class-balanced.
  for (int i = 0; i < per; ++i) {
    for (int cls = 0; cls < m.num_classes; ++cls) {
      const int n = i * m.num_classes + cls;
      Rng rng = make_rng(m.seed, split, static_cast<std::uint64_t>(n));
      const auto img = render(cls, m.height, m.width, rng);
      std::copy(img.begin(), img.end(), out.sample_ptr(n));
      labels[n] = cls;
    }
  }
  return out;
}

}  // namespace

LabeledDataset generate_split(const DatasetManifest& m, const std::string& split) {
  std::vector<int> labels;
  const Tensor unit = unit_split(m, split, labels);
  return from_unit(m, split, unit, std::move(labels));
}

LabeledDataset load_split(const DatasetManifest& m, const std::string& split) {
  if (m.source == "procedural") return generate_split(m, split);
  require(split == "train" || split == "test", ErrorKind::InvalidConfig, "unknown split " + split);
  const std::string rel = split == "train" ? m.train_file : m.test_file;
  const std::string expected = split == "train" ? m.train_sha256 : m.test_sha256;
  const std::string path = (fs::path(m.base_dir) / rel).string();
  require(file_exists(path), ErrorKind::DependencyError, "dataset file missing: " + path);
  const std::string actual = sha256_file(path);
  require(expected.empty() || actual == expected, ErrorKind::DependencyError,
          path + " hash " + actual + " does not match manifest " + expected);
  TensorContainer c = read_container(path, "dataset-split");
  require(c.tensors.size() == 2, ErrorKind::FormatError, path + ": expected images and labels");
  const Tensor& img = c.tensors[0];
  require(img.c() == m.channels && img.h() == m.height && img.w() == m.width, ErrorKind::FormatError,
          path + ": image extent " + img.shape().str() + " disagrees with manifest");
  std::vector<int> labels;
  for (Scalar v : c.tensors[1].values()) labels.push_back(static_cast<int>(v));
  require(static_cast<int>(labels.size()) == img.n(), ErrorKind::FormatError, path + ": label count");
  return from_unit(m, split, img, std::move(labels));
}

DatasetManifest materialize_dataset(const DatasetManifest& m, const std::string& dir) {
  DatasetManifest out = m;
  out.source = "files";
  out.base_dir = dir;
  for (const std::string split : {"train", "test"}) {
    std::vector<int> labels;
    TensorContainer c;
    c.kind = "dataset-split";
    c.meta = {{"dataset_id", m.dataset_id}, {"split", split}};
    c.tensors.push_back(unit_split(m, split, labels));
    Tensor lab(Shape{static_cast<int>(labels.size()), 1, 1, 1});
    for (std::size_t i = 0; i < labels.size(); ++i) lab[i] = labels[i];
    c.tensors.push_back(std::move(lab));
    const std::string file = split + ".bin";
    write_container((fs::path(dir) / file).string(), c);
    const std::string sha = sha256_file((fs::path(dir) / file).string());
    (split == "train" ? out.train_file : out.test_file) = file;
    (split == "train" ? out.train_sha256 : out.test_sha256) = sha;
  }
  save_manifest(out, (fs::path(dir) / "manifest.json").string());
  return out;
}

LabeledDataset subset(const LabeledDataset& d, const std::vector<int>& indices) {
  LabeledDataset out;
  out.dataset_id = d.dataset_id;
  out.split = d.split;
  out.num_classes = d.num_classes;
  out.mean = d.mean;
  out.std = d.std;
  out.images = gather(d.images, indices);
  for (int i : indices) out.labels.push_back(d.labels[i]);
  return out;
}

Tensor denormalize(const Tensor& images, const std::vector<double>& mean, const std::vector<double>& std) {
  require(static_cast<int>(mean.size()) == images.c() && static_cast<int>(std.size()) == images.c(),
          ErrorKind::ShapeError, "normalization constants do not match channel count");
  Tensor out(images.shape());
  const std::size_t plane = images.shape().plane();
  for (int n = 0; n < images.n(); ++n)
    for (int c = 0; c < images.c(); ++c) {
      const Scalar* s = images.data() + images.offset(n, c, 0, 0);
      Scalar* d = out.data() + out.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) d[i] = std::clamp(s[i] * std[c] + mean[c], 0.0, 1.0);
    }
  return out;
}

std::string encode_ppm(const Tensor& unit_images, int n) {
  require(unit_images.c() == 3, ErrorKind::ShapeError, "PPM export needs three channels");
  std::string out = "P6\n" + std::to_string(unit_images.w()) + " " + std::to_string(unit_images.h()) + "\n255\n";
  for (int y = 0; y < unit_images.h(); ++y)
    for (int x = 0; x < unit_images.w(); ++x)
      for (int c = 0; c < 3; ++c)
        out.push_back(static_cast<char>(std::lround(std::clamp(unit_images.at(n, c, y, x), 0.0, 1.0) * 255.0)));
  return out;
}

}  // namespace cdistill
