// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdistill/container.hpp"
#include "cdistill/tensor.hpp"

namespace cdistill {

struct DatasetManifest {
  std::string dataset_id;
  int num_classes = 10;
  int channels = 3;
  int height = 32;
  int width = 32;
  std::vector<double> mean{0.5, 0.5, 0.5};
  std::vector<double> std{0.25, 0.25, 0.25};
  /// Images per class used when assigning prior performance.
  int reference_ipc = 50;

  /// "procedural": splits are rendered from `seed`; "files": splits are read
  /// from `train_file` / `test_file` (relative to the manifest) and hash-checked.
  std::string source = "procedural";
  std::uint64_t seed = 0;
  int train_per_class = 0;
  int test_per_class = 0;
  std::string train_file;
  std::string test_file;
  std::string train_sha256;
  std::string test_sha256;
  /// Directory the manifest was loaded from.
  std::string base_dir;
};

Json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const Json& j);
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

/// Bundled desk-scale datasets: "toy10" (3x16x16, 20+20 per class) and
/// "shapes10" (3x32x32, 500+100 per class).
DatasetManifest builtin_manifest(const std::string& dataset_id);

struct LabeledDataset {
  std::string dataset_id;
  std::string split;
  int num_classes = 0;
  Tensor images;  ///< normalized pixel space
  std::vector<int> labels;
  std::vector<double> mean, std;

  int size() const { return images.n(); }
  std::vector<int> indices_of_class(int cls) const;
};

/// Renders one split ("train" or "test") of a procedural manifest.
LabeledDataset generate_split(const DatasetManifest& m, const std::string& split);
/// Loads a split per the manifest source; hash-checked for file sources.
LabeledDataset load_split(const DatasetManifest& m, const std::string& split);
/// Writes both splits to `dir` and returns a files-source manifest for them.
DatasetManifest materialize_dataset(const DatasetManifest& m, const std::string& dir);

/// Subset of samples in the given order.
LabeledDataset subset(const LabeledDataset& d, const std::vector<int>& indices);

/// Maps normalized pixels back to [0, 1] (clamped).
Tensor denormalize(const Tensor& images, const std::vector<double>& mean, const std::vector<double>& std);
/// Binary PPM (P6) of sample `n` of a [0, 1] batch with three channels.
std::string encode_ppm(const Tensor& unit_images, int n);

}  // namespace cdistill
