// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdistill/dataset.hpp"
#include "cdistill/image_ops.hpp"
#include "cdistill/optim.hpp"
#include "cdistill/recover.hpp"
#include "cdistill/softlabel.hpp"

namespace cdistill {

struct CutMixResult {
  Tensor images;
  std::vector<int> partner;  ///< sample i received a patch from sample partner[i]
  CropBox box;               ///< pasted rectangle (empty when nothing was pasted)
  Scalar lambda = 1;         ///< fraction of each image left untouched
};

/// Pastes `box` from images[partner[i]] into image i; lambda from the exact area.
CutMixResult apply_cutmix(const Tensor& images, const std::vector<int>& partner, const CropBox& box);
/// lambda ~ Beta(beta, beta), box of area (1 - lambda) * H * W centered
/// uniformly and clipped, partners from a random permutation.
/// DegenerateBatch for batches of one.
CutMixResult cutmix(const Tensor& images, Rng& rng, Scalar beta_param = 1.0);

struct PostEvalConfig {
  std::string student_arch = "tiny-cnn";
  Scalar learning_rate = 0.001;
  Scalar weight_decay = 0.01;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  /// 0 selects 16, or 10 when the distilled set has at most 16 images.
  int batch_size = 0;
  int epochs = 300;
  int eta = 1;
  CosineMode cosine_mode = CosineMode::Cycles;
  Scalar min_lr = 0.0;
  AugmentFlags augmentation{true, true, 0.5, 1.0};
  bool cutmix = true;
  Scalar cutmix_beta = 1.0;
  Scalar kd_temperature = 1.0;
  SoftLabelConfig labels;
  std::uint64_t seed = 0;
  /// Test accuracy is measured every `test_every` epochs, over the final
  /// `test_tail` epochs, and at the last epoch.
  int test_every = 0;
  int test_tail = 0;

  void validate() const;
  int effective_batch_size(int distilled_count) const;
  Json to_json() const;
};

struct EpochRow {
  int epoch = 0;
  double train_top1 = 0;
  double test_top1 = 0;  ///< NaN when not measured this epoch
  double mean_loss = 0;
  double lr = 0;
};

struct TrainingTrace {
  std::vector<EpochRow> per_epoch;
  std::string to_csv() const;
  static TrainingTrace from_csv(const std::string& text);
};

struct PostEvalResult {
  double test_top1 = 0;
  TrainingTrace trace;
};

/// Called once per training batch with (epoch, step, digest of the images the
/// teacher labeled, digest of the resulting labels).
using BatchObserver = std::function<void(int, int, const std::string&, const std::string&)>;

/// Trains a fresh student on the distilled set with teacher soft labels (KL),
/// augmentation, CutMix and a per-epoch cosine schedule.
PostEvalResult train_student(const SyntheticSet& distilled, Model& teacher, const LabeledDataset& test,
                             const PostEvalConfig& cfg, const BatchObserver& observer = {});

}  // namespace cdistill
