// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdistill/container.hpp"
#include "cdistill/dataset.hpp"
#include "cdistill/image_ops.hpp"
#include "cdistill/model.hpp"

namespace cdistill {

enum class OptimizerKind { Adam, AdamW, Sgd };
enum class SchedulerKind { Cosine, Constant };

struct SqueezeConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  Scalar learning_rate = 0.001;
  Scalar momentum = 0.9;  ///< SGD only
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar weight_decay = 0.0;
  int batch_size = 64;
  int epochs = 50;
  SchedulerKind scheduler = SchedulerKind::Cosine;
  AugmentFlags augmentation{false, true, 0.5, 1.0};
  std::uint64_t seed = 0;

  /// InvalidConfig on epochs < 1, batch_size < 1 or learning_rate <= 0.
  void validate() const;
  Json to_json() const;
};

struct TrainedTeacher {
  Model model;
  std::string dataset_id;
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::string config_digest;
  /// Mean training cross-entropy per epoch.
  std::vector<double> epoch_loss;
};

/// Content hash of a split (images and labels).
std::string split_digest(const LabeledDataset& d);

/// Digest binding the architecture spec, squeeze config (seed included) and
/// training split.
std::string teacher_digest(const BackboneSpec& spec, const SqueezeConfig& cfg, const std::string& train_digest);

/// Trains a fresh backbone on `train` with cross-entropy. Running statistics
/// follow the training stream. `test` may be empty.
TrainedTeacher pretrain(const BackboneSpec& spec, const LabeledDataset& train, const LabeledDataset& test,
                        const SqueezeConfig& cfg);

/// Top-1 accuracy in percent with running-statistics normalization.
double evaluate(const Model& model, const LabeledDataset& data, int chunk = 250);

}  // namespace cdistill
