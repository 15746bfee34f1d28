// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdistill/layers.hpp"

namespace cdistill {

struct BackboneSpec {
  std::string arch_id;
  int num_classes = 10;
  int height = 32;
  int width = 32;
  int channels = 3;

  bool operator==(const BackboneSpec&) const = default;
  std::string str() const;
};

/// A backbone: a feature extractor ending in global pooling, followed by a
/// linear classifier. forward/backward never mutate the model.
class Model {
 public:
  Model(BackboneSpec spec, Sequential features, Linear head);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const BackboneSpec& spec() const { return spec_; }

  /// Logits (N, num_classes, 1, 1).
  Tensor forward(const Tensor& x, ForwardPass& pass) const;
  /// Penultimate features (N, D, 1, 1).
  Tensor embed(const Tensor& x, ForwardPass& pass) const;
  /// Gradient w.r.t. the input of a recorded forward(). Parameter gradients
  /// accumulate into `grads` (shaped like parameters()) when non-null.
  Tensor backward(const Tensor& dlogits, ForwardPass& pass, Gradients* grads) const;

  const std::vector<Binder::Param>& parameters() { return params_; }
  std::vector<const Tensor*> parameter_values() const;
  std::vector<std::string> parameter_names() const;
  Gradients make_gradients() const;

  std::size_t num_norm_layers() const { return norms_.size(); }
  const BatchNorm2d& norm_layer(std::size_t i) const { return *norms_[i]; }
  BatchNorm2d& norm_layer(std::size_t i) { return *norms_[i]; }

  /// Snapshot copy of running statistics in forward order.
  BNStatistics running_stats() const;
  void set_running_stats(const BNStatistics& stats);
  /// mean' = a * mean + (1 - a) * batch_mean (same for variance). Uses each
  /// layer's own momentum unless `momentum` is non-negative.
  void apply_running_update(const BNStatistics& batch, Scalar momentum = -1.0);

  /// SHA-256 over the architecture spec, parameters and running statistics.
  std::string digest() const;

 private:
  void rebind();

  BackboneSpec spec_;
  Sequential features_;
  Linear head_;
  std::vector<Binder::Param> params_;
  std::vector<BatchNorm2d*> norms_;
};

/// Names of all registered architectures.
std::vector<std::string> registered_architectures();

/// Builds and initializes a backbone. Deterministic in (spec, seed).
Model build_backbone(const BackboneSpec& spec, std::uint64_t seed);

/// Running statistics snapshot; throws NoNormalizationLayers for models
/// without normalization.
BNStatistics read_running_stats(const Model& model);

struct ProbeCapture {
  BNStatistics stats{StatsKind::Batch, {}};
  std::uint64_t forward_id = 0;
};

/// Batch statistics of every normalization layer during one batch-mode
/// forward pass. The model is not modified.
ProbeCapture capture_batch_stats(const Model& model, const Tensor& batch);

}  // namespace cdistill
