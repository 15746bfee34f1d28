// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "cdistill/model.hpp"

namespace cdistill {

struct BatchMoments {
  std::vector<Scalar> mean;
  std::vector<Scalar> var;
};

/// Per-channel mean and biased variance over (N, H, W), variance offset by
/// `epsilon`. EmptyBatch when there is nothing to reduce.
BatchMoments batch_stats(const Tensor& features, Scalar epsilon);

/// a * running + (1 - a) * batch for both moments. InvalidMomentum outside [0, 1].
BatchMoments running_stat_update(const BatchMoments& running, const BatchMoments& batch, Scalar momentum);

enum class LabelMode { BatchSpecific, Running };

std::string to_string(LabelMode m);
LabelMode label_mode_from_string(const std::string& s);

struct SoftLabelConfig {
  LabelMode mode = LabelMode::BatchSpecific;
  Scalar epsilon = 1e-5;
  /// Keep the teacher's running statistics untouched by labeling.
  bool protect_running_stats = true;

  void validate() const;
};

struct SoftLabelBatch {
  Tensor logits;  ///< raw logits (N, K, 1, 1)
  std::string batch_digest;
  std::string teacher_digest;
};

/// Hash of the exact batch contents and order.
std::string batch_digest(const Tensor& batch);

/// Teacher logits with every normalization layer using the current batch's
/// own statistics. The teacher is not modified.
SoftLabelBatch bssl_labels(const Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                           const std::string& teacher_digest = "");
/// Same, but with protect_running_stats == false the teacher's running
/// statistics absorb the batch statistics, as a training-mode forward would.
SoftLabelBatch bssl_labels(Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                           const std::string& teacher_digest = "");

/// Teacher logits with running-statistics (inference) normalization.
SoftLabelBatch running_labels(const Model& teacher, const Tensor& batch, const std::string& teacher_digest = "");

/// Labels in the configured mode.
SoftLabelBatch soft_labels(const Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                           const std::string& teacher_digest = "");

/// Logits keyed by (teacher digest, batch digest). Only an optimization:
/// a hit is returned only for the identical batch.
class LabelCache {
 public:
  bool lookup(const std::string& teacher, const std::string& batch, Tensor& out) const;
  void store(const std::string& teacher, const std::string& batch, const Tensor& logits);
  std::size_t size() const;
  void save(const std::string& path) const;
  /// Merges entries from a saved cache file.
  void load(const std::string& path);

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, Tensor> entries_;
};

}  // namespace cdistill
