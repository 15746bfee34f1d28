// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdistill/dataset.hpp"
#include "cdistill/image_ops.hpp"
#include "cdistill/prior.hpp"
#include "cdistill/voting.hpp"

namespace cdistill {

enum class InitMode { RealPatch, GaussianNoise };

std::string to_string(InitMode m);
InitMode init_mode_from_string(const std::string& s);

struct RecoverConfig {
  int iterations = 4000;
  Scalar learning_rate = 0.1;
  Scalar beta1 = 0.5;
  Scalar beta2 = 0.9;
  Scalar epsilon = 1e-8;
  /// 0 selects 100, or 10 when the dataset has fewer than 100 classes.
  int batch_size = 0;
  InitMode init_mode = InitMode::RealPatch;
  AugmentFlags augmentation{true, true, 0.5, 1.0};
  Scalar lambda_bn = 0.01;
  VotingConfig voting;
  /// Resample the committee subset every iteration instead of once per round.
  bool resample_per_iteration = false;
  std::uint64_t seed = 0;

  void validate() const;
  int effective_batch_size(int num_classes) const;
  Json to_json() const;
};

/// Canonical digest of a config, seed excluded.
std::string recover_config_digest(const RecoverConfig& cfg);

struct CommitteeMember {
  std::string member_id;
  const Model* model = nullptr;
  std::string digest;
};

/// Provenance of a real-patch initial image.
struct InitRecord {
  int slot = 0;
  int source_index = 0;
  CropBox box;
};

struct LossTraceRow {
  int iteration = 0;
  int chunk = 0;
  Scalar lr = 0;
  LossBreakdown loss;
};

struct RoundProvenance {
  int ipc_round = 0;
  std::uint64_t seed = 0;
  std::vector<int> subset;
  std::vector<std::string> members;
  std::vector<Scalar> weights;
  std::vector<LossTraceRow> trace;
  /// Wall-clock milliseconds at the start of every iteration, per chunk.
  std::vector<std::vector<double>> timing_marks;
  std::vector<int> chunk_sizes;
};

struct SyntheticSet {
  std::string dataset_id;
  int num_classes = 0;
  int ipc = 0;
  /// Image i belongs to round i / num_classes and class labels[i].
  Tensor images;
  std::vector<int> labels;
  std::vector<double> mean, std;
  std::string config_digest;
  std::vector<InitRecord> init_records;
  std::vector<RoundProvenance> provenance;

  int ipc_index(int i) const { return i / num_classes; }
};

/// Initial synthetic images: standard-normal pixels, or a random resized crop
/// of a randomly chosen same-class image per slot. Labels cycle over classes
/// within every round.
SyntheticSet init_synthetic(const LabeledDataset& data, int ipc, InitMode mode, int height, int width,
                            std::uint64_t seed, const AugmentFlags& crop = {});

/// Committee member ids: the architecture id, suffixed "@k" when an
/// architecture appears more than once.
std::vector<std::string> member_ids(const std::vector<std::string>& arch_ids);

struct RoundResult {
  Tensor images;
  RoundProvenance provenance;
};

/// Optimizes one round's slab. A single-member committee runs without
/// voting (weight 1); otherwise the subset and weights are drawn once per round.
RoundResult synthesize_ipc_round(std::span<const CommitteeMember> committee, const PriorTable* prior,
                                 std::span<const int> targets, const Tensor& init, const RecoverConfig& cfg,
                                 int ipc_round);

/// Initializes and optimizes `ipc` rounds; rounds may run on `jobs` threads.
SyntheticSet distill(const LabeledDataset& data, std::span<const CommitteeMember> committee,
                     const PriorTable* prior, int ipc, const RecoverConfig& cfg, int jobs = 1);

/// One image file per sample under <dir>/<class>/<ipc_index>.ppm, the exact
/// tensor in images.bin, and manifest.json.
void export_synthetic(const SyntheticSet& s, const std::string& dir);
SyntheticSet load_synthetic(const std::string& dir);

/// CSV rows: iteration, member, ce, bn_align, weight, total.
std::string loss_csv(const SyntheticSet& s);

}  // namespace cdistill
