// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cdistill/model.hpp"
#include "cdistill/posteval.hpp"
#include "cdistill/recover.hpp"

namespace cdistill {

struct DiversityReport {
  std::map<int, Scalar> per_class;
  Scalar overall_mean = 0;
  std::string embed_arch;
};

/// Mean cosine similarity over unordered same-class pairs of (N, D, 1, 1)
/// embeddings. InsufficientSamples when a class has fewer than two samples.
DiversityReport intraclass_cosine(const Tensor& embeddings, std::span<const int> labels);
/// Embeds the set with the penultimate features of `embed_model` (running statistics).
DiversityReport intraclass_cosine(const SyntheticSet& distilled, const Model& embed_model);

struct LayerGap {
  int layer_id = 0;
  Scalar mean_gap = 0;  ///< |mu_batch - mu_running|_2
  Scalar var_gap = 0;   ///< |var_batch - var_running|_2
};

struct BNDiscrepancyReport {
  std::vector<LayerGap> per_layer;
  int batches_evaluated = 0;
};

/// Per-layer L2 gaps between batch statistics and running statistics, averaged over batches.
BNDiscrepancyReport stats_discrepancy(std::span<const BNStatistics> batches, const BNStatistics& running);
BNDiscrepancyReport bn_discrepancy(std::span<const Tensor> batches, const Model& teacher);

struct DiscrepancyComparison {
  BNDiscrepancyReport synthetic;
  BNDiscrepancyReport real;
  int batch_size = 0;
  /// Fraction of layers whose synthetic gap is strictly larger than the real one.
  double mean_fraction_above = 0;
  double var_fraction_above = 0;
};

/// Gaps of `batches` random equal-size batches (no replacement within a batch)
/// from each pool, unaugmented. The batch size is clipped to both pool sizes.
DiscrepancyComparison compare_discrepancy(const Tensor& synthetic, const Tensor& real, const Model& teacher,
                                          int batch_size = 100, int batches = 8, std::uint64_t seed = 0);

struct CurveFiles {
  std::string csv;
  std::vector<std::string> plots;
};

/// Writes <dir>/curves.csv (epoch,label,train_top1,test_top1) and one SVG of
/// train/test curves per label. AlignmentError for an empty list or traces
/// whose epochs differ.
CurveFiles emit_curves(std::span<const TrainingTrace> traces, std::span<const std::string> labels,
                       const std::string& dir);

struct TimingLog {
  std::vector<double> marks_ms;
  int batch_size = 0;
};

/// Mean milliseconds per optimized image per iteration. IncompleteLog when
/// fewer than two marks or no batch size.
double timing_probe(const TimingLog& log);

}  // namespace cdistill
