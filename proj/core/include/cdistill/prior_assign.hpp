// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "cdistill/posteval.hpp"
#include "cdistill/prior.hpp"
#include "cdistill/recover.hpp"

namespace cdistill {

/// The two pipeline stages run per committee member. Injectable so tests can
/// stub either one.
struct PriorStages {
  /// Distills `ipc` images per class with the single given member.
  std::function<SyntheticSet(const CommitteeMember&, int ipc, std::uint64_t seed)> distill;
  /// Trains a fresh evaluation student on the set with labels from `teacher`
  /// and returns its test top-1.
  std::function<double(const SyntheticSet&, Model& teacher, std::uint64_t seed)> evaluate;
  /// Digest of the stage configuration, recorded as provenance.
  std::string config_digest;
};

/// Stages backed by distill() and train_student().
PriorStages default_prior_stages(const LabeledDataset& train, const LabeledDataset& test, RecoverConfig recover,
                                 PostEvalConfig eval);

/// alpha_b = test accuracy of a student trained on data distilled by member b
/// alone, labeled by b. IncompleteCommittee when a member has no model.
PriorTable assign_prior_performance(std::span<const CommitteeMember> committee, const std::string& dataset_id,
                                    int ipc, const std::string& eval_arch, std::uint64_t seed,
                                    const PriorStages& stages);

}  // namespace cdistill
