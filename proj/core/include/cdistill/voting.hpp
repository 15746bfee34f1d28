// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdistill/model.hpp"

namespace cdistill {

enum class VoterMode { Prior, Equal, Random };

std::string to_string(VoterMode m);
VoterMode voter_mode_from_string(const std::string& s);

struct VotingConfig {
  int N = 2;
  Scalar temperature = 4.0;
  VoterMode voter_mode = VoterMode::Prior;
  std::uint64_t seed = 0;

  /// InvalidSubsetSize unless 2 <= N (and N <= committee_size when given);
  /// InvalidConfig for a non-positive temperature.
  void validate(int committee_size = -1) const;
};

struct WeightVector {
  std::vector<std::pair<std::string, Scalar>> pairs;

  std::vector<Scalar> values() const;
  Scalar sum() const;
};

/// N distinct indices in [0, committee_size), uniform without replacement,
/// deterministic in cfg.seed, returned in ascending order.
std::vector<int> sample_committee(int committee_size, const VotingConfig& cfg);

/// prior: softmax(alpha / T) with max subtraction; equal: 1/N; random: a
/// Dirichlet(1) draw seeded by `seed`. InvalidScore for non-finite alpha.
std::vector<Scalar> ppg_weights(std::span<const Scalar> alphas, Scalar temperature, VoterMode mode,
                                std::uint64_t seed = 0);
WeightVector ppg_weight_vector(const std::vector<std::string>& members, std::span<const Scalar> alphas,
                               Scalar temperature, VoterMode mode, std::uint64_t seed = 0);

struct MemberLoss {
  std::string member;
  Scalar ce = 0;
  Scalar bn_align = 0;
  Scalar composite = 0;  ///< ce + lambda_bn * bn_align
  Scalar weight = 1;
  Scalar weighted = 0;
};

struct LossBreakdown {
  Scalar total = 0;
  std::vector<MemberLoss> per_member;
  Scalar lambda_bn = 0;
};

struct RecoverLossOptions {
  Scalar lambda_bn = 0.01;
  bool include_ce = true;
  /// Batch-statistics epsilon override (layer default when unset).
  std::optional<Scalar> epsilon;
};

/// ce(teacher(x), y) + lambda_bn * sum_l (|mu_B - mu_run|^2 + |var_B - var_run|^2),
/// with the teacher normalizing by batch statistics. Writes d loss / d x to
/// `grad_x` when non-null. The teacher is not modified.
MemberLoss recover_loss(const Model& teacher, const Tensor& x, std::span<const int> y,
                        const RecoverLossOptions& opt, Tensor* grad_x = nullptr);

struct WeightedMember {
  const Model* model = nullptr;
  std::string member_id;
  Scalar weight = 1;
};

/// sum_i w_i * recover_loss_i; `grad_x` receives the weighted gradient sum.
LossBreakdown committee_loss(std::span<const WeightedMember> members, const Tensor& x, std::span<const int> y,
                             const RecoverLossOptions& opt, Tensor* grad_x = nullptr);

}  // namespace cdistill
