// SPDX-License-Identifier: Apache-2.0
#include "cdistill/prior_assign.hpp"

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

PriorStages default_prior_stages(const LabeledDataset& train, const LabeledDataset& test, RecoverConfig recover,
                                 PostEvalConfig eval) {
  PriorStages s;
  s.config_digest = sha256_hex(Json{{"recover", recover_config_digest(recover)}, {"eval", [&] {
                                      Json j = eval.to_json();
                                      j.erase("seed");
                                      return j;
                                    }()}}.dump());
  s.distill = [&train, recover](const CommitteeMember& m, int ipc, std::uint64_t seed) {
    RecoverConfig cfg = recover;
    cfg.seed = seed;
    return distill(train, std::span<const CommitteeMember>(&m, 1), nullptr, ipc, cfg);
  };
  s.evaluate = [&test, eval](const SyntheticSet& set, Model& teacher, std::uint64_t seed) {
    PostEvalConfig cfg = eval;
    cfg.seed = seed;
    return train_student(set, teacher, test, cfg).test_top1;
  };
  return s;
}

PriorTable assign_prior_performance(std::span<const CommitteeMember> committee, const std::string& dataset_id,
                                    int ipc, const std::string& eval_arch, std::uint64_t seed,
                                    const PriorStages& stages) {
  require(ipc >= 1, ErrorKind::InvalidConfig, "reference ipc must be >= 1");
  require(!committee.empty(), ErrorKind::IncompleteCommittee, "empty committee");
  for (const auto& m : committee)
    require(m.model != nullptr, ErrorKind::IncompleteCommittee, "committee member " + m.member_id + " is missing");
  PriorTable t;
  t.dataset_id = dataset_id;
  t.reference_ipc = ipc;
  t.evaluation_arch = eval_arch;
  for (const auto& m : committee) {
    // Every member sees the same seeds so scores differ only by backbone.
    const SyntheticSet set = stages.distill(m, ipc, derive_seed(seed, "prior-distill"));
    Model teacher = *m.model;
    const double alpha = stages.evaluate(set, teacher, derive_seed(seed, "prior-eval"));
    require(alpha >= 0 && alpha <= 100, ErrorKind::InvalidScore, "prior score outside [0, 100]");
    t.entries[m.member_id] = alpha;
    t.provenance[m.member_id] =
        sha256_hex(m.digest + "|" + stages.config_digest + "|" + std::to_string(seed) + "|" + eval_arch);
  }
  return t;
}

}  // namespace cdistill
