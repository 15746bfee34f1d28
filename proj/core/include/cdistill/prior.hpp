// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cdistill/container.hpp"
#include "cdistill/tensor.hpp"

namespace cdistill {

/// Prior-performance scores (percent top-1) keyed by committee member id.
struct PriorTable {
  std::string dataset_id;
  int reference_ipc = 0;
  std::string evaluation_arch;
  std::map<std::string, Scalar> entries;
  /// Member id -> digest of the teacher and configuration that produced the entry.
  std::map<std::string, std::string> provenance;

  bool operator==(const PriorTable&) const = default;
};

/// MissingPrior when `member_id` has no entry.
Scalar lookup_alpha(const PriorTable& table, const std::string& member_id);

Json prior_to_json(const PriorTable& t);
PriorTable prior_from_json(const Json& j);
void save_prior(const PriorTable& t, const std::string& path);
PriorTable load_prior(const std::string& path);

/// Reads one column (dataset) of a reference prior fixture:
/// {"datasets": {"<id>": {"reference_ipc": n, "entries": {arch: alpha}}}}.
PriorTable load_reference_priors(const std::string& path, const std::string& dataset_id);

}  // namespace cdistill
