// SPDX-License-Identifier: Apache-2.0
#include "cdistill/prior.hpp"

#include <cmath>

#include "cdistill/error.hpp"
#include "cdistill/io.hpp"

namespace cdistill {

Scalar lookup_alpha(const PriorTable& table, const std::string& member_id) {
  const auto it = table.entries.find(member_id);
  if (it == table.entries.end())
    fail(ErrorKind::MissingPrior, "no prior score for '" + member_id + "' in table for " + table.dataset_id);
  return it->second;
}

Json prior_to_json(const PriorTable& t) {
  return {{"format_version", 1},
          {"dataset_id", t.dataset_id},
          {"reference_ipc", t.reference_ipc},
          {"evaluation_arch", t.evaluation_arch},
          {"entries", t.entries},
          {"provenance", t.provenance}};
}

PriorTable prior_from_json(const Json& j) {
  try {
    require(j.value("format_version", 1) == 1, ErrorKind::FormatError, "unsupported prior table version");
    PriorTable t;
    t.dataset_id = j.at("dataset_id");
    t.reference_ipc = j.at("reference_ipc");
    t.evaluation_arch = j.value("evaluation_arch", "");
    t.entries = j.at("entries").get<std::map<std::string, Scalar>>();
    t.provenance = j.value("provenance", std::map<std::string, std::string>{});
    for (const auto& [k, v] : t.entries)
      require(std::isfinite(v) && v >= 0 && v <= 100, ErrorKind::InvalidScore,
              "prior score for " + k + " outside [0, 100]");
    return t;
  } catch (const Json::exception& e) {
    fail(ErrorKind::FormatError, std::string("prior table: ") + e.what());
  }
}

void save_prior(const PriorTable& t, const std::string& path) { atomic_write(path, prior_to_json(t).dump(2) + "\n"); }

PriorTable load_prior(const std::string& path) {
  try {
    return prior_from_json(Json::parse(read_file(path)));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::FormatError, path + ": " + e.what());
  }
}

PriorTable load_reference_priors(const std::string& path, const std::string& dataset_id) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::FormatError, path + ": " + e.what());
  }
  const Json& d = j.at("datasets");
  require(d.contains(dataset_id), ErrorKind::MissingPrior, "fixture has no column for " + dataset_id);
  PriorTable t;
  t.dataset_id = dataset_id;
  t.reference_ipc = d.at(dataset_id).at("reference_ipc");
  t.evaluation_arch = j.value("evaluation_arch", "");
  t.entries = d.at(dataset_id).at("entries").get<std::map<std::string, Scalar>>();
  return t;
}

}  // namespace cdistill
