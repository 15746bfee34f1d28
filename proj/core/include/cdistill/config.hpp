// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdistill/container.hpp"
#include "cdistill/posteval.hpp"
#include "cdistill/recover.hpp"
#include "cdistill/squeeze.hpp"

namespace cdistill {

inline constexpr int kConfigVersion = 1;

struct DatasetSection {
  std::string id = "toy10";
  /// Optional manifest file; empty means the built-in manifest for `id`.
  std::string manifest;
};

struct CommitteeSection {
  /// Architecture ids; duplicates are allowed and get distinct member ids
  /// and distinct initialization seeds.
  std::vector<std::string> members{"tiny-cnn", "tiny-cnn", "tiny-cnn"};
};

enum class PriorSource { Computed, Reference };

struct PriorSection {
  PriorSource source = PriorSource::Computed;
  /// Fixture read when source is Reference.
  std::string reference_path;
  /// 0 uses the dataset manifest's reference_ipc.
  int ipc = 0;
  /// Overrides recover.iterations and eval.epochs for the prior-assignment
  /// runs when positive.
  int iterations = 0;
  int eval_epochs = 0;
};

struct LabelSection {
  /// Member id of the labeling teacher; empty means the first member.
  std::string teacher;
};

/// One file drives every stage. Each stage reads the sections it needs.
struct PipelineConfig {
  int version = kConfigVersion;
  /// Root seed for recover, label and eval. Teachers use squeeze.seed so they
  /// can be shared across seed sweeps.
  std::uint64_t seed = 0;
  int ipc = 10;
  DatasetSection dataset;
  CommitteeSection committee;
  SqueezeConfig squeeze;
  PriorSection prior;
  RecoverConfig recover;
  LabelSection label;
  PostEvalConfig eval;

  /// Throws InvalidConfig (or InvalidSubsetSize for the voting block).
  void validate() const;
  Json to_json() const;
  /// SHA-256 of the canonical JSON form without the root seed, so a seed
  /// sweep shares one digest.
  std::string digest() const;
};

/// Desk-scale squeeze preset per dataset.
SqueezeConfig squeeze_preset(const std::string& dataset_id);

/// Parses YAML text. Unknown keys, type mismatches and invariant violations
/// throw InvalidConfig naming `origin` and the offending line.
PipelineConfig parse_config(const std::string& text, const std::string& origin = "<config>");
PipelineConfig load_config(const std::string& path);
std::string dump_config(const PipelineConfig& cfg);
void save_config(const PipelineConfig& cfg, const std::string& path);

PipelineConfig config_from_json(const Json& j);

}  // namespace cdistill
