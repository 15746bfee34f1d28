// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "cdistill/config.hpp"
#include "cdistill/container.hpp"
#include "cdistill/dataset.hpp"
#include "cdistill/prior.hpp"
#include "cdistill/recover.hpp"

namespace cdistill {

enum class Stage { Squeeze, Prior, Recover, Label, Eval, Report };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct RunManifest {
  std::string run_id;
  std::string dataset_id;
  Stage stage = Stage::Squeeze;
  std::map<std::string, std::string> config_digests;
  /// Upstream artifact name -> digest.
  std::map<std::string, std::string> inputs;
  /// Output path relative to the store root -> SHA-256 of its bytes.
  std::map<std::string, std::string> outputs;
  std::map<std::string, std::uint64_t> seeds;
  std::string started;
  std::string finished;
  Json metrics = Json::object();
};

Json run_manifest_to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const Json& j);

/// Everything lives under one root:
///   teachers/<dataset>/<arch>/<digest>/{model.ckpt,meta.json}
///   priors/<dataset>.prior
///   distilled/<dataset>/<run>/<class>/<ipc_index>.ppm + manifest.json
///   recover/<run>/loss.csv
///   labels/<run>/, eval/<run>/, reports/<run>/
///   manifests/<stage>/<run>.json, ledger.jsonl
/// The teacher tree can be redirected to a shared cache directory.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::string root, std::string teacher_cache = "");

  const std::string& root() const { return root_; }
  std::string path(const std::string& relative) const;

  std::string teacher_dir(const std::string& dataset, const std::string& arch, const std::string& digest) const;
  std::string prior_path(const std::string& dataset) const;
  std::string distilled_dir(const std::string& dataset, const std::string& run) const;
  std::string recover_dir(const std::string& run) const;
  std::string labels_dir(const std::string& run) const;
  std::string eval_dir(const std::string& run) const;
  std::string report_dir(const std::string& run) const;
  std::string manifest_path(Stage stage, const std::string& run) const;
  std::string ledger_path() const { return path("ledger.jsonl"); }

  /// Writes the manifest atomically and appends one ledger row.
  void record(const RunManifest& m);
  std::vector<Json> read_ledger() const;
  RunManifest load_manifest(Stage stage, const std::string& run) const;
  bool has_manifest(Stage stage, const std::string& run) const;

 private:
  void append_ledger(const Json& row);

  std::string root_;
  std::string teacher_root_;
  std::mutex ledger_mutex_;
};

/// Store rooted at `out`, with CDISTILL_CACHE_DIR redirecting the teacher tree.
ArtifactStore open_store(const std::string& out);

/// Resolves the dataset manifest: an explicit path (relative paths against
/// CDISTILL_DATA_ROOT), <data root>/<id>/manifest.json, or the built-in one.
DatasetManifest resolve_manifest(const DatasetSection& d);

/// Inputs shared by the stages of one pipeline invocation.
struct PipelineContext {
  PipelineConfig config;
  ArtifactStore* store = nullptr;
  int jobs = 1;
};

struct TeacherRef {
  std::string member_id;
  std::string arch_id;
  std::string digest;
  std::string dir;
};

/// Expected teacher checkpoints for the committee (they need not exist yet).
std::vector<TeacherRef> committee_teachers(const PipelineContext& ctx);

/// Deterministic ids derived from the inputs that define each run.
std::string recover_run_id(const PipelineContext& ctx);
std::string eval_run_id(const PipelineContext& ctx, const std::string& distilled_run);

/// Each stage writes its artifacts atomically, records a manifest and appends
/// to the ledger. Missing upstream artifacts raise DependencyError.
RunManifest run_squeeze(const PipelineContext& ctx);
RunManifest run_prior(const PipelineContext& ctx);
RunManifest run_recover(const PipelineContext& ctx);
/// Soft labels of the distilled set in fixed batches, for inspection.
RunManifest run_label(const PipelineContext& ctx, const std::string& distilled_run);
RunManifest run_eval(const PipelineContext& ctx, const std::string& distilled_run);
/// Diversity, BN discrepancy, curves and timing for the given distilled runs
/// (and the eval runs over them, when present).
RunManifest run_report(const PipelineContext& ctx, const std::vector<std::string>& distilled_runs,
                       const std::vector<std::string>& eval_runs);

/// Generic entry point used by the CLI.
RunManifest run_stage(Stage stage, const PipelineContext& ctx, const std::vector<std::string>& runs = {});

struct AblationVariant {
  std::string label;
  PipelineConfig config;
};

/// Configs differing from `base` only along the named axis. UnknownPreset
/// for anything other than n2-vs-n3, voter-modes, bssl-on-off,
/// committee-growth and sre2lpp-baseline.
std::vector<AblationVariant> ablation_preset(const std::string& name, const PipelineConfig& base);
std::vector<std::string> ablation_presets();

struct AblationRow {
  std::string label;
  std::string distilled_run;
  std::string eval_run;
  double test_top1 = 0;
};

/// Runs squeeze (cached), prior when a variant votes by prior and none is
/// stored yet, recover and eval for every variant of the preset, then writes
/// reports/<run>/summary.csv.
RunManifest run_ablation(const std::string& preset, const PipelineContext& ctx,
                         std::vector<AblationRow>* rows = nullptr);

/// Dotted paths of fields whose values differ between two configs.
std::vector<std::string> config_diff(const PipelineConfig& a, const PipelineConfig& b);

}  // namespace cdistill
