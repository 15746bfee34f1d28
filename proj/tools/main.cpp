// SPDX-License-Identifier: Apache-2.0
// cdistill: command-line driver for the squeeze / prior / recover / label /
// eval / report stages and the ablation presets.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cdistill/config.hpp"
#include "cdistill/dataset.hpp"
#include "cdistill/error.hpp"
#include "cdistill/pipeline.hpp"

namespace {

using namespace cdistill;

enum Exit : int { kOk = 0, kUsage = 1, kConfig = 2, kDependency = 3, kRuntime = 4 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidSubsetSize:
    case ErrorKind::UnknownPreset:
    case ErrorKind::UnknownArchitecture:
      return kConfig;
    case ErrorKind::DependencyError:
    case ErrorKind::MissingPrior:
    case ErrorKind::IncompleteCommittee:
      return kDependency;
    default:
      return kRuntime;
  }
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "artifacts";
  int jobs = 1;
};

PipelineConfig load(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
  if (g.config.empty()) cfg.squeeze = squeeze_preset(cfg.dataset.id);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

void print(const RunManifest& m) {
  std::cout << run_manifest_to_json(m).dump(2) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  retain_large_allocations();
  CLI::App app{"Committee-voting dataset distillation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "YAML pipeline config");
  app.add_option("--seed", g.seed, "Root seed (overrides the config)");
  app.add_option("--out", g.out, "Artifact root directory");
  app.add_option("--jobs", g.jobs, "Concurrent jobs")->check(CLI::PositiveNumber);

  std::vector<std::string> runs;
  auto* squeeze = app.add_subcommand("squeeze", "Pre-train the committee teachers");
  auto* prior = app.add_subcommand("prior", "Assign prior-performance scores");
  auto* recover = app.add_subcommand("recover", "Synthesize the distilled set");
  auto* label = app.add_subcommand("label", "Compute teacher soft labels for a distilled set");
  label->add_option("--run", runs, "Distilled run id (default: the configured run)");
  auto* eval = app.add_subcommand("eval", "Train and test a student on a distilled set");
  eval->add_option("--run", runs, "Distilled run id (default: the configured run)");
  auto* report = app.add_subcommand("report", "Diversity, BN discrepancy, curves and timing");
  report->add_option("--run", runs, "Distilled run ids (default: the configured run)");
  std::string preset;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation preset");
  ablate->add_option("preset", preset, "n2-vs-n3 | voter-modes | bssl-on-off | committee-growth | sre2lpp-baseline")
      ->required();
  std::string dataset_id = "shapes10", dataset_dir;
  auto* make_dataset = app.add_subcommand("make-dataset", "Render a built-in dataset to split files");
  make_dataset->add_option("--dataset", dataset_id, "Built-in dataset id");
  make_dataset->add_option("--dir", dataset_dir, "Output directory")->required();
  auto* show_config = app.add_subcommand("show-config", "Print the resolved config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (make_dataset->parsed()) {
      const DatasetManifest m = materialize_dataset(builtin_manifest(dataset_id), dataset_dir);
      std::cout << manifest_to_json(m).dump(2) << std::endl;
      return kOk;
    }
    const PipelineConfig cfg = load(g);
    if (show_config->parsed()) {
      std::cout << dump_config(cfg) << "# digest " << cfg.digest() << std::endl;
      return kOk;
    }
    ArtifactStore store = open_store(g.out);
    const PipelineContext ctx{cfg, &store, g.jobs};
    if (ablate->parsed()) {
      std::vector<AblationRow> rows;
      print(run_ablation(preset, ctx, &rows));
      for (const auto& r : rows) std::cerr << r.label << '\t' << r.test_top1 << '\n';
      return kOk;
    }
    Stage stage = Stage::Squeeze;
    if (prior->parsed()) stage = Stage::Prior;
    if (recover->parsed()) stage = Stage::Recover;
    if (label->parsed()) stage = Stage::Label;
    if (eval->parsed()) stage = Stage::Eval;
    if (report->parsed()) stage = Stage::Report;
    (void)squeeze;
    print(run_stage(stage, ctx, runs));
    return kOk;
  } catch (const Error& e) {
    std::cerr << "cdistill: " << e.what() << std::endl;
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "cdistill: " << e.what() << std::endl;
    return kRuntime;
  }
}
