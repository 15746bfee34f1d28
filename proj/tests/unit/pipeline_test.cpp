// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/pipeline.hpp"
#include "testing.hpp"

namespace cdistill {
namespace {

namespace fs = std::filesystem;

PipelineConfig quick_config() {
  return parse_config(R"(version: 1
seed: 0
ipc: 2
dataset:
  id: toy10
committee:
  members: [tiny-cnn, tiny-cnn, tiny-cnn]
squeeze:
  epochs: 3
prior:
  ipc: 2
  iterations: 3
  eval_epochs: 2
recover:
  iterations: 3
eval:
  epochs: 3
  learning_rate: 0.01
)",
                      "quick.yaml");
}

template <typename F>
ErrorKind kind_of(F f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::IoError;
}

TEST(PipelineDeps, RecoverBeforeSqueezeIsADependencyError) {
  const testing::ScratchDir dir("deps");
  ArtifactStore store(dir.str());
  const PipelineContext ctx{quick_config(), &store, 1};
  EXPECT_EQ(kind_of([&] { run_recover(ctx); }), ErrorKind::DependencyError);
  EXPECT_EQ(kind_of([&] { run_eval(ctx, "recover-0000"); }), ErrorKind::DependencyError);
  EXPECT_EQ(kind_of([&] { store.load_manifest(Stage::Recover, "nope"); }), ErrorKind::DependencyError);
}

TEST(PipelineDeps, MissingManifestFile) {
  DatasetSection d;
  d.manifest = "/nonexistent/manifest.json";
  EXPECT_EQ(kind_of([&] { resolve_manifest(d); }), ErrorKind::DependencyError);
}

TEST(Ablation, PresetsDifferAlongOneAxis) {
  const PipelineConfig base = quick_config();
  const std::map<std::string, std::set<std::string>> axis{
      {"n2-vs-n3", {"recover.voting.N"}},
      {"voter-modes", {"recover.voting.voter_mode"}},
      {"bssl-on-off", {"eval.label_mode"}},
      {"committee-growth", {"committee.members"}},
      {"sre2lpp-baseline", {"committee.members"}}};
  for (const auto& name : ablation_presets()) {
    const auto variants = ablation_preset(name, base);
    ASSERT_GE(variants.size(), 2u) << name;
    for (const auto& v : variants)
      for (const auto& path : config_diff(base, v.config)) EXPECT_TRUE(axis.at(name).count(path)) << name << ": " << path;
    EXPECT_FALSE(config_diff(variants.front().config, variants.back().config).empty()) << name;
  }
}

TEST(Ablation, CommitteeGrowthSkipsPrefixesSmallerThanN) {
  const auto v = ablation_preset("committee-growth", quick_config());
  std::vector<std::string> labels;
  for (const auto& x : v) labels.push_back(x.label);
  EXPECT_EQ(labels, (std::vector<std::string>{"k=1", "k=2", "k=3"}));
}

TEST(Ablation, UnknownPreset) {
  EXPECT_EQ(kind_of([] { ablation_preset("n5", quick_config()); }), ErrorKind::UnknownPreset);
}

class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::ScratchDir("pipeline");
    store_ = new ArtifactStore(dir_->str());
    const PipelineContext ctx{quick_config(), store_, 2};
    squeeze_ = new RunManifest(run_squeeze(ctx));
    run_prior(ctx);
  }
  static void TearDownTestSuite() {
    delete squeeze_;
    delete store_;
    delete dir_;
  }
  PipelineContext context(std::uint64_t seed = 0) const {
    PipelineContext ctx{quick_config(), store_, 1};
    ctx.config.seed = seed;
    return ctx;
  }

  static inline testing::ScratchDir* dir_ = nullptr;
  static inline ArtifactStore* store_ = nullptr;
  static inline RunManifest* squeeze_ = nullptr;
};

TEST_F(PipelineRun, SqueezeWritesTeachersAndIsCached) {
  for (const auto& t : committee_teachers(context())) {
    EXPECT_TRUE(fs::exists(fs::path(t.dir) / "model.ckpt")) << t.member_id;
    EXPECT_TRUE(fs::exists(fs::path(t.dir) / "meta.json")) << t.member_id;
  }
  EXPECT_EQ(squeeze_->metrics.size(), 3u);
  const RunManifest again = run_squeeze(context());
  for (const auto& [member, m] : again.metrics.items()) EXPECT_TRUE(m.at("cached").get<bool>()) << member;
  EXPECT_EQ(again.outputs, squeeze_->outputs);
}

TEST_F(PipelineRun, DuplicateArchitecturesGetDistinctTeachers) {
  std::set<std::string> digests;
  for (const auto& t : committee_teachers(context())) digests.insert(t.digest);
  EXPECT_EQ(digests.size(), 3u);
}

TEST_F(PipelineRun, PriorTableCoversCommittee) {
  const PriorTable t = load_prior(store_->prior_path("toy10"));
  EXPECT_EQ(t.entries.size(), 3u);
  for (const auto& [k, v] : t.entries) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST_F(PipelineRun, RecoverLabelEvalReport) {
  const PipelineContext ctx = context();
  const RunManifest rec = run_recover(ctx);
  EXPECT_EQ(rec.run_id, recover_run_id(ctx));
  EXPECT_TRUE(fs::exists(store_->distilled_dir("toy10", rec.run_id) + "/manifest.json"));
  EXPECT_TRUE(fs::exists(store_->recover_dir(rec.run_id) + "/loss.csv"));
  for (const auto& [path, sha] : rec.outputs) EXPECT_EQ(sha256_file(store_->path(path)), sha) << path;

  const RunManifest lab = run_label(ctx, rec.run_id);
  ASSERT_EQ(lab.outputs.size(), 1u);
  const TensorContainer labels = read_container(store_->path(lab.outputs.begin()->first), "soft-labels");
  EXPECT_EQ(labels.tensors.at(0).n(), 20);

  const RunManifest ev = run_eval(ctx, rec.run_id);
  EXPECT_TRUE(ev.metrics.contains("test_top1"));
  const RunManifest rep = run_stage(Stage::Report, ctx);
  const std::string rdir = store_->report_dir(rep.run_id);
  for (const char* f : {"diversity.csv", "bn_discrepancy.csv", "timing.csv", "curves.csv"})
    EXPECT_TRUE(fs::exists(rdir + "/" + f)) << f;
  EXPECT_TRUE(store_->has_manifest(Stage::Report, rep.run_id));
}

TEST_F(PipelineRun, SeedSweepLedgerSharesConfigDigest) {
  const std::size_t before = store_->read_ledger().size();
  std::set<std::string> runs;
  for (std::uint64_t seed : {11, 12, 13}) {
    const PipelineContext ctx = context(seed);
    const RunManifest rec = run_recover(ctx);
    runs.insert(rec.run_id);
    run_eval(ctx, rec.run_id);
  }
  EXPECT_EQ(runs.size(), 3u);
  const auto rows = store_->read_ledger();
  ASSERT_EQ(rows.size(), before + 6);
  std::set<std::string> digests;
  std::set<std::uint64_t> seeds;
  for (std::size_t i = before; i < rows.size(); ++i) {
    digests.insert(rows[i].at("config_digest").get<std::string>());
    seeds.insert(rows[i].at("seeds").at("root").get<std::uint64_t>());
  }
  EXPECT_EQ(digests.size(), 1u);
  EXPECT_EQ(digests.count(quick_config().digest()), 1u);
  EXPECT_EQ(seeds, (std::set<std::uint64_t>{11, 12, 13}));
}

TEST_F(PipelineRun, PriorVotingWithoutPriorFileIsADependencyError) {
  const testing::ScratchDir other("noprior");
  // Same teachers through a shared cache, but no prior table in this root.
  ArtifactStore store(other.str(), store_->path("teachers"));
  const PipelineContext ctx{quick_config(), &store, 1};
  EXPECT_EQ(kind_of([&] { run_recover(ctx); }), ErrorKind::DependencyError);
  PipelineContext equal = ctx;
  equal.config.recover.voting.voter_mode = VoterMode::Equal;
  EXPECT_NO_THROW(run_recover(equal));
}

}  // namespace
}  // namespace cdistill
