// SPDX-License-Identifier: Apache-2.0
#include "cdistill/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "cdistill/analysis.hpp"
#include "cdistill/checkpoint.hpp"
#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/posteval.hpp"
#include "cdistill/prior_assign.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/softlabel.hpp"
#include "cdistill/squeeze.hpp"

namespace cdistill {

namespace fs = std::filesystem;

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string short_id(const std::string& prefix, const Json& inputs) {
  return prefix + "-" + sha256_hex(inputs.dump()).substr(0, 16);
}

const char* env_or_null(const char* name) {
  const char* v = std::getenv(name);
  return (v != nullptr && *v != '\0') ? v : nullptr;
}

// Output directory built under a sibling temp name and renamed into place, so
// a failed stage never leaves a partial directory behind.
class StagedDir {
 public:
  explicit StagedDir(std::string final_dir)
      : final_(std::move(final_dir)), tmp_(final_ + ".tmp." + std::to_string(::getpid())) {
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~StagedDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  const std::string& path() const { return tmp_; }
  void commit() {
    fs::remove_all(final_);
    fs::create_directories(fs::path(final_).parent_path());
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  std::string final_;
  std::string tmp_;
  bool committed_ = false;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
template <typename F>
void parallel_for(int n, int jobs, F fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(jobs, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct Data {
  DatasetManifest manifest;
  LabeledDataset train;
  LabeledDataset test;
};

Data load_data(const PipelineConfig& cfg) {
  Data d;
  d.manifest = resolve_manifest(cfg.dataset);
  d.train = load_split(d.manifest, "train");
  d.test = load_split(d.manifest, "test");
  return d;
}

BackboneSpec spec_for(const std::string& arch, const DatasetManifest& m) {
  return {arch, m.num_classes, m.height, m.width, m.channels};
}

// Duplicated architectures are told apart by their occurrence index, so a
// committee prefix reuses the same teachers.
SqueezeConfig member_squeeze(const PipelineConfig& cfg, int index) {
  const auto& members = cfg.committee.members;
  int occurrence = 0;
  for (int i = 0; i < index; ++i) occurrence += members[i] == members[index];
  SqueezeConfig s = cfg.squeeze;
  s.seed = derive_seed(cfg.squeeze.seed, members[index], occurrence);
  return s;
}

std::vector<TeacherRef> teachers_for(const PipelineContext& ctx, const Data& d) {
  const auto& members = ctx.config.committee.members;
  const auto ids = member_ids(members);
  const std::string train_digest = split_digest(d.train);
  std::vector<TeacherRef> out;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto scfg = member_squeeze(ctx.config, static_cast<int>(i));
    const std::string digest = teacher_digest(spec_for(members[i], d.manifest), scfg, train_digest);
    out.push_back({ids[i], members[i], digest, ctx.store->teacher_dir(d.manifest.dataset_id, members[i], digest)});
  }
  return out;
}

std::string checkpoint_path(const TeacherRef& t) { return (fs::path(t.dir) / "model.ckpt").string(); }

struct Committee {
  std::vector<TeacherRef> refs;
  std::vector<Model> models;
  std::vector<CommitteeMember> members;
};

Committee load_committee(const PipelineContext& ctx, const Data& d) {
  Committee c;
  c.refs = teachers_for(ctx, d);
  std::string missing;
  for (const auto& t : c.refs)
    if (!file_exists(checkpoint_path(t))) missing += (missing.empty() ? "" : ", ") + t.member_id + " (" + t.digest + ")";
  require(missing.empty(), ErrorKind::DependencyError, "missing teacher checkpoints: " + missing);
  c.models.reserve(c.refs.size());
  for (const auto& t : c.refs) c.models.push_back(load_checkpoint(checkpoint_path(t)));
  for (std::size_t i = 0; i < c.refs.size(); ++i) c.members.push_back({c.refs[i].member_id, &c.models[i], c.refs[i].digest});
  return c;
}

std::size_t labeling_index(const PipelineConfig& cfg, const Committee& c) {
  if (cfg.label.teacher.empty()) return 0;
  for (std::size_t i = 0; i < c.refs.size(); ++i)
    if (c.refs[i].member_id == cfg.label.teacher) return i;
  fail(ErrorKind::InvalidConfig, "label.teacher '" + cfg.label.teacher + "' is not a committee member");
}

bool needs_prior(const PipelineConfig& cfg) {
  return cfg.committee.members.size() > 1 && cfg.recover.voting.voter_mode == VoterMode::Prior;
}

RecoverConfig recover_for(const PipelineConfig& cfg) {
  RecoverConfig r = cfg.recover;
  r.seed = derive_seed(cfg.seed, "recover");
  return r;
}

PostEvalConfig eval_for(const PipelineConfig& cfg) {
  PostEvalConfig e = cfg.eval;
  e.seed = derive_seed(cfg.seed, "eval");
  return e;
}

std::string prior_digest(const ArtifactStore& store, const std::string& dataset) {
  const std::string p = store.prior_path(dataset);
  return file_exists(p) ? sha256_file(p) : "";
}

RunManifest begin(Stage stage, const std::string& run_id, const PipelineConfig& cfg) {
  RunManifest m;
  m.stage = stage;
  m.run_id = run_id;
  m.dataset_id = cfg.dataset.id;
  m.config_digests["pipeline"] = cfg.digest();
  m.seeds["root"] = cfg.seed;
  m.started = now_iso();
  return m;
}

void add_output(RunManifest& m, const ArtifactStore& store, const std::string& path) {
  std::string key = path;
  const std::string root = store.root() + "/";
  if (key.rfind(root, 0) == 0) key = key.substr(root.size());
  m.outputs[key] = sha256_file(path);
}

void add_tree(RunManifest& m, const ArtifactStore& store, const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add_output(m, store, f);
}

void finish(RunManifest& m, ArtifactStore& store) {
  m.finished = now_iso();
  store.record(m);
}

Json flatten(const Json& j, const std::string& prefix = "") {
  Json out = Json::object();
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      const Json sub = flatten(v, prefix.empty() ? k : prefix + "." + k);
      out.update(sub);
    }
  } else {
    out[prefix] = j;
  }
  return out;
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Squeeze: return "squeeze";
    case Stage::Prior: return "prior";
    case Stage::Recover: return "recover";
    case Stage::Label: return "label";
    case Stage::Eval: return "eval";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::Squeeze, Stage::Prior, Stage::Recover, Stage::Label, Stage::Eval, Stage::Report})
    if (to_string(st) == s) return st;
  fail(ErrorKind::InvalidConfig, "unknown stage '" + s + "'");
}

Json run_manifest_to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},   {"dataset_id", m.dataset_id}, {"stage", to_string(m.stage)},
          {"config_digests", m.config_digests}, {"inputs", m.inputs}, {"outputs", m.outputs},
          {"seeds", m.seeds},     {"started", m.started},       {"finished", m.finished},
          {"metrics", m.metrics}};
}

RunManifest run_manifest_from_json(const Json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id");
    m.dataset_id = j.at("dataset_id");
    m.stage = stage_from_string(j.at("stage"));
    m.config_digests = j.at("config_digests").get<std::map<std::string, std::string>>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.started = j.at("started");
    m.finished = j.at("finished");
    m.metrics = j.value("metrics", Json::object());
  } catch (const Json::exception& e) {
    fail(ErrorKind::FormatError, std::string("run manifest: ") + e.what());
  }
  return m;
}

// ------------------------------------------------------------ ArtifactStore

ArtifactStore::ArtifactStore(std::string root, std::string teacher_cache)
    : root_(std::move(root)), teacher_root_(std::move(teacher_cache)) {
  if (teacher_root_.empty()) teacher_root_ = path("teachers");
}

std::string ArtifactStore::path(const std::string& relative) const { return (fs::path(root_) / relative).string(); }

std::string ArtifactStore::teacher_dir(const std::string& dataset, const std::string& arch,
                                       const std::string& digest) const {
  return (fs::path(teacher_root_) / dataset / arch / digest).string();
}

std::string ArtifactStore::prior_path(const std::string& dataset) const { return path("priors/" + dataset + ".prior"); }

std::string ArtifactStore::distilled_dir(const std::string& dataset, const std::string& run) const {
  return path("distilled/" + dataset + "/" + run);
}

std::string ArtifactStore::recover_dir(const std::string& run) const { return path("recover/" + run); }
std::string ArtifactStore::labels_dir(const std::string& run) const { return path("labels/" + run); }
std::string ArtifactStore::eval_dir(const std::string& run) const { return path("eval/" + run); }
std::string ArtifactStore::report_dir(const std::string& run) const { return path("reports/" + run); }

std::string ArtifactStore::manifest_path(Stage stage, const std::string& run) const {
  return path("manifests/" + to_string(stage) + "/" + run + ".json");
}

void ArtifactStore::record(const RunManifest& m) {
  const Json j = run_manifest_to_json(m);
  atomic_write(manifest_path(m.stage, m.run_id), j.dump(2) + "\n");
  append_ledger({{"time", m.finished},
                 {"stage", to_string(m.stage)},
                 {"run_id", m.run_id},
                 {"dataset_id", m.dataset_id},
                 {"config_digest", m.config_digests.count("pipeline") ? m.config_digests.at("pipeline") : ""},
                 {"seeds", m.seeds},
                 {"metrics", m.metrics}});
}

void ArtifactStore::append_ledger(const Json& row) {
  std::lock_guard lock(ledger_mutex_);
  fs::create_directories(root_);
  std::ofstream out(ledger_path(), std::ios::app | std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open ledger " + ledger_path());
  out << row.dump() << '\n';
  out.flush();
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot append to ledger " + ledger_path());
}

std::vector<Json> ArtifactStore::read_ledger() const {
  std::vector<Json> rows;
  if (!file_exists(ledger_path())) return rows;
  std::istringstream in(read_file(ledger_path()));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(Json::parse(line));
  return rows;
}

RunManifest ArtifactStore::load_manifest(Stage stage, const std::string& run) const {
  const std::string p = manifest_path(stage, run);
  require(file_exists(p), ErrorKind::DependencyError, "no " + to_string(stage) + " run '" + run + "'");
  return run_manifest_from_json(Json::parse(read_file(p)));
}

bool ArtifactStore::has_manifest(Stage stage, const std::string& run) const {
  return file_exists(manifest_path(stage, run));
}

ArtifactStore open_store(const std::string& out) {
  const char* cache = env_or_null("CDISTILL_CACHE_DIR");
  return ArtifactStore(out, cache ? (fs::path(cache) / "teachers").string() : "");
}

DatasetManifest resolve_manifest(const DatasetSection& d) {
  const char* root = env_or_null("CDISTILL_DATA_ROOT");
  if (!d.manifest.empty()) {
    fs::path p(d.manifest);
    if (p.is_relative() && root) p = fs::path(root) / p;
    require(file_exists(p.string()), ErrorKind::DependencyError, "dataset manifest not found: " + p.string());
    return load_manifest(p.string());
  }
  if (root) {
    const fs::path p = fs::path(root) / d.id / "manifest.json";
    if (file_exists(p.string())) return load_manifest(p.string());
  }
  try {
    return builtin_manifest(d.id);
  } catch (const Error&) {
    fail(ErrorKind::DependencyError, "no manifest for dataset '" + d.id + "'");
  }
}

std::vector<TeacherRef> committee_teachers(const PipelineContext& ctx) {
  return teachers_for(ctx, load_data(ctx.config));
}

std::string recover_run_id(const PipelineContext& ctx) {
  const Data d = load_data(ctx.config);
  Json in = {{"dataset", d.manifest.dataset_id}, {"train", split_digest(d.train)}, {"ipc", ctx.config.ipc},
             {"recover", recover_config_digest(ctx.config.recover)}, {"seed", ctx.config.seed}};
  for (const auto& t : teachers_for(ctx, d)) in["teachers"].push_back(t.member_id + ":" + t.digest);
  if (needs_prior(ctx.config)) in["prior"] = prior_digest(*ctx.store, d.manifest.dataset_id);
  return short_id("recover", in);
}

std::string eval_run_id(const PipelineContext& ctx, const std::string& distilled_run) {
  Json e = ctx.config.eval.to_json();
  e.erase("seed");
  const Json in = {{"distilled", distilled_run},
                   {"eval", e},
                   {"teacher", ctx.config.label.teacher},
                   {"committee", ctx.config.committee.members},
                   {"squeeze", ctx.config.squeeze.to_json()},
                   {"seed", ctx.config.seed}};
  return short_id("eval", in);
}

// ------------------------------------------------------------------ stages

RunManifest run_squeeze(const PipelineContext& ctx) {
  const Data d = load_data(ctx.config);
  const auto refs = teachers_for(ctx, d);
  Json in = Json::array();
  for (const auto& t : refs) in.push_back(t.digest);
  RunManifest m = begin(Stage::Squeeze, short_id("squeeze", in), ctx.config);
  m.config_digests["squeeze"] = sha256_hex(ctx.config.squeeze.to_json().dump());
  m.inputs["train"] = split_digest(d.train);

  std::vector<Json> stats(refs.size());
  parallel_for(static_cast<int>(refs.size()), ctx.jobs, [&](int i) {
    const auto& t = refs[i];
    if (file_exists(checkpoint_path(t))) {
      stats[i] = Json::parse(read_file((fs::path(t.dir) / "meta.json").string()));
      stats[i]["cached"] = true;
      return;
    }
    const SqueezeConfig scfg = member_squeeze(ctx.config, i);
    TrainedTeacher tt = pretrain(spec_for(t.arch_id, d.manifest), d.train, d.test, scfg);
    const Json meta = {{"member_id", t.member_id},       {"arch_id", t.arch_id},
                       {"digest", t.digest},             {"dataset_id", d.manifest.dataset_id},
                       {"train_accuracy", tt.train_accuracy}, {"test_accuracy", tt.test_accuracy},
                       {"config", scfg.to_json()},        {"seed", scfg.seed},
                       {"epoch_loss", tt.epoch_loss}};
    StagedDir staged(t.dir);
    save_checkpoint(tt.model, (fs::path(staged.path()) / "model.ckpt").string(), meta);
    atomic_write((fs::path(staged.path()) / "meta.json").string(), meta.dump(2) + "\n");
    staged.commit();
    stats[i] = meta;
    stats[i]["cached"] = false;
  });
  for (std::size_t i = 0; i < refs.size(); ++i) {
    add_output(m, *ctx.store, checkpoint_path(refs[i]));
    add_output(m, *ctx.store, (fs::path(refs[i].dir) / "meta.json").string());
    m.seeds[refs[i].member_id] = stats[i].at("seed").get<std::uint64_t>();
    m.metrics[refs[i].member_id] = {{"train_accuracy", stats[i].at("train_accuracy")},
                                    {"test_accuracy", stats[i].at("test_accuracy")},
                                    {"cached", stats[i].at("cached")}};
  }
  finish(m, *ctx.store);
  return m;
}

RunManifest run_prior(const PipelineContext& ctx) {
  const auto& cfg = ctx.config;
  const Data d = load_data(cfg);
  const std::string ds = d.manifest.dataset_id;
  PriorTable table;
  RunManifest m;
  if (cfg.prior.source == PriorSource::Reference) {
    require(file_exists(cfg.prior.reference_path), ErrorKind::DependencyError,
            "reference prior fixture not found: " + cfg.prior.reference_path);
    table = load_reference_priors(cfg.prior.reference_path, ds);
    m = begin(Stage::Prior, short_id("prior", {{"reference", sha256_file(cfg.prior.reference_path)}, {"dataset", ds}}),
              cfg);
    m.inputs["reference"] = sha256_file(cfg.prior.reference_path);
  } else {
    Committee c = load_committee(ctx, d);
    RecoverConfig r = recover_for(cfg);
    if (cfg.prior.iterations > 0) r.iterations = cfg.prior.iterations;
    PostEvalConfig e = eval_for(cfg);
    if (cfg.prior.eval_epochs > 0) e.epochs = cfg.prior.eval_epochs;
    const int ipc = cfg.prior.ipc > 0 ? cfg.prior.ipc : d.manifest.reference_ipc;
    const std::uint64_t seed = derive_seed(cfg.seed, "prior");
    PriorStages stages = default_prior_stages(d.train, d.test, r, e);
    Json in = {{"stages", stages.config_digest}, {"ipc", ipc}, {"seed", seed}};
    for (const auto& t : c.refs) in["teachers"].push_back(t.digest);
    m = begin(Stage::Prior, short_id("prior", in), cfg);
    for (const auto& t : c.refs) m.inputs["teacher:" + t.member_id] = t.digest;
    m.config_digests["prior_stages"] = stages.config_digest;
    m.seeds["prior"] = seed;
    table = assign_prior_performance(c.members, ds, ipc, e.student_arch, seed, stages);
  }
  save_prior(table, ctx.store->prior_path(ds));
  add_output(m, *ctx.store, ctx.store->prior_path(ds));
  for (const auto& [id, alpha] : table.entries) m.metrics[id] = alpha;
  finish(m, *ctx.store);
  return m;
}

RunManifest run_recover(const PipelineContext& ctx) {
  const auto& cfg = ctx.config;
  const Data d = load_data(cfg);
  Committee c = load_committee(ctx, d);
  const std::string ds = d.manifest.dataset_id;
  std::optional<PriorTable> prior;
  if (needs_prior(cfg)) {
    require(file_exists(ctx.store->prior_path(ds)), ErrorKind::DependencyError,
            "prior voting needs " + ctx.store->prior_path(ds) + " (run the prior stage)");
    prior = load_prior(ctx.store->prior_path(ds));
    for (const auto& t : c.refs)
      require(prior->entries.count(t.member_id) > 0, ErrorKind::DependencyError,
              "prior table has no entry for member " + t.member_id);
  }
  const std::string run = recover_run_id(ctx);
  RunManifest m = begin(Stage::Recover, run, cfg);
  m.config_digests["recover"] = recover_config_digest(cfg.recover);
  m.inputs["train"] = split_digest(d.train);
  for (const auto& t : c.refs) m.inputs["teacher:" + t.member_id] = t.digest;
  if (prior) m.inputs["prior"] = prior_digest(*ctx.store, ds);
  const RecoverConfig r = recover_for(cfg);
  m.seeds["recover"] = r.seed;

  const auto t0 = std::chrono::steady_clock::now();
  const SyntheticSet s = distill(d.train, c.members, prior ? &*prior : nullptr, cfg.ipc, r, ctx.jobs);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string out_dir = ctx.store->distilled_dir(ds, run);
  {
    StagedDir staged(out_dir);
    export_synthetic(s, staged.path());
    staged.commit();
  }
  Json timing = Json::array();
  for (const auto& p : s.provenance) timing.push_back({{"marks_ms", p.timing_marks}, {"chunk_sizes", p.chunk_sizes}});
  {
    StagedDir staged(ctx.store->recover_dir(run));
    atomic_write((fs::path(staged.path()) / "loss.csv").string(), loss_csv(s));
    atomic_write((fs::path(staged.path()) / "timing.json").string(), timing.dump() + "\n");
    staged.commit();
  }
  add_tree(m, *ctx.store, out_dir);
  add_tree(m, *ctx.store, ctx.store->recover_dir(run));
  m.metrics["images_sha256"] = sha256_hex(s.images);
  m.metrics["seconds"] = seconds;
  if (!s.provenance.empty() && !s.provenance.back().trace.empty())
    m.metrics["final_loss"] = s.provenance.back().trace.back().loss.total;
  finish(m, *ctx.store);
  return m;
}

RunManifest run_label(const PipelineContext& ctx, const std::string& distilled_run) {
  const auto& cfg = ctx.config;
  const Data d = load_data(cfg);
  Committee c = load_committee(ctx, d);
  const std::string dir = ctx.store->distilled_dir(d.manifest.dataset_id, distilled_run);
  const SyntheticSet s = load_synthetic(dir);
  const std::size_t ti = labeling_index(cfg, c);
  const int bs = cfg.eval.effective_batch_size(s.images.n());
  const Json in = {{"distilled", distilled_run},
                   {"teacher", c.refs[ti].digest},
                   {"mode", to_string(cfg.eval.labels.mode)},
                   {"epsilon", cfg.eval.labels.epsilon},
                   {"batch", bs}};
  RunManifest m = begin(Stage::Label, short_id("label", in), cfg);
  m.inputs["distilled"] = sha256_hex(s.images);
  m.inputs["teacher:" + c.refs[ti].member_id] = c.refs[ti].digest;

  TensorContainer out;
  out.kind = "soft-labels";
  Json digests = Json::array();
  std::vector<Tensor> parts;
  for (int start = 0; start < s.images.n(); start += bs) {
    std::vector<int> idx;
    for (int i = start; i < std::min(start + bs, s.images.n()); ++i) idx.push_back(i);
    const Tensor batch = gather(s.images, idx);
    // A trailing batch of one has no batch statistics; fall back to running.
    SoftLabelConfig lc = cfg.eval.labels;
    if (batch.n() < 2) lc.mode = LabelMode::Running;
    const SoftLabelBatch sl = soft_labels(c.models[ti], batch, lc, c.refs[ti].digest);
    digests.push_back(sl.batch_digest);
    parts.push_back(sl.logits);
  }
  out.tensors.push_back(concat_batch(parts));
  out.meta = {{"distilled_run", distilled_run}, {"teacher", c.refs[ti].member_id},
              {"mode", to_string(cfg.eval.labels.mode)}, {"batch_size", bs}, {"batch_digests", digests}};
  const std::string path = (fs::path(ctx.store->labels_dir(m.run_id)) / "soft_labels.bin").string();
  write_container(path, out);
  add_output(m, *ctx.store, path);
  finish(m, *ctx.store);
  return m;
}

RunManifest run_eval(const PipelineContext& ctx, const std::string& distilled_run) {
  const auto& cfg = ctx.config;
  const Data d = load_data(cfg);
  Committee c = load_committee(ctx, d);
  const SyntheticSet s = load_synthetic(ctx.store->distilled_dir(d.manifest.dataset_id, distilled_run));
  const std::size_t ti = labeling_index(cfg, c);
  const std::string run = eval_run_id(ctx, distilled_run);
  RunManifest m = begin(Stage::Eval, run, cfg);
  Json e = cfg.eval.to_json();
  e.erase("seed");
  m.config_digests["eval"] = sha256_hex(e.dump());
  m.inputs["distilled"] = sha256_hex(s.images);
  m.inputs["distilled_run"] = distilled_run;
  m.inputs["teacher:" + c.refs[ti].member_id] = c.refs[ti].digest;
  const PostEvalConfig ecfg = eval_for(cfg);
  m.seeds["eval"] = ecfg.seed;

  const PostEvalResult r = train_student(s, c.models[ti], d.test, ecfg);
  {
    StagedDir staged(ctx.store->eval_dir(run));
    atomic_write((fs::path(staged.path()) / "trace.csv").string(), r.trace.to_csv());
    const Json result = {{"test_top1", r.test_top1}, {"distilled_run", distilled_run},
                         {"teacher", c.refs[ti].member_id}, {"config", cfg.eval.to_json()}};
    atomic_write((fs::path(staged.path()) / "result.json").string(), result.dump(2) + "\n");
    staged.commit();
  }
  add_tree(m, *ctx.store, ctx.store->eval_dir(run));
  m.metrics["test_top1"] = r.test_top1;
  finish(m, *ctx.store);
  return m;
}

RunManifest run_report(const PipelineContext& ctx, const std::vector<std::string>& distilled_runs,
                       const std::vector<std::string>& eval_runs) {
  require(!distilled_runs.empty() || !eval_runs.empty(), ErrorKind::DependencyError, "report needs at least one run");
  const auto& cfg = ctx.config;
  const Data d = load_data(cfg);
  Committee c = load_committee(ctx, d);
  const Model& embed = c.models[labeling_index(cfg, c)];
  const Json in = {{"distilled", distilled_runs}, {"eval", eval_runs}, {"embed", c.refs[labeling_index(cfg, c)].digest}};
  RunManifest m = begin(Stage::Report, short_id("report", in), cfg);
  StagedDir staged(ctx.store->report_dir(m.run_id));
  const fs::path dir(staged.path());

  std::ostringstream div, gaps, timing;
  div << "run,class,mean_cosine\n";
  gaps << "run,source,layer,mean_gap,var_gap\n";
  timing << "run,ms_per_image_iteration\n";
  for (const auto& run : distilled_runs) {
    const SyntheticSet s = load_synthetic(ctx.store->distilled_dir(d.manifest.dataset_id, run));
    m.inputs["distilled:" + run] = sha256_hex(s.images);
    if (s.ipc >= 2) {
      const DiversityReport dr = intraclass_cosine(s, embed);
      for (const auto& [cls, v] : dr.per_class) div << run << ',' << cls << ',' << v << '\n';
      div << run << ",overall," << dr.overall_mean << '\n';
      m.metrics[run]["intraclass_cosine"] = dr.overall_mean;
    }
    const DiscrepancyComparison dc = compare_discrepancy(s.images, d.train.images, embed, 100, 8, cfg.seed);
    for (std::size_t l = 0; l < dc.synthetic.per_layer.size(); ++l) {
      const auto& gs = dc.synthetic.per_layer[l];
      const auto& gr = dc.real.per_layer[l];
      gaps << run << ",synthetic," << gs.layer_id << ',' << gs.mean_gap << ',' << gs.var_gap << '\n';
      gaps << run << ",real," << gr.layer_id << ',' << gr.mean_gap << ',' << gr.var_gap << '\n';
    }
    m.metrics[run]["bn_batch_size"] = dc.batch_size;
    m.metrics[run]["bn_mean_gap_fraction_above_real"] = dc.mean_fraction_above;
    m.metrics[run]["bn_var_gap_fraction_above_real"] = dc.var_fraction_above;
    const std::string tpath = (fs::path(ctx.store->recover_dir(run)) / "timing.json").string();
    if (file_exists(tpath)) {
      double sum = 0;
      int count = 0;
      for (const auto& round : Json::parse(read_file(tpath))) {
        const auto marks = round.at("marks_ms").get<std::vector<std::vector<double>>>();
        const auto sizes = round.at("chunk_sizes").get<std::vector<int>>();
        for (std::size_t k = 0; k < marks.size() && k < sizes.size(); ++k) {
          if (marks[k].size() < 2) continue;
          sum += timing_probe({marks[k], sizes[k]});
          ++count;
        }
      }
      if (count > 0) {
        timing << run << ',' << sum / count << '\n';
        m.metrics[run]["ms_per_image_iteration"] = sum / count;
      }
    }
  }
  atomic_write((dir / "diversity.csv").string(), div.str());
  atomic_write((dir / "bn_discrepancy.csv").string(), gaps.str());
  atomic_write((dir / "timing.csv").string(), timing.str());

  if (!eval_runs.empty()) {
    std::vector<TrainingTrace> traces;
    for (const auto& run : eval_runs) {
      const std::string p = (fs::path(ctx.store->eval_dir(run)) / "trace.csv").string();
      require(file_exists(p), ErrorKind::DependencyError, "no eval trace for run " + run);
      traces.push_back(TrainingTrace::from_csv(read_file(p)));
      m.inputs["eval:" + run] = sha256_file(p);
    }
    emit_curves(traces, eval_runs, dir.string());
  }
  staged.commit();
  add_tree(m, *ctx.store, ctx.store->report_dir(m.run_id));
  finish(m, *ctx.store);
  return m;
}

RunManifest run_stage(Stage stage, const PipelineContext& ctx, const std::vector<std::string>& runs) {
  require(ctx.store != nullptr, ErrorKind::InvalidConfig, "pipeline context has no artifact store");
  ctx.config.validate();
  auto one_run = [&]() -> std::string {
    if (runs.empty()) return recover_run_id(ctx);
    require(runs.size() == 1, ErrorKind::InvalidConfig, to_string(stage) + " takes a single run");
    return runs.front();
  };
  switch (stage) {
    case Stage::Squeeze: return run_squeeze(ctx);
    case Stage::Prior: return run_prior(ctx);
    case Stage::Recover: return run_recover(ctx);
    case Stage::Label: return run_label(ctx, one_run());
    case Stage::Eval: return run_eval(ctx, one_run());
    case Stage::Report: {
      const std::vector<std::string> distilled = runs.empty() ? std::vector<std::string>{recover_run_id(ctx)} : runs;
      std::vector<std::string> evals;
      for (const auto& r : distilled) {
        const std::string e = eval_run_id(ctx, r);
        if (ctx.store->has_manifest(Stage::Eval, e)) evals.push_back(e);
      }
      return run_report(ctx, distilled, evals);
    }
  }
  fail(ErrorKind::InvalidConfig, "unknown stage");
}

// ---------------------------------------------------------------- ablations

std::vector<std::string> ablation_presets() {
  return {"n2-vs-n3", "voter-modes", "bssl-on-off", "committee-growth", "sre2lpp-baseline"};
}

std::vector<AblationVariant> ablation_preset(const std::string& name, const PipelineConfig& base) {
  std::vector<AblationVariant> out;
  const auto& members = base.committee.members;
  if (name == "n2-vs-n3") {
    require(members.size() >= 3, ErrorKind::InvalidConfig, "n2-vs-n3 needs a committee of at least 3");
    for (int n : {2, 3}) {
      PipelineConfig c = base;
      c.recover.voting.N = n;
      out.push_back({"N=" + std::to_string(n), c});
    }
  } else if (name == "voter-modes") {
    for (VoterMode v : {VoterMode::Prior, VoterMode::Equal, VoterMode::Random}) {
      PipelineConfig c = base;
      c.recover.voting.voter_mode = v;
      out.push_back({to_string(v), c});
    }
  } else if (name == "bssl-on-off") {
    for (LabelMode l : {LabelMode::BatchSpecific, LabelMode::Running}) {
      PipelineConfig c = base;
      c.eval.labels.mode = l;
      out.push_back({to_string(l), c});
    }
  } else if (name == "committee-growth") {
    for (std::size_t k = 1; k <= members.size(); ++k) {
      if (k > 1 && static_cast<int>(k) < base.recover.voting.N) continue;
      PipelineConfig c = base;
      c.committee.members.assign(members.begin(), members.begin() + k);
      out.push_back({"k=" + std::to_string(k), c});
    }
  } else if (name == "sre2lpp-baseline") {
    PipelineConfig single = base;
    single.committee.members = {members.front()};
    out.push_back({"sre2lpp", single});
    out.push_back({"cv-dd", base});
  } else {
    fail(ErrorKind::UnknownPreset, "unknown ablation preset '" + name + "'");
  }
  for (const auto& v : out) v.config.validate();
  return out;
}

RunManifest run_ablation(const std::string& preset, const PipelineContext& ctx, std::vector<AblationRow>* rows) {
  const auto variants = ablation_preset(preset, ctx.config);
  std::vector<AblationRow> out;
  for (const auto& v : variants) {
    PipelineContext vc = ctx;
    vc.config = v.config;
    run_squeeze(vc);
    if (needs_prior(vc.config) && !file_exists(ctx.store->prior_path(resolve_manifest(vc.config.dataset).dataset_id)))
      run_prior(vc);
    const RunManifest rec = run_recover(vc);
    const RunManifest ev = run_eval(vc, rec.run_id);
    out.push_back({v.label, rec.run_id, ev.run_id, ev.metrics.at("test_top1").get<double>()});
  }
  Json in = {{"preset", preset}};
  for (const auto& r : out) in["evals"].push_back(r.eval_run);
  RunManifest m = begin(Stage::Report, short_id("ablate-" + preset, in), ctx.config);
  std::ostringstream csv;
  csv.precision(10);
  csv << "label,distilled_run,eval_run,test_top1\n";
  for (const auto& r : out) {
    csv << r.label << ',' << r.distilled_run << ',' << r.eval_run << ',' << r.test_top1 << '\n';
    m.inputs["eval:" + r.eval_run] = r.eval_run;
    m.metrics[r.label] = r.test_top1;
  }
  const std::string path = (fs::path(ctx.store->report_dir(m.run_id)) / "summary.csv").string();
  atomic_write(path, csv.str());
  add_output(m, *ctx.store, path);
  finish(m, *ctx.store);
  if (rows) *rows = std::move(out);
  return m;
}

std::vector<std::string> config_diff(const PipelineConfig& a, const PipelineConfig& b) {
  const Json fa = flatten(a.to_json());
  const Json fb = flatten(b.to_json());
  std::vector<std::string> out;
  for (const auto& [k, v] : fa.items())
    if (!fb.contains(k) || fb.at(k) != v) out.push_back(k);
  for (const auto& [k, v] : fb.items())
    if (!fa.contains(k)) out.push_back(k);
  return out;
}

}  // namespace cdistill
