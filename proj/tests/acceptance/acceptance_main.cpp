// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cdistill/analysis.hpp"
#include "cdistill/checkpoint.hpp"
#include "cdistill/config.hpp"
#include "cdistill/error.hpp"
#include "cdistill/io.hpp"
#include "cdistill/losses.hpp"
#include "cdistill/pipeline.hpp"
#include "cdistill/posteval.hpp"
#include "cdistill/softlabel.hpp"
#include "cdistill/voting.hpp"
#include "testing.hpp"

namespace fs = std::filesystem;
using namespace cdistill;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct Paths {
  std::string source;
  std::string work;
  std::string cache;
  int jobs = 1;
};

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

// ---------------------------------------------------------------------------
// 1. Voting weights

void criterion_weights(Outcome& o) {
  Rng rng(11);
  std::normal_distribution<double> nd(50.0, 20.0);
  double worst_sum = 0, worst_shift = 0;
  bool ordered = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + trial % 5;
    std::vector<Scalar> a(m);
    for (auto& v : a) v = nd(rng);
    const Scalar temp = std::pow(10.0, -2.0 + 4.0 * (trial % 17) / 16.0);
    const auto w = ppg_weights(a, temp, VoterMode::Prior);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
    std::vector<Scalar> shifted = a;
    for (auto& v : shifted) v += 37.5;
    const auto ws = ppg_weights(shifted, temp, VoterMode::Prior);
    for (int i = 0; i < m; ++i) {
      worst_shift = std::max(worst_shift, std::abs(w[i] - ws[i]));
      for (int j = 0; j < m; ++j)
        if (a[i] > a[j] && w[i] < w[j]) ordered = false;
    }
  }
  o.check(worst_sum <= 1e-9, "sum to one");
  o.check(worst_shift <= 1e-12, "shift invariance");
  o.check(ordered, "order preservation");

  const std::vector<Scalar> pair{64.00, 51.62};
  const auto hot = ppg_weights(pair, 1e6, VoterMode::Prior);
  const auto cold = ppg_weights(pair, 1e-3, VoterMode::Prior);
  const auto ref = ppg_weights(pair, 4.0, VoterMode::Prior);
  o.check(std::abs(hot[0] - 0.5) <= 1e-5 && std::abs(hot[1] - 0.5) <= 1e-5, "T=1e6 uniform");
  o.check(cold[0] >= 0.999, "T=1e-3 concentrates");
  // softmax(64.00/4, 51.62/4), evaluated in extended precision.
  o.check(std::abs(ref[0] - 0.95668602815474228) <= 1e-12, "reference pair");
  o.detail << "max|sum-1|=" << worst_sum << " max shift diff=" << worst_shift << " T=1e6 w=(" << fmt(hot[0], 7)
           << "," << fmt(hot[1], 7) << ") T=1e-3 w0=" << fmt(cold[0], 7) << " T=4 w0=" << fmt(ref[0], 12);
}

// ---------------------------------------------------------------------------
// 2. Batch statistics and the running-statistics recurrence

void criterion_stats(Outcome& o) {
  double worst = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const int n = 1 + int(t % 7), c = 1 + int(t % 4), h = 1 + int(t % 5), w = 2 + int(t % 3);
    const Tensor x = random_tensor({n, c, h, w}, 100 + t, 1.0 + double(t));
    const Scalar eps = 1e-5;
    const BatchMoments m = batch_stats(x, eps);
    for (int ch = 0; ch < c; ++ch) {
      long double s = 0, q = 0;
      const long double cnt = n * h * w;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < h; ++b)
          for (int d = 0; d < w; ++d) s += x.at(a, ch, b, d);
      const long double mu = s / cnt;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < h; ++b)
          for (int d = 0; d < w; ++d) q += (x.at(a, ch, b, d) - mu) * (x.at(a, ch, b, d) - mu);
      const double var = double(q / cnt + eps);
      worst = std::max(worst, std::abs(m.mean[ch] - double(mu)) / std::max(1.0, std::abs(double(mu))));
      worst = std::max(worst, std::abs(m.var[ch] - var) / var);
    }
  }
  o.check(worst <= 1e-6, "batch moments");

  // Replay a sequence of updates by hand and through the model.
  Model net = testing::tiny_bn_net(4);
  BNStatistics expected = net.running_stats();
  bool exact = true;
  for (int step = 0; step < 5; ++step) {
    const ProbeCapture cap = capture_batch_stats(net, random_tensor({6, 3, 6, 6}, 200 + step));
    for (std::size_t l = 0; l < expected.layers.size(); ++l) {
      BatchMoments run{expected.layers[l].mean, expected.layers[l].var};
      const BatchMoments b{cap.stats.layers[l].mean, cap.stats.layers[l].var};
      run = running_stat_update(run, b, 0.9);
      for (std::size_t k = 0; k < run.mean.size(); ++k) {
        exact = exact && run.mean[k] == 0.9 * expected.layers[l].mean[k] + (1 - 0.9) * b.mean[k];
        exact = exact && run.var[k] == 0.9 * expected.layers[l].var[k] + (1 - 0.9) * b.var[k];
      }
      expected.layers[l].mean = run.mean;
      expected.layers[l].var = run.var;
    }
    net.apply_running_update(cap.stats, 0.9);
  }
  o.check(exact, "recurrence replay");
  o.check(net.running_stats() == expected, "model update matches replay");

  const BatchMoments flat = batch_stats(Tensor(3, 2, 4, 4, -1.25), 1e-5);
  o.check(flat.var[0] == 1e-5 && flat.var[1] == 1e-5, "constant batch variance");
  o.detail << "max rel err=" << worst << " replay exact=" << (exact ? "yes" : "no");
}

// ---------------------------------------------------------------------------
// 3. Synthesis gradients

void criterion_gradients(Outcome& o) {
  const Model a = testing::tiny_bn_net(21);
  const Model b = testing::tiny_bn_net(22);
  const Tensor x = random_tensor({4, 3, 6, 6}, 23);
  const std::vector<int> y{0, 1, 2, 1};
  RecoverLossOptions opt;
  opt.lambda_bn = 0.5;  // large enough that the statistic term is visible

  Tensor g;
  recover_loss(a, x, y, opt, &g);
  const Tensor fd = testing::numeric_gradient([&](const Tensor& v) { return recover_loss(a, v, y, opt).composite; }, x);
  const double e1 = testing::max_relative_error(g, fd);

  const std::vector<WeightedMember> members{{&a, "a", 0.7}, {&b, "b", 0.3}};
  Tensor gc;
  committee_loss(members, x, y, opt, &gc);
  const Tensor fdc =
      testing::numeric_gradient([&](const Tensor& v) { return committee_loss(members, v, y, opt).total; }, x);
  const double e2 = testing::max_relative_error(gc, fdc);

  Tensor ga, gb;
  recover_loss(a, x, y, opt, &ga);
  recover_loss(b, x, y, opt, &gb);
  Tensor sum = ga;
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 0.7 * ga[i] + 0.3 * gb[i];
  const double e3 = testing::max_relative_error(gc, sum);

  o.check(e1 <= 1e-4, "recover_loss finite differences");
  o.check(e2 <= 1e-4, "committee_loss finite differences");
  o.check(e3 <= 1e-6, "weighted gradient sum");
  o.detail << "member fd rel=" << e1 << " committee fd rel=" << e2 << " weighted-sum rel=" << e3;
}

// ---------------------------------------------------------------------------
// 4. Batch-specific soft labels

void criterion_bssl(Outcome& o) {
  Model t = testing::tiny_bn_net(31);
  const std::string before = t.digest();
  for (int k = 0; k < 4; ++k) bssl_labels(t, random_tensor({5, 3, 6, 6}, 300 + k), SoftLabelConfig{});
  o.check(t.digest() == before, "teacher bit-identical");

  const Tensor x = random_tensor({6, 3, 6, 6}, 310);
  const std::vector<int> perm{4, 2, 0, 5, 1, 3};
  const Tensor l = bssl_labels(t, x, {}).logits;
  const Tensor lp = bssl_labels(t, gather(x, perm), {}).logits;
  double perm_err = 0;
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 3; ++k) perm_err = std::max(perm_err, std::abs(lp.at(i, k, 0, 0) - l.at(perm[i], k, 0, 0)));
  o.check(perm_err <= 1e-12, "permutation invariance");

  // One image labeled next to two different companions.
  const Tensor img = random_tensor({1, 3, 6, 6}, 320);
  const std::vector<Tensor> b1{img, random_tensor({1, 3, 6, 6}, 321)};
  const std::vector<Tensor> b2{img, random_tensor({1, 3, 6, 6}, 322, 3.0)};
  const Tensor l1 = bssl_labels(t, concat_batch(b1), {}).logits;
  const Tensor l2 = bssl_labels(t, concat_batch(b2), {}).logits;
  double composition = 0;
  for (int k = 0; k < 3; ++k) composition = std::max(composition, std::abs(l1.at(0, k, 0, 0) - l2.at(0, k, 0, 0)));
  o.check(composition > 1e-6, "labels depend on batch composition");

  // BN -> pooling -> linear head has a closed form in the batch moments.
  Sequential f;
  f.emplace<BatchNorm2d>(3);
  f.emplace<GlobalAvgPool>();
  Model m({"bn-only", 4, 5, 5, 3}, std::move(f), Linear(3, 4));
  Rng rng(33);
  for (const auto& p : m.parameters()) testing::randomize(*p.value, rng, 1.0);
  const Tensor z = random_tensor({7, 3, 5, 5}, 34, 2.0);
  SoftLabelConfig cfg;
  const Tensor logits = bssl_labels(m, z, cfg).logits;
  const BatchMoments mo = batch_stats(z, cfg.epsilon);
  BatchNorm2d& bn = m.norm_layer(0);
  const auto params = m.parameter_values();
  const Tensor& W = *params[2];
  const Tensor& bias = *params[3];
  double closed = 0;
  for (int n = 0; n < 7; ++n)
    for (int k = 0; k < 4; ++k) {
      double v = bias[k];
      for (int c = 0; c < 3; ++c) {
        double pooled = 0;
        for (int i = 0; i < 25; ++i) pooled += (z.at(n, c, i / 5, i % 5) - mo.mean[c]) / std::sqrt(mo.var[c]);
        v += W.at(k, c, 0, 0) * (bn.gamma()[c] * pooled / 25 + bn.beta()[c]);
      }
      closed = std::max(closed, std::abs(logits.at(n, k, 0, 0) - v) / std::max(1.0, std::abs(v)));
    }
  o.check(closed <= 1e-6, "closed-form standardization");
  o.detail << "perm err=" << perm_err << " composition delta=" << composition << " closed-form rel=" << closed;
}

// ---------------------------------------------------------------------------
// 5 and 7. Desk-scale distillation on shapes10

struct ArmResult {
  double test_top1 = 0;
  std::string distilled_run;
  std::string eval_run;
};

struct Desk {
  ArtifactStore* store = nullptr;
  PipelineConfig base;
  int jobs = 1;

  PipelineContext ctx(const PipelineConfig& c) const { return {c, store, jobs}; }

  ArmResult arm(const PipelineConfig& c) const {
    const auto t0 = std::chrono::steady_clock::now();
    const RunManifest rec = run_recover(ctx(c));
    const RunManifest ev = run_eval(ctx(c), rec.run_id);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "  arm seed=" << c.seed << " " << rec.run_id << " top1=" << ev.metrics.at("test_top1").get<double>()
              << " (" << fmt(s, 0) << "s)\n";
    return {ev.metrics.at("test_top1").get<double>(), rec.run_id, ev.run_id};
  }
  ArmResult relabel(const PipelineConfig& c, const std::string& distilled_run) const {
    const RunManifest ev = run_eval(ctx(c), distilled_run);
    return {ev.metrics.at("test_top1").get<double>(), distilled_run, ev.run_id};
  }
};

// Mean train and test top-1 over the final `tail` epochs of an eval trace.
std::pair<double, double> tail_accuracy(const ArtifactStore& store, const std::string& eval_run, int tail) {
  const TrainingTrace t = TrainingTrace::from_csv(read_file(store.eval_dir(eval_run) + "/trace.csv"));
  std::vector<double> tr, te;
  for (std::size_t i = t.per_epoch.size() - std::size_t(tail); i < t.per_epoch.size(); ++i) {
    tr.push_back(t.per_epoch[i].train_top1);
    te.push_back(t.per_epoch[i].test_top1);
  }
  return {mean(tr), mean(te)};
}

struct DeskOutputs {
  std::string cvdd_seed0;
  std::string single_seed0;
  std::string teacher_ckpt;
  DatasetManifest manifest;
};

void criterion_desk(const Paths& p, Outcome& o, DeskOutputs& out) {
  PipelineConfig cfg = load_config(p.source + "/data/configs/shapes10.yaml");
  cfg.committee.members = {"tiny-cnn", "tiny-cnn", "tiny-cnn"};
  cfg.ipc = 10;
  cfg.recover.iterations = 500;
  cfg.eval.epochs = 100;
  cfg.eval.test_tail = 10;
  cfg.recover.voting.voter_mode = VoterMode::Prior;
  cfg.eval.labels.mode = LabelMode::BatchSpecific;

  const std::string root = p.work + "/desk";
  fs::remove_all(root);
  ArtifactStore store(root, p.cache + "/teachers");
  Desk desk{&store, cfg, p.jobs};
  run_squeeze(desk.ctx(cfg));
  run_prior(desk.ctx(cfg));
  const auto teachers = committee_teachers(desk.ctx(cfg));
  out.teacher_ckpt = teachers.front().dir + "/model.ckpt";
  out.manifest = resolve_manifest(cfg.dataset);

  std::vector<double> cv, running, noise, random, single;
  std::vector<double> cv_train, cv_test, single_train, single_test;
  for (std::uint64_t seed : {0, 1, 2}) {
    PipelineConfig c = cfg;
    c.seed = seed;
    const ArmResult a = desk.arm(c);
    cv.push_back(a.test_top1);
    const auto [tr, te] = tail_accuracy(store, a.eval_run, 10);
    cv_train.push_back(tr);
    cv_test.push_back(te);
    if (seed == 0) out.cvdd_seed0 = store.distilled_dir(cfg.dataset.id, a.distilled_run);

    PipelineConfig r = c;
    r.eval.labels.mode = LabelMode::Running;
    running.push_back(desk.relabel(r, a.distilled_run).test_top1);

    PipelineConfig n = c;
    n.recover.init_mode = InitMode::GaussianNoise;
    n.recover.iterations = 0;
    noise.push_back(desk.arm(n).test_top1);

    PipelineConfig v = c;
    v.recover.voting.voter_mode = VoterMode::Random;
    random.push_back(desk.arm(v).test_top1);

    PipelineConfig s = c;
    s.committee.members = {"tiny-cnn"};
    s.recover.voting.voter_mode = VoterMode::Equal;  // one member: weight 1 in every mode
    const ArmResult sa = desk.arm(s);
    single.push_back(sa.test_top1);
    const auto [str, ste] = tail_accuracy(store, sa.eval_run, 10);
    single_train.push_back(str);
    single_test.push_back(ste);
    if (seed == 0) out.single_seed0 = store.distilled_dir(cfg.dataset.id, sa.distilled_run);
  }

  const Model embed = load_checkpoint(out.teacher_ckpt);
  const double div_cv = intraclass_cosine(load_synthetic(out.cvdd_seed0), embed).overall_mean;
  const double div_single = intraclass_cosine(load_synthetic(out.single_seed0), embed).overall_mean;

  o.check(mean(cv) - mean(noise) >= 10.0, "(a) beats noise by 10 points");
  o.check(mean(cv) - mean(running) >= 1.0, "(b) batch-specific labels beat running labels by 1 point");
  o.check(mean(cv) >= mean(random), "(c) prior voter at least matches random voter");
  o.check(div_cv < div_single, "(d) committee set more diverse");
  o.check(mean(cv_train) < mean(single_train), "(e) lower train accuracy");
  o.check(mean(cv_test) > mean(single_test), "(e) higher test accuracy");
  o.detail << "cv-dd=" << fmt(mean(cv), 2) << " noise=" << fmt(mean(noise), 2) << " running=" << fmt(mean(running), 2)
           << " random=" << fmt(mean(random), 2) << " single=" << fmt(mean(single), 2) << " cos(cv-dd)="
           << fmt(div_cv, 4) << " cos(single)=" << fmt(div_single, 4) << " tail train " << fmt(mean(cv_train), 2)
           << "/" << fmt(mean(single_train), 2) << " tail test " << fmt(mean(cv_test), 2) << "/"
           << fmt(mean(single_test), 2);
}

void criterion_discrepancy(const DeskOutputs& d, Outcome& o) {
  if (d.teacher_ckpt.empty()) {
    o.check(false, "distillation runs unavailable");
    return;
  }
  const Model teacher = load_checkpoint(d.teacher_ckpt);
  const LabeledDataset train = load_split(d.manifest, "train");
  for (const auto& [label, dir] : {std::pair{"cv-dd", d.cvdd_seed0}, std::pair{"single", d.single_seed0}}) {
    const SyntheticSet s = load_synthetic(dir);
    const DiscrepancyComparison c = compare_discrepancy(s.images, train.images, teacher, 100, 8, 7);
    o.check(c.mean_fraction_above >= 0.8, std::string(label) + " mean gaps");
    o.check(c.var_fraction_above >= 0.8, std::string(label) + " variance gaps");
    o.detail << label << ": batch=" << c.batch_size << " mean above=" << fmt(c.mean_fraction_above, 2)
             << " var above=" << fmt(c.var_fraction_above, 2) << " ";
  }
}

// ---------------------------------------------------------------------------
// 6. Reproducibility

void criterion_repro(const Paths& p, Outcome& o) {
  const PipelineConfig cfg = load_config(p.source + "/data/configs/toy10.yaml");
  std::vector<std::string> images, tops, traces, teachers;
  for (int jobs : {1, 2}) {
    const std::string root = p.work + "/repro-" + std::to_string(jobs);
    fs::remove_all(root);
    ArtifactStore store(root);  // private teacher tree: nothing is reused
    const PipelineContext ctx{cfg, &store, jobs};
    const RunManifest sq = run_squeeze(ctx);
    run_prior(ctx);
    const RunManifest rec = run_recover(ctx);
    const RunManifest ev = run_eval(ctx, rec.run_id);
    std::string t;
    for (const auto& r : committee_teachers(ctx)) t += r.digest + ";";
    teachers.push_back(t);
    images.push_back(rec.metrics.at("images_sha256").get<std::string>());
    tops.push_back(ev.metrics.at("test_top1").dump());
    traces.push_back(read_file(store.eval_dir(ev.run_id) + "/trace.csv"));
  }
  o.check(teachers[0] == teachers[1], "teacher checkpoints");
  o.check(images[0] == images[1], "distilled images");
  o.check(tops[0] == tops[1], "test accuracy");
  o.check(traces[0] == traces[1], "training traces");
  o.detail << "images " << images[0].substr(0, 12) << " vs " << images[1].substr(0, 12) << ", top1 " << tops[0]
           << " vs " << tops[1];
}

// ---------------------------------------------------------------------------
// 8. Schedule and distillation loss

void criterion_schedule(Outcome& o) {
  o.check(cosine_lr(0, 100, 0.01, 0.0) == 0.01, "lr at epoch 0");
  o.check(cosine_lr(100, 100, 0.01, 0.0) == 0.0, "lr at the final epoch");
  const double mid = cosine_lr(50, 100, 0.01, 0.0);
  o.check(std::abs(mid - 0.005) <= 1e-15, "lr at the midpoint");
  const Tensor student(Shape{1, 2, 1, 1}, std::vector<Scalar>{0.0, 0.0});
  const Tensor teacher(Shape{1, 2, 1, 1}, std::vector<Scalar>{0.0, -1000.0});
  const double kd = kd_loss(student, teacher, 1.0).loss;
  o.check(std::abs(kd - std::log(2.0)) <= 1e-9, "kd loss of a one-hot teacher");
  o.detail << "lr(50)=" << mid << " kd=" << fmt(kd, 12);
}

bool report(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.check(false, std::string("exception: ") + e.what());
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail.str() << " ("
            << fmt(s, 1) << "s)" << std::endl;
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  retain_large_allocations();
  CLI::App app{"acceptance checks"};
  Paths p;
  std::set<int> only;
  app.add_option("--source-dir", p.source, "Repository root")->required();
  app.add_option("--work-dir", p.work, "Scratch directory for pipeline runs")->required();
  app.add_option("--cache-dir", p.cache, "Shared teacher cache")->required();
  app.add_option("--jobs", p.jobs, "Worker threads for synthesis");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  if (!std::getenv("CDISTILL_DATA_ROOT")) setenv("CDISTILL_DATA_ROOT", (p.source + "/data/datasets").c_str(), 1);
  fs::create_directories(p.work);
  fs::create_directories(p.cache);

  const auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  bool ok = true;
  if (want(1)) ok &= report(1, "voting weights", criterion_weights);
  if (want(2)) ok &= report(2, "batch statistics", criterion_stats);
  if (want(3)) ok &= report(3, "synthesis gradients", criterion_gradients);
  if (want(4)) ok &= report(4, "batch-specific labels", criterion_bssl);
  DeskOutputs desk;
  if (want(5) || want(7)) {
    const bool r = report(5, "desk-scale distillation", [&](Outcome& o) { criterion_desk(p, o, desk); });
    if (want(5)) ok &= r;
  }
  if (want(6)) ok &= report(6, "reproducibility", [&](Outcome& o) { criterion_repro(p, o); });
  if (want(7)) ok &= report(7, "statistics discrepancy", [&](Outcome& o) { criterion_discrepancy(desk, o); });
  if (want(8)) ok &= report(8, "schedule and kd loss", criterion_schedule);
  return ok ? 0 : 1;
}
