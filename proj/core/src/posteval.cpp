// SPDX-License-Identifier: Apache-2.0
#include "cdistill/posteval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/losses.hpp"
#include "cdistill/squeeze.hpp"

namespace cdistill {

CutMixResult apply_cutmix(const Tensor& images, const std::vector<int>& partner, const CropBox& box) {
  require(static_cast<int>(partner.size()) == images.n(), ErrorKind::ShapeError, "partner count mismatch");
  require(box.top >= 0 && box.left >= 0 && box.height >= 0 && box.width >= 0 && box.top + box.height <= images.h() &&
              box.left + box.width <= images.w(),
          ErrorKind::ShapeError, "cutmix box outside image");
  CutMixResult r;
  r.images = images;
  r.partner = partner;
  r.box = box;
  for (int n = 0; n < images.n(); ++n)
    for (int c = 0; c < images.c(); ++c)
      for (int y = box.top; y < box.top + box.height; ++y)
        for (int x = box.left; x < box.left + box.width; ++x) r.images.at(n, c, y, x) = images.at(partner[n], c, y, x);
  r.lambda = 1.0 - Scalar(box.height) * box.width / (Scalar(images.h()) * images.w());
  return r;
}

CutMixResult cutmix(const Tensor& images, Rng& rng, Scalar beta_param) {
  require(images.n() >= 2, ErrorKind::DegenerateBatch, "cutmix needs at least two images");
  require(beta_param > 0, ErrorKind::RangeError, "cutmix beta must be positive");
  std::gamma_distribution<double> ga(beta_param, 1.0);
  const double a = ga(rng), b = ga(rng);
  const double lam = a / (a + b);
  std::vector<int> partner(images.n());
  std::iota(partner.begin(), partner.end(), 0);
  std::shuffle(partner.begin(), partner.end(), rng);
  const int H = images.h(), W = images.w();
  const double cut = std::sqrt(1.0 - lam);
  const int cw = static_cast<int>(W * cut), ch = static_cast<int>(H * cut);
  const int cx = uniform_int(rng, 0, W - 1), cy = uniform_int(rng, 0, H - 1);
  const int x0 = std::clamp(cx - cw / 2, 0, W), x1 = std::clamp(cx + cw / 2, 0, W);
  const int y0 = std::clamp(cy - ch / 2, 0, H), y1 = std::clamp(cy + ch / 2, 0, H);
  return apply_cutmix(images, partner, {y0, x0, y1 - y0, x1 - x0});
}

void PostEvalConfig::validate() const {
  require(epochs >= 1, ErrorKind::InvalidConfig, "eval.epochs must be >= 1");
  require(learning_rate > 0, ErrorKind::InvalidConfig, "eval.learning_rate must be > 0");
  require(weight_decay >= 0, ErrorKind::InvalidConfig, "eval.weight_decay must be >= 0");
  require(batch_size >= 0 && batch_size != 1, ErrorKind::InvalidConfig, "eval.batch_size must be 0 or >= 2");
  require(eta == 1 || eta == 2, ErrorKind::InvalidConfig, "eval.eta must be 1 or 2");
  require(min_lr >= 0 && min_lr <= learning_rate, ErrorKind::InvalidConfig, "eval.min_lr must lie in [0, lr]");
  require(kd_temperature > 0, ErrorKind::InvalidConfig, "eval.kd_temperature must be > 0");
  require(cutmix_beta > 0, ErrorKind::InvalidConfig, "eval.cutmix_beta must be > 0");
  require(test_every >= 0 && test_tail >= 0, ErrorKind::InvalidConfig, "eval test cadence must be >= 0");
  labels.validate();
}

int PostEvalConfig::effective_batch_size(int distilled_count) const {
  if (batch_size > 0) return batch_size;
  return distilled_count <= 16 ? 10 : 16;
}

Json PostEvalConfig::to_json() const {
  return {{"student_arch", student_arch},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"betas", {beta1, beta2}},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"eta", eta},
          {"cosine_mode", cosine_mode == CosineMode::Cycles ? "cycles" : "stretch"},
          {"min_lr", min_lr},
          {"augmentation",
           {{"random_resized_crop", augmentation.random_resized_crop},
            {"horizontal_flip", augmentation.horizontal_flip},
            {"scale", {augmentation.scale_lo, augmentation.scale_hi}}}},
          {"cutmix", cutmix},
          {"cutmix_beta", cutmix_beta},
          {"kd_temperature", kd_temperature},
          {"label_mode", to_string(labels.mode)},
          {"label_epsilon", labels.epsilon},
          {"protect_running_stats", labels.protect_running_stats},
          {"seed", seed},
          {"test_every", test_every},
          {"test_tail", test_tail}};
}

std::string TrainingTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_top1,test_top1,mean_loss,lr\n";
  for (const auto& r : per_epoch) {
    out << r.epoch << ',' << r.train_top1 << ',';
    if (std::isnan(r.test_top1)) {
      out << "nan";
    } else {
      out << r.test_top1;
    }
    out << ',' << r.mean_loss << ',' << r.lr << '\n';
  }
  return out.str();
}

TrainingTrace TrainingTrace::from_csv(const std::string& text) {
  TrainingTrace t;
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line.rfind("epoch,", 0) == 0, ErrorKind::FormatError,
          "trace CSV header missing");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[5];
    for (auto& s : f) std::getline(row, s, ',');
    EpochRow r;
    r.epoch = std::stoi(f[0]);
    r.train_top1 = std::stod(f[1]);
    r.test_top1 = f[2] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2]);
    r.mean_loss = std::stod(f[3]);
    r.lr = std::stod(f[4]);
    t.per_epoch.push_back(r);
  }
  return t;
}

PostEvalResult train_student(const SyntheticSet& distilled, Model& teacher, const LabeledDataset& test,
                             const PostEvalConfig& cfg, const BatchObserver& observer) {
  cfg.validate();
  const int N = distilled.images.n();
  require(N > 0, ErrorKind::EmptyDataset, "empty distilled set");
  const auto& tspec = teacher.spec();
  BackboneSpec sspec{cfg.student_arch, tspec.num_classes, distilled.images.h(), distilled.images.w(),
                     distilled.images.c()};
  Model student = build_backbone(sspec, derive_seed(cfg.seed, "student-init"));
  std::vector<Tensor*> params;
  for (const auto& p : student.parameters()) params.push_back(p.value);
  Adam opt(params, {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay, true});
  Gradients grads = student.make_gradients();
  const std::string tdigest = teacher.digest();

  const int B = std::min(cfg.effective_batch_size(N), N);
  PostEvalResult result;
  std::vector<int> order(N);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Scalar lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate, cfg.min_lr, cfg.eta, cfg.cosine_mode);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng(cfg.seed, "eval-shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    Rng aug_rng = make_rng(cfg.seed, "eval-augment", epoch);
    Rng mix_rng = make_rng(cfg.seed, "eval-cutmix", epoch);

    double loss_sum = 0, correct = 0;
    int seen = 0, batches = 0;
    for (int start = 0; start < N; start += B) {
      const int end = std::min(N, start + B);
      if (end - start < 2) break;
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      std::vector<int> y;
      for (int i : idx) y.push_back(distilled.labels[i]);
      Tensor x = augment_batch(gather(distilled.images, idx), cfg.augmentation, aug_rng).images;
      CutMixResult mix;
      if (cfg.cutmix) {
        mix = cutmix(x, mix_rng, cfg.cutmix_beta);
      } else {
        mix.images = std::move(x);
        mix.partner.resize(idx.size());
        std::iota(mix.partner.begin(), mix.partner.end(), 0);
      }
      const SoftLabelBatch labels = cfg.labels.mode == LabelMode::Running
                                        ? running_labels(teacher, mix.images, tdigest)
                                        : bssl_labels(teacher, mix.images, cfg.labels, tdigest);
      if (observer) observer(epoch, step, labels.batch_digest, sha256_hex(labels.logits));

      ForwardPass pass;
      pass.mode = NormMode::Batch;
      pass.record = true;
      const Tensor logits = student.forward(mix.images, pass);
      const LossAndGrad kd = kd_loss(logits, labels.logits, cfg.kd_temperature);
      if (!std::isfinite(kd.loss))
        fail(ErrorKind::TrainingDiverged, "non-finite distillation loss at epoch " + std::to_string(epoch));
      grads.zero();
      student.backward(kd.grad, pass, &grads);
      opt.step(grads.slots, lr);
      student.apply_running_update(pass.capture);

      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        correct += mix.lambda * (pred[i] == y[i]) + (1 - mix.lambda) * (pred[i] == y[mix.partner[i]]);
      }
      seen += static_cast<int>(pred.size());
      loss_sum += kd.loss;
      ++batches;
      ++step;
    }
    EpochRow row;
    row.epoch = epoch;
    row.train_top1 = seen > 0 ? 100.0 * correct / seen : 0.0;
    row.mean_loss = batches > 0 ? loss_sum / batches : 0.0;
    row.lr = lr;
    row.test_top1 = std::numeric_limits<double>::quiet_NaN();
    const bool last = epoch + 1 == cfg.epochs;
    const bool cadence = cfg.test_every > 0 && (epoch + 1) % cfg.test_every == 0;
    const bool tail = epoch >= cfg.epochs - cfg.test_tail;
    if (test.size() > 0 && (last || cadence || tail)) row.test_top1 = evaluate(student, test);
    result.trace.per_epoch.push_back(row);
  }
  result.test_top1 = test.size() > 0 ? result.trace.per_epoch.back().test_top1 : 0.0;
  return result;
}

}  // namespace cdistill
