// SPDX-License-Identifier: Apache-2.0
#include "cdistill/squeeze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"
#include "cdistill/losses.hpp"
#include "cdistill/optim.hpp"
#include "cdistill/rng.hpp"

namespace cdistill {

namespace {

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Adam:
      return "adam";
    case OptimizerKind::AdamW:
      return "adamw";
    default:
      return "sgd";
  }
}

}  // namespace

void SqueezeConfig::validate() const {
  require(epochs >= 1, ErrorKind::InvalidConfig, "squeeze.epochs must be >= 1");
  require(batch_size >= 1, ErrorKind::InvalidConfig, "squeeze.batch_size must be >= 1");
  require(learning_rate > 0, ErrorKind::InvalidConfig, "squeeze.learning_rate must be > 0");
  require(weight_decay >= 0, ErrorKind::InvalidConfig, "squeeze.weight_decay must be >= 0");
}

Json SqueezeConfig::to_json() const {
  return {{"optimizer", optimizer_name(optimizer)},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"betas", {beta1, beta2}},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"scheduler", scheduler == SchedulerKind::Cosine ? "cosine" : "constant"},
          {"augmentation",
           {{"random_resized_crop", augmentation.random_resized_crop},
            {"horizontal_flip", augmentation.horizontal_flip},
            {"scale", {augmentation.scale_lo, augmentation.scale_hi}}}},
          {"seed", seed}};
}

std::string split_digest(const LabeledDataset& d) {
  Sha256 h;
  h.update(d.dataset_id + "/" + d.split);
  h.update(d.images);
  for (int y : d.labels) h.update(std::to_string(y) + ",");
  return h.hex();
}

std::string teacher_digest(const BackboneSpec& spec, const SqueezeConfig& cfg, const std::string& train_digest) {
  const Json j = {{"spec", spec.str()}, {"squeeze", cfg.to_json()}, {"train", train_digest}};
  return sha256_hex(j.dump());
}

double evaluate(const Model& model, const LabeledDataset& data, int chunk) {
  require(data.size() > 0, ErrorKind::EmptyDataset, "evaluate on an empty dataset");
  long correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < data.size(); start += chunk) {
    const int end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    ForwardPass pass;
    const auto pred = argmax_rows(model.forward(gather(data.images, idx), pass));
    for (int i = start; i < end; ++i) correct += pred[i - start] == data.labels[i];
  }
  return 100.0 * double(correct) / double(data.size());
}

TrainedTeacher pretrain(const BackboneSpec& spec, const LabeledDataset& train, const LabeledDataset& test,
                        const SqueezeConfig& cfg) {
  cfg.validate();
  require(train.size() > 0, ErrorKind::EmptyDataset, "pretrain on an empty dataset");
  for (int y : train.labels)
    require(y >= 0 && y < spec.num_classes, ErrorKind::LabelError,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(spec.num_classes) + ")");

  TrainedTeacher out{build_backbone(spec, derive_seed(cfg.seed, "squeeze-init")), train.dataset_id, 0, 0, "", {}};
  Model& model = out.model;
  std::vector<Tensor*> params;
  for (const auto& p : model.parameters()) params.push_back(p.value);

  Adam adam(params, {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay, cfg.optimizer == OptimizerKind::AdamW});
  Sgd sgd(params, {cfg.momentum, cfg.weight_decay, false});

  const int N = train.size();
  const int B = std::min(cfg.batch_size, N);
  const int steps_per_epoch = (N + B - 1) / B;
  const long total = long(cfg.epochs) * steps_per_epoch;
  Gradients grads = model.make_gradients();
  std::vector<int> order(N);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng(cfg.seed, "squeeze-shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    Rng aug_rng = make_rng(cfg.seed, "squeeze-augment", epoch);
    double loss_sum = 0;
    int batches = 0;
    for (int start = 0; start < N; start += B) {
      const int end = std::min(N, start + B);
      if (end - start < 2) break;  // batch statistics need two samples
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      std::vector<int> labels;
      for (int i : idx) labels.push_back(train.labels[i]);
      Tensor x = augment_batch(gather(train.images, idx), cfg.augmentation, aug_rng).images;

      ForwardPass pass;
      pass.mode = NormMode::Batch;
      pass.record = true;
      const Tensor logits = model.forward(x, pass);
      const LossAndGrad ce = cross_entropy(logits, labels);
      if (!std::isfinite(ce.loss))
        fail(ErrorKind::TrainingDiverged, "non-finite loss at epoch " + std::to_string(epoch));
      grads.zero();
      model.backward(ce.grad, pass, &grads);

      const Scalar lr = cfg.scheduler == SchedulerKind::Cosine ? cosine_lr(step, total, cfg.learning_rate, 0.0)
                                                               : cfg.learning_rate;
      if (cfg.optimizer == OptimizerKind::Sgd) {
        sgd.step(grads.slots, lr);
      } else {
        adam.step(grads.slots, lr);
      }
      model.apply_running_update(pass.capture);
      loss_sum += ce.loss;
      ++batches;
      ++step;
    }
    out.epoch_loss.push_back(batches > 0 ? loss_sum / batches : 0.0);
  }
  out.train_accuracy = evaluate(model, train);
  out.test_accuracy = test.size() > 0 ? evaluate(model, test) : 0.0;
  out.config_digest = teacher_digest(spec, cfg, split_digest(train));
  return out;
}

}  // namespace cdistill
