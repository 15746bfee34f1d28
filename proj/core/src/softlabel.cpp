// SPDX-License-Identifier: Apache-2.0
#include "cdistill/softlabel.hpp"

#include "cdistill/container.hpp"
#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"

namespace cdistill {

BatchMoments batch_stats(const Tensor& features, Scalar epsilon) {
  require(features.n() > 0 && features.size() > 0, ErrorKind::EmptyBatch, "batch_stats on empty input");
  const std::size_t plane = features.shape().plane();
  const Scalar count = Scalar(features.n()) * Scalar(plane);
  BatchMoments out{std::vector<Scalar>(features.c()), std::vector<Scalar>(features.c())};
  for (int c = 0; c < features.c(); ++c) {
    Scalar s = 0;
    for (int n = 0; n < features.n(); ++n) {
      const Scalar* p = features.data() + features.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    const Scalar mean = s / count;
    Scalar q = 0;
    for (int n = 0; n < features.n(); ++n) {
      const Scalar* p = features.data() + features.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) q += (p[i] - mean) * (p[i] - mean);
    }
    out.mean[c] = mean;
    out.var[c] = q / count + epsilon;
  }
  return out;
}

BatchMoments running_stat_update(const BatchMoments& running, const BatchMoments& batch, Scalar momentum) {
  require(momentum >= 0 && momentum <= 1, ErrorKind::InvalidMomentum,
          "momentum " + std::to_string(momentum) + " outside [0, 1]");
  require(running.mean.size() == batch.mean.size() && running.var.size() == batch.var.size() &&
              running.mean.size() == running.var.size(),
          ErrorKind::ShapeError, "moment vectors differ in length");
  BatchMoments out = running;
  for (std::size_t c = 0; c < out.mean.size(); ++c) {
    out.mean[c] = momentum * running.mean[c] + (1 - momentum) * batch.mean[c];
    out.var[c] = momentum * running.var[c] + (1 - momentum) * batch.var[c];
  }
  return out;
}

std::string to_string(LabelMode m) { return m == LabelMode::BatchSpecific ? "batch-specific" : "running"; }

LabelMode label_mode_from_string(const std::string& s) {
  if (s == "batch-specific") return LabelMode::BatchSpecific;
  if (s == "running") return LabelMode::Running;
  fail(ErrorKind::InvalidConfig, "label mode must be batch-specific or running, got '" + s + "'");
}

void SoftLabelConfig::validate() const {
  require(epsilon > 0, ErrorKind::InvalidConfig, "soft-label epsilon must be positive");
}

std::string batch_digest(const Tensor& batch) { return sha256_hex(batch); }

namespace {

SoftLabelBatch batch_specific(const Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                              const std::string& teacher_digest, BNStatistics* capture) {
  cfg.validate();
  require(batch.n() > 0, ErrorKind::EmptyBatch, "labeling an empty batch");
  ForwardPass pass;
  pass.mode = NormMode::Batch;
  pass.epsilon = cfg.epsilon;
  SoftLabelBatch out;
  out.logits = teacher.forward(batch, pass);
  out.batch_digest = batch_digest(batch);
  out.teacher_digest = teacher_digest;
  if (capture != nullptr) *capture = std::move(pass.capture);
  return out;
}

}  // namespace

SoftLabelBatch bssl_labels(const Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                           const std::string& teacher_digest) {
  require(cfg.protect_running_stats, ErrorKind::InvalidConfig,
          "unprotected labeling needs a mutable teacher");
  return batch_specific(teacher, batch, cfg, teacher_digest, nullptr);
}

SoftLabelBatch bssl_labels(Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                           const std::string& teacher_digest) {
  BNStatistics capture;
  SoftLabelBatch out = batch_specific(teacher, batch, cfg, teacher_digest, &capture);
  if (!cfg.protect_running_stats) teacher.apply_running_update(capture);
  return out;
}

SoftLabelBatch running_labels(const Model& teacher, const Tensor& batch, const std::string& teacher_digest) {
  require(batch.n() > 0, ErrorKind::EmptyBatch, "labeling an empty batch");
  ForwardPass pass;
  SoftLabelBatch out;
  out.logits = teacher.forward(batch, pass);
  out.batch_digest = batch_digest(batch);
  out.teacher_digest = teacher_digest;
  return out;
}

SoftLabelBatch soft_labels(const Model& teacher, const Tensor& batch, const SoftLabelConfig& cfg,
                           const std::string& teacher_digest) {
  if (cfg.mode == LabelMode::Running) return running_labels(teacher, batch, teacher_digest);
  return bssl_labels(teacher, batch, cfg, teacher_digest);
}

bool LabelCache::lookup(const std::string& teacher, const std::string& batch, Tensor& out) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find({teacher, batch});
  if (it == entries_.end()) return false;
  out = it->second;
  return true;
}

void LabelCache::store(const std::string& teacher, const std::string& batch, const Tensor& logits) {
  std::lock_guard lock(mu_);
  entries_[{teacher, batch}] = logits;
}

std::size_t LabelCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void LabelCache::save(const std::string& path) const {
  std::lock_guard lock(mu_);
  TensorContainer c;
  c.kind = "label-cache";
  Json keys = Json::array();
  for (const auto& [k, v] : entries_) {
    keys.push_back({k.first, k.second});
    c.tensors.push_back(v);
  }
  c.meta["keys"] = keys;
  write_container(path, c);
}

void LabelCache::load(const std::string& path) {
  TensorContainer c = read_container(path, "label-cache");
  std::lock_guard lock(mu_);
  const Json& keys = c.meta.at("keys");
  require(keys.size() == c.tensors.size(), ErrorKind::FormatError, path + ": key count mismatch");
  for (std::size_t i = 0; i < keys.size(); ++i)
    entries_[{keys[i][0].get<std::string>(), keys[i][1].get<std::string>()}] = c.tensors[i];
}

}  // namespace cdistill
