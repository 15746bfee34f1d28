// SPDX-License-Identifier: Apache-2.0
#include "cdistill/model.hpp"

#include <atomic>

#include "cdistill/digest.hpp"
#include "cdistill/error.hpp"

namespace cdistill {

std::string BackboneSpec::str() const {
  return arch_id + "/" + std::to_string(num_classes) + "/" + std::to_string(channels) + "x" +
         std::to_string(height) + "x" + std::to_string(width);
}

Model::Model(BackboneSpec spec, Sequential features, Linear head)
    : spec_(std::move(spec)), features_(std::move(features)), head_(std::move(head)) {
  rebind();
}

Model::Model(const Model& other) : spec_(other.spec_), features_(other.features_), head_(other.head_) {
  rebind();
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

// Layers live on the heap, so moving the containers keeps parameter pointers
// valid; only the head is stored inline and needs rebinding.
Model::Model(Model&& other) noexcept
    : spec_(std::move(other.spec_)), features_(std::move(other.features_)), head_(std::move(other.head_)) {
  rebind();
}

Model& Model::operator=(Model&& other) noexcept {
  spec_ = std::move(other.spec_);
  features_ = std::move(other.features_);
  head_ = std::move(other.head_);
  rebind();
  return *this;
}

Model::~Model() = default;

void Model::rebind() {
  Binder binder;
  features_.bind(binder, "features");
  head_.bind(binder, "head");
  params_ = std::move(binder.params);
  norms_ = std::move(binder.norms);
}

Tensor Model::forward(const Tensor& x, ForwardPass& pass) const {
  require(x.n() > 0, ErrorKind::EmptyBatch, "forward on an empty batch");
  require(x.c() == spec_.channels, ErrorKind::ShapeError,
          "model " + spec_.str() + " got input " + x.shape().str());
  return head_.forward(features_.forward(x, pass), pass);
}

Tensor Model::embed(const Tensor& x, ForwardPass& pass) const {
  require(x.n() > 0, ErrorKind::EmptyBatch, "embed on an empty batch");
  require(x.c() == spec_.channels, ErrorKind::ShapeError,
          "model " + spec_.str() + " got input " + x.shape().str());
  return features_.forward(x, pass);
}

Tensor Model::backward(const Tensor& dlogits, ForwardPass& pass, Gradients* grads) const {
  return features_.backward(head_.backward(dlogits, pass, grads), pass, grads);
}

std::vector<const Tensor*> Model::parameter_values() const {
  std::vector<const Tensor*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

Gradients Model::make_gradients() const {
  Gradients g;
  g.slots.reserve(params_.size());
  for (const auto& p : params_) g.slots.emplace_back(p.value->shape());
  return g;
}

BNStatistics Model::running_stats() const {
  BNStatistics out{StatsKind::Running, {}};
  out.layers.reserve(norms_.size());
  for (const auto* bn : norms_) out.layers.push_back({bn->layer_id(), bn->running_mean(), bn->running_var()});
  return out;
}

void Model::set_running_stats(const BNStatistics& stats) {
  require(stats.layers.size() == norms_.size(), ErrorKind::ShapeError, "statistics layer count mismatch");
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    const auto& l = stats.layers[i];
    require(static_cast<int>(l.mean.size()) == norms_[i]->channels() && l.var.size() == l.mean.size(),
            ErrorKind::ShapeError, "statistics channel mismatch at layer " + std::to_string(i));
    norms_[i]->running_mean() = l.mean;
    norms_[i]->running_var() = l.var;
  }
}

void Model::apply_running_update(const BNStatistics& batch, Scalar momentum) {
  require(batch.layers.size() == norms_.size(), ErrorKind::ShapeError, "statistics layer count mismatch");
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    BatchNorm2d& bn = *norms_[i];
    const Scalar a = momentum >= 0 ? momentum : bn.momentum();
    require(a >= 0 && a <= 1, ErrorKind::InvalidMomentum, "momentum outside [0, 1]");
    const auto& l = batch.layers[i];
    require(static_cast<int>(l.mean.size()) == bn.channels(), ErrorKind::ShapeError,
            "statistics channel mismatch at layer " + std::to_string(i));
    for (int c = 0; c < bn.channels(); ++c) {
      bn.running_mean()[c] = a * bn.running_mean()[c] + (1 - a) * l.mean[c];
      bn.running_var()[c] = a * bn.running_var()[c] + (1 - a) * l.var[c];
    }
  }
}

std::string Model::digest() const {
  Sha256 h;
  h.update(spec_.str());
  for (const auto& p : params_) {
    h.update(p.name);
    h.update(*p.value);
  }
  for (const auto* bn : norms_) {
    const auto& m = bn->running_mean();
    const auto& v = bn->running_var();
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(m.data()), m.size() * sizeof(Scalar)));
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(Scalar)));
  }
  return h.hex();
}

BNStatistics read_running_stats(const Model& model) {
  require(model.num_norm_layers() > 0, ErrorKind::NoNormalizationLayers,
          "model " + model.spec().str() + " has no normalization layers");
  return model.running_stats();
}

ProbeCapture capture_batch_stats(const Model& model, const Tensor& batch) {
  static std::atomic<std::uint64_t> counter{0};
  require(batch.n() > 0 && !batch.empty(), ErrorKind::EmptyBatch, "capture on an empty batch");
  ForwardPass pass;
  pass.mode = NormMode::Batch;
  model.forward(batch, pass);
  ProbeCapture out;
  out.stats = std::move(pass.capture);
  out.forward_id = ++counter;
  return out;
}

}  // namespace cdistill
