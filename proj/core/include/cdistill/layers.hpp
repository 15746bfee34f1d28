// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdistill/tensor.hpp"

namespace cdistill {

enum class StatsKind { Running, Batch };

/// Per-channel statistics of one batch-normalization layer.
struct LayerStats {
  int layer_id = 0;
  std::vector<Scalar> mean;
  std::vector<Scalar> var;

  bool operator==(const LayerStats&) const = default;
};

/// Statistics of every normalization layer, in forward order.
struct BNStatistics {
  StatsKind kind = StatsKind::Running;
  std::vector<LayerStats> layers;

  bool operator==(const BNStatistics&) const = default;
};

/// How normalization layers pick their statistics during a forward pass.
enum class NormMode {
  Running,  ///< inference: normalize with running statistics
  Batch,    ///< normalize with the current batch's own statistics
};

/// Upstream gradient injected directly on a layer's batch mean / variance,
/// used by statistic-matching losses.
struct StatGradient {
  std::vector<Scalar> d_mean;
  std::vector<Scalar> d_var;
};

/// All state of one forward (and optional backward) invocation. A model is
/// never mutated by forward or backward; everything a pass produces lives here.
struct ForwardPass {
  NormMode mode = NormMode::Running;
  /// Keep intermediate values so backward() can run.
  bool record = false;
  /// Overrides each layer's epsilon in batch mode.
  std::optional<Scalar> epsilon;
  /// Batch statistics in forward order (filled in batch mode).
  BNStatistics capture{StatsKind::Batch, {}};
  /// Indexed by layer id; empty means no statistic gradients.
  std::vector<StatGradient> stat_grads;

  std::vector<Tensor> tape;

  void push(Tensor t) {
    if (record) tape.push_back(std::move(t));
  }
  Tensor pop();
};

/// Parameter gradients, indexed like Model::parameters().
struct Gradients {
  std::vector<Tensor> slots;
  void zero();
};

class BatchNorm2d;

/// Collects parameters and normalization layers while a model is assembled.
class Binder {
 public:
  struct Param {
    std::string name;
    Tensor* value;
  };

  int add_param(std::string name, Tensor* value);
  int add_norm(BatchNorm2d* layer);

  std::vector<Param> params;
  std::vector<BatchNorm2d*> norms;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Throws ShapeError when the input extent is incompatible.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const Tensor& x, ForwardPass& pass) const = 0;
  /// Returns dL/dx. Parameter gradients are accumulated into `grads` when non-null.
  virtual Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const = 0;
  virtual void bind(Binder& binder, const std::string& prefix) = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride = 1, int padding = 0,
         int groups = 1, bool bias = false);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder& binder, const std::string& prefix) override;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }

 private:
  int in_, out_, k_, stride_, pad_, groups_;
  bool has_bias_;
  Tensor weight_;  // (out, in / groups, k, k)
  Tensor bias_;    // (1, out, 1, 1) when has_bias_
  int weight_slot_ = -1;
  int bias_slot_ = -1;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels, Scalar epsilon = 1e-5, Scalar momentum = 0.9);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder& binder, const std::string& prefix) override;

  int channels() const { return channels_; }
  int layer_id() const { return id_; }
  Scalar epsilon() const { return eps_; }
  /// Weight on the old running value in the exponential update.
  Scalar momentum() const { return momentum_; }

  std::vector<Scalar>& running_mean() { return running_mean_; }
  std::vector<Scalar>& running_var() { return running_var_; }
  const std::vector<Scalar>& running_mean() const { return running_mean_; }
  const std::vector<Scalar>& running_var() const { return running_var_; }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  int channels_;
  Scalar eps_;
  Scalar momentum_;
  int id_ = -1;
  Tensor gamma_;  // (1, C, 1, 1)
  Tensor beta_;
  std::vector<Scalar> running_mean_;
  // Running variance is kept in the same convention as captured batch
  // variance (epsilon already included), so inference divides by its root.
  std::vector<Scalar> running_var_;
  int gamma_slot_ = -1;
  int beta_slot_ = -1;
};

class ReLU final : public Layer {
 public:
  explicit ReLU(Scalar cap = 0.0) : cap_(cap) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder&, const std::string&) override {}

 private:
  Scalar cap_;  // 0 means uncapped; 6 gives ReLU6
};

class Pool2d final : public Layer {
 public:
  enum class Kind { Max, Average };
  explicit Pool2d(Kind kind) : kind_(kind) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Pool2d>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder&, const std::string&) override {}

 private:
  Kind kind_;
};

class GlobalAvgPool final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder&, const std::string&) override {}
};

class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features);
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder& binder, const std::string& prefix) override;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Tensor weight_;  // (out, in, 1, 1)
  Tensor bias_;    // (1, out, 1, 1)
  int weight_slot_ = -1;
  int bias_slot_ = -1;
};

class ChannelShuffle final : public Layer {
 public:
  explicit ChannelShuffle(int groups) : groups_(groups) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ChannelShuffle>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder&, const std::string&) override {}

 private:
  int groups_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential&) = delete;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  Sequential& add(LayerPtr layer);
  template <typename L, typename... Args>
  Sequential& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder& binder, const std::string& prefix) override;

  /// Runs layers [0, end) only.
  Tensor forward_prefix(const Tensor& x, ForwardPass& pass, std::size_t end) const;

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }
  const Layer& at(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<LayerPtr> layers_;
};

/// y = main(x) + shortcut(x), optionally followed by ReLU. A null shortcut is
/// the identity.
class Residual final : public Layer {
 public:
  Residual(Sequential main, std::optional<Sequential> shortcut, bool post_relu);
  Residual(const Residual& other);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Residual>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder& binder, const std::string& prefix) override;

 private:
  Sequential main_;
  std::optional<Sequential> shortcut_;
  bool post_relu_;
};

/// Two branches, each reading a channel range of the input (a missing branch
/// is the identity), concatenated along channels. Covers dense connectivity
/// and channel-split units.
class Concat final : public Layer {
 public:
  struct Branch {
    std::optional<Sequential> body;  // identity when empty
    int begin = 0;                   // input channel range [begin, end); end < 0 means all
    int end = -1;
  };

  Concat(Branch first, Branch second);
  Concat(const Concat& other);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Concat>(*this); }
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const Tensor& x, ForwardPass& pass) const override;
  Tensor backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const override;
  void bind(Binder& binder, const std::string& prefix) override;

 private:
  Branch branches_[2];
};

}  // namespace cdistill
