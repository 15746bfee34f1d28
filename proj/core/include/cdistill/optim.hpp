// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "cdistill/tensor.hpp"

namespace cdistill {

struct AdamConfig {
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  Scalar weight_decay = 0.0;
  /// true: AdamW (decay applied to weights directly); false: L2 added to the gradient.
  bool decoupled = false;
};

class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamConfig cfg);
  /// One update with learning rate `lr`; grads[i] matches params[i].
  void step(const std::vector<Tensor>& grads, Scalar lr);
  long steps() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

struct SgdConfig {
  Scalar momentum = 0.9;
  Scalar weight_decay = 0.0;
  bool nesterov = false;
};

class Sgd {
 public:
  Sgd(std::vector<Tensor*> params, SgdConfig cfg);
  void step(const std::vector<Tensor>& grads, Scalar lr);

 private:
  std::vector<Tensor*> params_;
  SgdConfig cfg_;
  std::vector<Tensor> buf_;
};

enum class CosineMode {
  Cycles,   ///< eta half-cosine cycles over the horizon, restarting at base
  Stretch,  ///< one half-cosine over eta * horizon
};

/// Cosine-annealed learning rate at `step` of `total_steps`. Throws
/// RangeError when step is outside [0, total_steps].
Scalar cosine_lr(long step, long total_steps, Scalar base_lr, Scalar min_lr, int eta = 1,
                 CosineMode mode = CosineMode::Cycles);

}  // namespace cdistill
