// SPDX-License-Identifier: Apache-2.0
#include "cdistill/optim.hpp"

#include <cmath>
#include <numbers>

#include "cdistill/error.hpp"

namespace cdistill {

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void Adam::step(const std::vector<Tensor>& grads, Scalar lr) {
  require(grads.size() == params_.size(), ErrorKind::ShapeError, "gradient count mismatch");
  ++t_;
  const Scalar bc1 = 1 - std::pow(cfg_.beta1, Scalar(t_));
  const Scalar bc2 = 1 - std::pow(cfg_.beta2, Scalar(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    if (cfg_.decoupled && cfg_.weight_decay > 0) {
      const Scalar shrink = 1 - lr * cfg_.weight_decay;
      for (auto& x : p.values()) x *= shrink;
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      Scalar gk = g[k];
      if (!cfg_.decoupled && cfg_.weight_decay > 0) gk += cfg_.weight_decay * p[k];
      m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * gk * gk;
      const Scalar mhat = m[k] / bc1;
      const Scalar vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Sgd::Sgd(std::vector<Tensor*> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Tensor* p : params_) buf_.emplace_back(p->shape());
}

void Sgd::step(const std::vector<Tensor>& grads, Scalar lr) {
  require(grads.size() == params_.size(), ErrorKind::ShapeError, "gradient count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    Tensor& b = buf_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const Scalar gk = grads[i][k] + cfg_.weight_decay * p[k];
      b[k] = cfg_.momentum * b[k] + gk;
      const Scalar d = cfg_.nesterov ? gk + cfg_.momentum * b[k] : b[k];
      p[k] -= lr * d;
    }
  }
}

Scalar cosine_lr(long step, long total_steps, Scalar base_lr, Scalar min_lr, int eta, CosineMode mode) {
  require(total_steps >= 0 && step >= 0 && step <= total_steps, ErrorKind::RangeError,
          "step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  require(eta >= 1, ErrorKind::RangeError, "eta must be at least 1");
  if (total_steps == 0) return base_lr;
  Scalar phase;
  if (mode == CosineMode::Stretch) {
    phase = Scalar(step) / (Scalar(eta) * Scalar(total_steps));
  } else {
    const Scalar pos = Scalar(step) * eta / Scalar(total_steps);
    phase = pos - std::floor(pos);
    // The final step closes the last cycle instead of restarting it.
    if (step == total_steps) phase = 1.0;
  }
  return min_lr + 0.5 * (base_lr - min_lr) * (1 + std::cos(std::numbers::pi * phase));
}

}  // namespace cdistill
