// SPDX-License-Identifier: Apache-2.0
#include "cdistill/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cdistill/error.hpp"

namespace cdistill {

namespace {

int classes_of(const Tensor& logits) {
  require(logits.h() == 1 && logits.w() == 1, ErrorKind::ShapeError, "logits must be (N, K, 1, 1), got " + logits.shape().str());
  require(logits.n() > 0, ErrorKind::EmptyBatch, "empty logits");
  return logits.c();
}

}  // namespace

Tensor log_softmax(const Tensor& logits, Scalar tau) {
  const int K = classes_of(logits);
  Tensor out(logits.shape());
  for (int n = 0; n < logits.n(); ++n) {
    const Scalar* z = logits.sample_ptr(n);
    Scalar* o = out.sample_ptr(n);
    Scalar mx = z[0] / tau;
    for (int k = 1; k < K; ++k) mx = std::max(mx, z[k] / tau);
    Scalar s = 0;
    for (int k = 0; k < K; ++k) s += std::exp(z[k] / tau - mx);
    const Scalar lse = mx + std::log(s);
    for (int k = 0; k < K; ++k) o[k] = z[k] / tau - lse;
  }
  return out;
}

Tensor softmax(const Tensor& logits, Scalar tau) {
  Tensor p = log_softmax(logits, tau);
  for (auto& v : p.values()) v = std::exp(v);
  return p;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int K = classes_of(logits);
  std::vector<int> out(logits.n());
  for (int n = 0; n < logits.n(); ++n) {
    const Scalar* z = logits.sample_ptr(n);
    out[n] = static_cast<int>(std::max_element(z, z + K) - z);
  }
  return out;
}

LossAndGrad cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const int K = classes_of(logits);
  require(static_cast<int>(labels.size()) == logits.n(), ErrorKind::ShapeError, "label count mismatch");
  for (int y : labels) require(y >= 0 && y < K, ErrorKind::LabelError, "label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
  const Tensor lp = log_softmax(logits);
  LossAndGrad r;
  r.grad = Tensor(logits.shape());
  const Scalar inv = 1.0 / logits.n();
  for (int n = 0; n < logits.n(); ++n) {
    const Scalar* l = lp.sample_ptr(n);
    Scalar* g = r.grad.sample_ptr(n);
    r.loss -= l[labels[n]];
    for (int k = 0; k < K; ++k) g[k] = std::exp(l[k]) * inv;
    g[labels[n]] -= inv;
  }
  r.loss *= inv;
  return r;
}

LossAndGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, Scalar tau) {
  require(student_logits.shape() == teacher_logits.shape(), ErrorKind::ShapeError,
          "student " + student_logits.shape().str() + " vs teacher " + teacher_logits.shape().str());
  require(tau > 0, ErrorKind::RangeError, "temperature must be positive");
  const int K = classes_of(student_logits);
  const Tensor lq = log_softmax(student_logits, tau);
  const Tensor lp = log_softmax(teacher_logits, tau);
  LossAndGrad r;
  r.grad = Tensor(student_logits.shape());
  const Scalar B = student_logits.n();
  for (int n = 0; n < student_logits.n(); ++n) {
    const Scalar* q = lq.sample_ptr(n);
    const Scalar* p = lp.sample_ptr(n);
    Scalar* g = r.grad.sample_ptr(n);
    for (int k = 0; k < K; ++k) {
      const Scalar pk = std::exp(p[k]);
      if (pk > 0) r.loss += pk * (p[k] - q[k]);
      // d/ds of tau^2 * KL / B = tau / B * (softmax(s/tau) - softmax(t/tau))
      g[k] = tau / B * (std::exp(q[k]) - pk);
    }
  }
  r.loss *= tau * tau / B;
  return r;
}

}  // namespace cdistill
