// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "cdistill/tensor.hpp"

namespace cdistill {

/// Row-wise softmax of (N, K, 1, 1) logits divided by `tau`.
Tensor softmax(const Tensor& logits, Scalar tau = 1.0);
Tensor log_softmax(const Tensor& logits, Scalar tau = 1.0);
std::vector<int> argmax_rows(const Tensor& logits);

struct LossAndGrad {
  Scalar loss = 0;
  Tensor grad;  ///< d loss / d logits
};

/// Mean cross-entropy against hard labels. LabelError for labels outside [0, K).
LossAndGrad cross_entropy(const Tensor& logits, std::span<const int> labels);

/// tau^2 * mean over the batch of KL(softmax(teacher/tau) || softmax(student/tau)).
/// The gradient is taken w.r.t. the student logits.
LossAndGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, Scalar tau = 1.0);

}  // namespace cdistill
