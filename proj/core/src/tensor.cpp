// SPDX-License-Identifier: Apache-2.0
#include "cdistill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cdistill/error.hpp"

namespace cdistill {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownArchitecture: return "UnknownArchitecture";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::NoNormalizationLayers: return "NoNormalizationLayers";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::LabelError: return "LabelError";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IncompleteCommittee: return "IncompleteCommittee";
    case ErrorKind::MissingPrior: return "MissingPrior";
    case ErrorKind::InvalidSubsetSize: return "InvalidSubsetSize";
    case ErrorKind::InvalidScore: return "InvalidScore";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::SynthesisDiverged: return "SynthesisDiverged";
    case ErrorKind::InvalidMomentum: return "InvalidMomentum";
    case ErrorKind::DegenerateNormalization: return "DegenerateNormalization";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::AlignmentError: return "AlignmentError";
    case ErrorKind::IncompleteLog: return "IncompleteLog";
    case ErrorKind::DependencyError: return "DependencyError";
    case ErrorKind::UnknownPreset: return "UnknownPreset";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(shape), data_(shape.numel(), fill) {
  require(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0, ErrorKind::ShapeError,
          "negative extent " + shape.str());
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : shape_(shape), data_(values.begin(), values.end()) {
  require(data_.size() == shape.numel(), ErrorKind::ShapeError,
          "value count " + std::to_string(data_.size()) + " does not match " + shape.str());
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  require(shape.numel() == data_.size(), ErrorKind::ShapeError,
          "cannot reshape " + shape_.str() + " to " + shape.str());
  Tensor out;
  out.shape_ = shape;
  out.data_ = data_;
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require(other.shape_ == shape_, ErrorKind::ShapeError,
          "add " + other.shape_.str() + " to " + shape_.str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(Scalar s) {
  for (auto& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

Scalar Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), Scalar{0}); }

Tensor gather(const Tensor& batch, std::span<const int> indices) {
  Shape s = batch.shape();
  s.n = static_cast<int>(indices.size());
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < batch.n(), ErrorKind::RangeError,
            "sample index " + std::to_string(indices[i]) + " out of range");
    copy_sample(batch, indices[i], out, static_cast<int>(i));
  }
  return out;
}

void copy_sample(const Tensor& src, int src_index, Tensor& dst, int dst_index) {
  const auto len = src.shape().sample_size();
  require(len == dst.shape().sample_size(), ErrorKind::ShapeError, "sample size mismatch");
  std::copy_n(src.sample_ptr(src_index), len, dst.sample_ptr(dst_index));
}

Tensor concat_batch(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorKind::EmptyBatch, "nothing to concatenate");
  Shape s = parts.front().shape();
  s.n = 0;
  for (const auto& p : parts) {
    require(p.c() == s.c && p.h() == s.h && p.w() == s.w, ErrorKind::ShapeError,
            "concat of " + p.shape().str() + " onto " + parts.front().shape().str());
    s.n += p.n();
  }
  Tensor out(s);
  Scalar* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::ShapeError, "compare " + a.shape().str() + " vs " + b.shape().str());
  Scalar m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void retain_large_allocations() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace cdistill
