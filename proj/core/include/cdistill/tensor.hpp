// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace cdistill {

using Scalar = double;

/// Cache-line aligned storage. Vectorized reductions peel to an alignment
/// boundary, so an allocation-dependent offset would change summation order
/// and make results differ between otherwise identical runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Storage = std::vector<Scalar, AlignedAllocator<Scalar>>;

/// NCHW extent. Vectors and logits are stored as (N, C, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0.0);
  Tensor(int n, int c, int h, int w, Scalar fill = 0.0) : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape shape, std::vector<Scalar> values);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  std::vector<Scalar> storage() const { return {data_.begin(), data_.end()}; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  Scalar& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Scalar at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Scalar* sample_ptr(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.sample_size(); }
  const Scalar* sample_ptr(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.sample_size();
  }

  void fill(Scalar v);
  /// Same storage, different extent; numel must match.
  Tensor reshaped(Shape shape) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(Scalar s);

  /// Exact (bitwise for finite values) element equality including shape.
  bool operator==(const Tensor& other) const = default;

  bool all_finite() const;
  Scalar sum() const;

 private:
  Shape shape_;
  Storage data_;
};

/// Copies samples `indices` (in that order) into a new batch.
Tensor gather(const Tensor& batch, std::span<const int> indices);
/// Copies sample `src_index` of `src` into sample `dst_index` of `dst`.
void copy_sample(const Tensor& src, int src_index, Tensor& dst, int dst_index);
/// Concatenates batches along N; all must share C, H, W.
Tensor concat_batch(std::span<const Tensor> parts);

Scalar max_abs_diff(const Tensor& a, const Tensor& b);

/// Keeps large activation buffers on the heap between passes instead of
/// returning them to the OS. Call once from main(); glibc only.
void retain_large_allocations();

}  // namespace cdistill
