// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "cdistill/rng.hpp"
#include "cdistill/tensor.hpp"

namespace cdistill {

/// Integer crop rectangle in source pixel coordinates.
struct CropBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
  bool operator==(const CropBox&) const = default;
};

/// Random-resized-crop box: area fraction in [scale_lo, scale_hi], log-uniform
/// aspect ratio in [3/4, 4/3], up to ten attempts, then the full image.
CropBox sample_crop_box(Rng& rng, int height, int width, double scale_lo, double scale_hi);

/// Bilinear (half-pixel centers, edge clamped) resize of `box` from sample
/// `n` of `src` into sample `m` of `dst`, at dst's spatial extent.
void resized_crop_into(const Tensor& src, int n, const CropBox& box, Tensor& dst, int m);
/// Adjoint of resized_crop_into: accumulates sample `m` of `dy` into sample `n` of `dsrc`.
void resized_crop_backward_into(const Tensor& dy, int m, const CropBox& box, Tensor& dsrc, int n);

void flip_horizontal(Tensor& batch, int n);

struct AugmentFlags {
  bool random_resized_crop = true;
  bool horizontal_flip = true;
  double scale_lo = 0.5;
  double scale_hi = 1.0;
  bool operator==(const AugmentFlags&) const = default;
};

struct AugmentRecord {
  bool cropped = false;
  CropBox box;
  bool flipped = false;
};

struct Augmented {
  Tensor images;
  std::vector<AugmentRecord> records;
};

/// Random resized crop, then horizontal flip with probability 0.5, per
/// sample. Output keeps the input extent.
Augmented augment_batch(const Tensor& batch, const AugmentFlags& flags, Rng& rng);
/// Routes d(augmented) back to the source pixels.
Tensor augment_backward(const Tensor& dy, const std::vector<AugmentRecord>& records, const Shape& source);

}  // namespace cdistill
