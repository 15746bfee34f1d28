// SPDX-License-Identifier: Apache-2.0
#include "cdistill/image_ops.hpp"

#include <algorithm>
#include <cmath>

#include "cdistill/error.hpp"

namespace cdistill {

namespace {

struct Tap {
  int i0, i1;
  Scalar l;  // weight of i1
};

std::vector<Tap> axis_taps(int in, int out, int offset) {
  std::vector<Tap> taps(out);
  const Scalar scale = Scalar(in) / Scalar(out);
  for (int o = 0; o < out; ++o) {
    Scalar s = (o + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    int i0 = static_cast<int>(std::floor(s));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {offset + i0, offset + i1, s - i0};
  }
  return taps;
}

void check_box(const Tensor& src, const CropBox& b) {
  require(b.height > 0 && b.width > 0 && b.top >= 0 && b.left >= 0 && b.top + b.height <= src.h() &&
              b.left + b.width <= src.w(),
          ErrorKind::ShapeError, "crop box outside " + src.shape().str());
}

}  // namespace

CropBox sample_crop_box(Rng& rng, int height, int width, double scale_lo, double scale_hi) {
  require(scale_lo > 0 && scale_lo <= scale_hi && scale_hi <= 1, ErrorKind::RangeError, "crop scale range");
  const double area = double(height) * width;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform_real(rng, scale_lo, scale_hi);
    const double aspect = std::exp(uniform_real(rng, log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w > 0 && w <= width && h > 0 && h <= height) {
      const int top = uniform_int(rng, 0, height - h);
      const int left = uniform_int(rng, 0, width - w);
      return {top, left, h, w};
    }
  }
  return {0, 0, height, width};
}

void resized_crop_into(const Tensor& src, int n, const CropBox& box, Tensor& dst, int m) {
  check_box(src, box);
  require(src.c() == dst.c(), ErrorKind::ShapeError, "channel mismatch in resized crop");
  const auto ty = axis_taps(box.height, dst.h(), box.top);
  const auto tx = axis_taps(box.width, dst.w(), box.left);
  for (int c = 0; c < src.c(); ++c) {
    const Scalar* s = src.data() + src.offset(n, c, 0, 0);
    Scalar* d = dst.data() + dst.offset(m, c, 0, 0);
    for (int oy = 0; oy < dst.h(); ++oy) {
      const Tap& a = ty[oy];
      const Scalar* r0 = s + static_cast<std::size_t>(a.i0) * src.w();
      const Scalar* r1 = s + static_cast<std::size_t>(a.i1) * src.w();
      for (int ox = 0; ox < dst.w(); ++ox) {
        const Tap& b = tx[ox];
        const Scalar top = (1 - b.l) * r0[b.i0] + b.l * r0[b.i1];
        const Scalar bot = (1 - b.l) * r1[b.i0] + b.l * r1[b.i1];
        d[oy * dst.w() + ox] = (1 - a.l) * top + a.l * bot;
      }
    }
  }
}

void resized_crop_backward_into(const Tensor& dy, int m, const CropBox& box, Tensor& dsrc, int n) {
  check_box(dsrc, box);
  const auto ty = axis_taps(box.height, dy.h(), box.top);
  const auto tx = axis_taps(box.width, dy.w(), box.left);
  for (int c = 0; c < dy.c(); ++c) {
    const Scalar* g = dy.data() + dy.offset(m, c, 0, 0);
    Scalar* d = dsrc.data() + dsrc.offset(n, c, 0, 0);
    for (int oy = 0; oy < dy.h(); ++oy) {
      const Tap& a = ty[oy];
      Scalar* r0 = d + static_cast<std::size_t>(a.i0) * dsrc.w();
      Scalar* r1 = d + static_cast<std::size_t>(a.i1) * dsrc.w();
      for (int ox = 0; ox < dy.w(); ++ox) {
        const Tap& b = tx[ox];
        const Scalar v = g[oy * dy.w() + ox];
        r0[b.i0] += (1 - a.l) * (1 - b.l) * v;
        r0[b.i1] += (1 - a.l) * b.l * v;
        r1[b.i0] += a.l * (1 - b.l) * v;
        r1[b.i1] += a.l * b.l * v;
      }
    }
  }
}

void flip_horizontal(Tensor& batch, int n) {
  for (int c = 0; c < batch.c(); ++c)
    for (int y = 0; y < batch.h(); ++y) {
      Scalar* row = batch.data() + batch.offset(n, c, y, 0);
      std::reverse(row, row + batch.w());
    }
}

Augmented augment_batch(const Tensor& batch, const AugmentFlags& flags, Rng& rng) {
  Augmented out;
  out.records.resize(batch.n());
  if (flags.random_resized_crop) {
    out.images = Tensor(batch.shape());
    for (int n = 0; n < batch.n(); ++n) {
      auto& r = out.records[n];
      r.cropped = true;
      r.box = sample_crop_box(rng, batch.h(), batch.w(), flags.scale_lo, flags.scale_hi);
      resized_crop_into(batch, n, r.box, out.images, n);
    }
  } else {
    out.images = batch;
  }
  if (flags.horizontal_flip) {
    for (int n = 0; n < batch.n(); ++n) {
      out.records[n].flipped = uniform_real(rng) < 0.5;
      if (out.records[n].flipped) flip_horizontal(out.images, n);
    }
  }
  return out;
}

Tensor augment_backward(const Tensor& dy, const std::vector<AugmentRecord>& records, const Shape& source) {
  require(static_cast<int>(records.size()) == dy.n() && source.n == dy.n(), ErrorKind::ShapeError,
          "augmentation record count mismatch");
  Tensor g = dy;
  for (int n = 0; n < dy.n(); ++n)
    if (records[n].flipped) flip_horizontal(g, n);
  const bool any_crop = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.cropped; });
  if (!any_crop) return g;
  Tensor dx(source);
  for (int n = 0; n < dy.n(); ++n) {
    if (records[n].cropped) {
      resized_crop_backward_into(g, n, records[n].box, dx, n);
    } else {
      copy_sample(g, n, dx, n);
    }
  }
  return dx;
}

}  // namespace cdistill
