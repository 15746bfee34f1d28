// SPDX-License-Identifier: Apache-2.0
#include "cdistill/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cdistill/error.hpp"

namespace cdistill {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
using MutVec = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

std::string child_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

Tensor shape_record(const Shape& s) {
  return Tensor(Shape{1, 4, 1, 1}, std::vector<Scalar>{Scalar(s.n), Scalar(s.c), Scalar(s.h), Scalar(s.w)});
}

Shape shape_from_record(const Tensor& t) {
  return Shape{int(t[0]), int(t[1]), int(t[2]), int(t[3])};
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
  Tensor out(Shape{x.n(), end - begin, x.h(), x.w()});
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    const Scalar* src = x.data() + x.offset(n, begin, 0, 0);
    std::copy_n(src, plane * (end - begin), out.sample_ptr(n));
  }
  return out;
}

void add_into_channels(Tensor& dst, const Tensor& src, int begin) {
  const std::size_t len = src.shape().sample_size();
  for (int n = 0; n < dst.n(); ++n) {
    Scalar* d = dst.data() + dst.offset(n, begin, 0, 0);
    const Scalar* s = src.sample_ptr(n);
    for (std::size_t i = 0; i < len; ++i) d[i] += s[i];
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorKind::ShapeError,
          "channel concat of " + a.shape().str() + " and " + b.shape().str());
  Tensor out(Shape{a.n(), a.c() + b.c(), a.h(), a.w()});
  for (int n = 0; n < a.n(); ++n) {
    Scalar* d = out.sample_ptr(n);
    d = std::copy_n(a.sample_ptr(n), a.shape().sample_size(), d);
    std::copy_n(b.sample_ptr(n), b.shape().sample_size(), d);
  }
  return out;
}

void check_channels(const Shape& in, int expected, const char* what) {
  require(in.c == expected, ErrorKind::ShapeError,
          std::string(what) + " expects " + std::to_string(expected) + " channels, got " + in.str());
}

}  // namespace

Tensor ForwardPass::pop() {
  require(!tape.empty(), ErrorKind::ShapeError, "backward called without a recorded forward pass");
  Tensor t = std::move(tape.back());
  tape.pop_back();
  return t;
}

void Gradients::zero() {
  for (auto& g : slots) g.fill(0.0);
}

int Binder::add_param(std::string name, Tensor* value) {
  params.push_back({std::move(name), value});
  return static_cast<int>(params.size()) - 1;
}

int Binder::add_norm(BatchNorm2d* layer) {
  norms.push_back(layer);
  return static_cast<int>(norms.size()) - 1;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, int groups,
               bool bias)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      groups_(groups),
      has_bias_(bias) {
  require(in_ > 0 && out_ > 0 && k_ > 0 && stride_ > 0 && pad_ >= 0 && groups_ > 0,
          ErrorKind::ShapeError, "invalid convolution geometry");
  require(in_ % groups_ == 0 && out_ % groups_ == 0, ErrorKind::ShapeError,
          "channels not divisible by groups");
  weight_ = Tensor(Shape{out_, in_ / groups_, k_, k_});
  if (has_bias_) bias_ = Tensor(Shape{1, out_, 1, 1});
}

Shape Conv2d::output_shape(const Shape& in) const {
  check_channels(in, in_, "Conv2d");
  const int ho = (in.h + 2 * pad_ - k_) / stride_ + 1;
  const int wo = (in.w + 2 * pad_ - k_) / stride_ + 1;
  require(in.h + 2 * pad_ >= k_ && in.w + 2 * pad_ >= k_ && ho >= 1 && wo >= 1,
          ErrorKind::ShapeError, "input " + in.str() + " too small for convolution");
  return {in.n, out_, ho, wo};
}

namespace {

struct ConvGeometry {
  int cin_g, h, w, k, stride, pad, ho, wo;
  int rows() const { return cin_g * k * k; }
  int plane() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// cols(r, p) for one sample; `src` points at the group's first input channel.
void im2col(const Scalar* src, const ConvGeometry& g, RowMat& cols) {
  const int P = g.plane();
  cols.resize(g.rows(), P);
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  for (int ci = 0; ci < g.cin_g; ++ci) {
    const Scalar* chan = src + ci * in_plane;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        Scalar* row = cols.data() + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * P;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          Scalar* drow = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(drow, g.wo, Scalar{0});
            continue;
          }
          const Scalar* srow = chan + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            const int lo = std::max(0, g.pad - kx);
            const int hi = std::min(g.wo, g.w + g.pad - kx);
            for (int ox = 0; ox < lo; ++ox) drow[ox] = 0;
            for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox - g.pad + kx];
            for (int ox = std::max(hi, lo); ox < g.wo; ++ox) drow[ox] = 0;
          } else {
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : Scalar{0};
            }
          }
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, const ConvGeometry& g, Scalar* dst) {
  const int P = g.plane();
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  for (int ci = 0; ci < g.cin_g; ++ci) {
    Scalar* chan = dst + ci * in_plane;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const Scalar* row = cols.data() + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * P;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          Scalar* drow = chan + static_cast<std::size_t>(iy) * g.w;
          const Scalar* srow = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, ForwardPass& pass) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  const ConvGeometry g{in_ / groups_, x.h(), x.w(), k_, stride_, pad_, os.h, os.w};
  const int cout_g = out_ / groups_;
  const int P = g.plane();
  thread_local RowMat cols;
  for (int n = 0; n < x.n(); ++n) {
    for (int grp = 0; grp < groups_; ++grp) {
      ConstMap wg(weight_.data() + static_cast<std::size_t>(grp) * cout_g * g.rows(), cout_g, g.rows());
      const Scalar* src = x.data() + x.offset(n, grp * g.cin_g, 0, 0);
      MutMap yg(y.data() + y.offset(n, grp * cout_g, 0, 0), cout_g, P);
      if (g.pointwise()) {
        yg.noalias() = wg * ConstMap(src, g.cin_g, P);
      } else {
        im2col(src, g, cols);
        yg.noalias() = wg * cols;
      }
      if (has_bias_)
        for (int co = 0; co < cout_g; ++co) yg.row(co).array() += bias_[grp * cout_g + co];
    }
  }
  pass.push(x);
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const {
  const Tensor x = pass.pop();
  const ConvGeometry g{in_ / groups_, x.h(), x.w(), k_, stride_, pad_, dy.h(), dy.w()};
  const int cout_g = out_ / groups_;
  const int P = g.plane();
  Tensor dx(x.shape());
  thread_local RowMat cols;
  thread_local RowMat dcols;
  for (int n = 0; n < x.n(); ++n) {
    for (int grp = 0; grp < groups_; ++grp) {
      ConstMap wg(weight_.data() + static_cast<std::size_t>(grp) * cout_g * g.rows(), cout_g, g.rows());
      ConstMap dyg(dy.data() + dy.offset(n, grp * cout_g, 0, 0), cout_g, P);
      const Scalar* src = x.data() + x.offset(n, grp * g.cin_g, 0, 0);
      Scalar* dsrc = dx.data() + dx.offset(n, grp * g.cin_g, 0, 0);
      if (grads != nullptr) {
        MutMap dw(grads->slots[weight_slot_].data() + static_cast<std::size_t>(grp) * cout_g * g.rows(), cout_g,
                  g.rows());
        if (g.pointwise()) {
          dw.noalias() += dyg * ConstMap(src, g.cin_g, P).transpose();
        } else {
          im2col(src, g, cols);
          dw.noalias() += dyg * cols.transpose();
        }
        if (has_bias_)
          for (int co = 0; co < cout_g; ++co) grads->slots[bias_slot_][grp * cout_g + co] += dyg.row(co).sum();
      }
      if (g.pointwise()) {
        MutMap(dsrc, g.cin_g, P).noalias() += wg.transpose() * dyg;
      } else {
        dcols.noalias() = wg.transpose() * dyg;
        col2im_add(dcols, g, dsrc);
      }
    }
  }
  return dx;
}

void Conv2d::bind(Binder& binder, const std::string& prefix) {
  weight_slot_ = binder.add_param(child_name(prefix, "weight"), &weight_);
  if (has_bias_) bias_slot_ = binder.add_param(child_name(prefix, "bias"), &bias_);
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, Scalar epsilon, Scalar momentum)
    : channels_(channels),
      eps_(epsilon),
      momentum_(momentum),
      gamma_(Shape{1, channels, 1, 1}, 1.0),
      beta_(Shape{1, channels, 1, 1}, 0.0),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0) {
  require(channels > 0, ErrorKind::ShapeError, "BatchNorm2d needs at least one channel");
}

Shape BatchNorm2d::output_shape(const Shape& in) const {
  check_channels(in, channels_, "BatchNorm2d");
  return in;
}

Tensor BatchNorm2d::forward(const Tensor& x, ForwardPass& pass) const {
  check_channels(x.shape(), channels_, "BatchNorm2d");
  const int N = x.n();
  const Eigen::Index plane = static_cast<Eigen::Index>(x.shape().plane());
  const std::size_t count = static_cast<std::size_t>(N) * plane;
  Tensor y(x.shape());
  Tensor inv_std(Shape{1, channels_, 1, 1});
  std::vector<Scalar> mean(channels_);

  if (pass.mode == NormMode::Batch) {
    require(count >= 2, ErrorKind::DegenerateNormalization,
            "batch statistics over a single element per channel (layer " + std::to_string(id_) + ")");
    const Scalar eps = pass.epsilon.value_or(eps_);
    LayerStats stats{id_, std::vector<Scalar>(channels_), std::vector<Scalar>(channels_)};
    for (int c = 0; c < channels_; ++c) {
      Scalar sum = 0;
      for (int n = 0; n < N; ++n) sum += ConstVec(x.data() + x.offset(n, c, 0, 0), plane).sum();
      const Scalar m = sum / Scalar(count);
      Scalar sq = 0;
      for (int n = 0; n < N; ++n)
        sq += (ConstVec(x.data() + x.offset(n, c, 0, 0), plane).array() - m).square().sum();
      stats.mean[c] = m;
      stats.var[c] = sq / Scalar(count) + eps;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(stats.var[c]);
    }
    pass.capture.layers.push_back(std::move(stats));
  } else {
    for (int c = 0; c < channels_; ++c) {
      require(running_var_[c] > 0, ErrorKind::ShapeError, "non-positive running variance");
      mean[c] = running_mean_[c];
      inv_std[c] = 1.0 / std::sqrt(running_var_[c]);
    }
  }
  for (int c = 0; c < channels_; ++c) {
    const Scalar scale = gamma_[c] * inv_std[c];
    const Scalar shift = beta_[c] - mean[c] * scale;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = x.offset(n, c, 0, 0);
      MutVec(y.data() + off, plane) = ConstVec(x.data() + off, plane).array() * scale + shift;
    }
  }
  if (pass.record) {
    Tensor xhat(x.shape());
    for (int c = 0; c < channels_; ++c) {
      const Scalar m = mean[c], is = inv_std[c];
      for (int n = 0; n < N; ++n) {
        const std::size_t off = x.offset(n, c, 0, 0);
        MutVec(xhat.data() + off, plane) = (ConstVec(x.data() + off, plane).array() - m) * is;
      }
    }
    pass.push(std::move(xhat));
    pass.push(std::move(inv_std));
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const {
  const Tensor inv_std = pass.pop();
  const Tensor xhat = pass.pop();
  const int N = dy.n();
  const Eigen::Index plane = static_cast<Eigen::Index>(dy.shape().plane());
  const Scalar count = Scalar(static_cast<std::size_t>(N) * plane);
  Tensor dx(dy.shape());
  const bool stat_grad = !pass.stat_grads.empty();
  for (int c = 0; c < channels_; ++c) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = dy.offset(n, c, 0, 0);
      ConstVec d(dy.data() + off, plane);
      sum_dy += d.sum();
      sum_dy_xhat += d.dot(ConstVec(xhat.data() + off, plane));
    }
    if (grads != nullptr) {
      grads->slots[gamma_slot_][c] += sum_dy_xhat;
      grads->slots[beta_slot_][c] += sum_dy;
    }
    const Scalar g = gamma_[c], is = inv_std[c];
    if (pass.mode == NormMode::Batch) {
      Scalar k0 = -is * g * sum_dy / count;
      Scalar kh = -is * g * sum_dy_xhat / count;
      if (stat_grad) {
        k0 += pass.stat_grads[id_].d_mean[c] / count;
        kh += pass.stat_grads[id_].d_var[c] * 2.0 / (is * count);
      }
      const Scalar kd = is * g;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = dy.offset(n, c, 0, 0);
        MutVec(dx.data() + off, plane) =
            ConstVec(dy.data() + off, plane).array() * kd + ConstVec(xhat.data() + off, plane).array() * kh + k0;
      }
    } else {
      for (int n = 0; n < N; ++n) {
        const std::size_t off = dy.offset(n, c, 0, 0);
        MutVec(dx.data() + off, plane) = ConstVec(dy.data() + off, plane) * (g * is);
      }
    }
  }
  return dx;
}

void BatchNorm2d::bind(Binder& binder, const std::string& prefix) {
  gamma_slot_ = binder.add_param(child_name(prefix, "gamma"), &gamma_);
  beta_slot_ = binder.add_param(child_name(prefix, "beta"), &beta_);
  id_ = binder.add_norm(this);
}

// ------------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, ForwardPass& pass) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Scalar v = x[i] > 0 ? x[i] : Scalar{0};
    if (cap_ > 0 && v > cap_) v = cap_;
    y[i] = v;
  }
  if (pass.record) pass.push(y);
  return y;
}

Tensor ReLU::backward(const Tensor& dy, ForwardPass& pass, Gradients*) const {
  const Tensor y = pass.pop();
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const bool open = y[i] > 0 && (cap_ <= 0 || y[i] < cap_);
    dx[i] = open ? dy[i] : Scalar{0};
  }
  return dx;
}

// ----------------------------------------------------------------- Pool2d

Shape Pool2d::output_shape(const Shape& in) const {
  require(in.h >= 2 && in.w >= 2 && in.h % 2 == 0 && in.w % 2 == 0, ErrorKind::ShapeError,
          "2x2 pooling needs even spatial extent, got " + in.str());
  return {in.n, in.c, in.h / 2, in.w / 2};
}

Tensor Pool2d::forward(const Tensor& x, ForwardPass& pass) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  Tensor argmax;
  if (kind_ == Kind::Max && pass.record) argmax = Tensor(os);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* src = x.data() + x.offset(n, c, 0, 0);
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          const int base = (2 * oy) * x.w() + 2 * ox;
          const int idx[4] = {base, base + 1, base + x.w(), base + x.w() + 1};
          const std::size_t o = y.offset(n, c, oy, ox);
          if (kind_ == Kind::Max) {
            int best = idx[0];
            for (int k = 1; k < 4; ++k)
              if (src[idx[k]] > src[best]) best = idx[k];
            y[o] = src[best];
            if (pass.record) argmax[o] = best;
          } else {
            y[o] = 0.25 * (src[idx[0]] + src[idx[1]] + src[idx[2]] + src[idx[3]]);
          }
        }
      }
    }
  }
  if (pass.record) {
    pass.push(shape_record(x.shape()));
    if (kind_ == Kind::Max) pass.push(std::move(argmax));
  }
  return y;
}

Tensor Pool2d::backward(const Tensor& dy, ForwardPass& pass, Gradients*) const {
  Tensor argmax;
  if (kind_ == Kind::Max) argmax = pass.pop();
  const Shape in = shape_from_record(pass.pop());
  Tensor dx(in);
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      Scalar* dst = dx.data() + dx.offset(n, c, 0, 0);
      for (int oy = 0; oy < dy.h(); ++oy) {
        for (int ox = 0; ox < dy.w(); ++ox) {
          const std::size_t o = dy.offset(n, c, oy, ox);
          if (kind_ == Kind::Max) {
            dst[static_cast<int>(argmax[o])] += dy[o];
          } else {
            const int base = (2 * oy) * in.w + 2 * ox;
            const Scalar g = 0.25 * dy[o];
            dst[base] += g;
            dst[base + 1] += g;
            dst[base + in.w] += g;
            dst[base + in.w + 1] += g;
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, ForwardPass& pass) const {
  Tensor y(Shape{x.n(), x.c(), 1, 1});
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* p = x.data() + x.offset(n, c, 0, 0);
      Scalar s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.at(n, c, 0, 0) = s / Scalar(plane);
    }
  }
  pass.push(shape_record(x.shape()));
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, ForwardPass& pass, Gradients*) const {
  const Shape in = shape_from_record(pass.pop());
  Tensor dx(in);
  const std::size_t plane = in.plane();
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const Scalar g = dy.at(n, c, 0, 0) / Scalar(plane);
      Scalar* p = dx.data() + dx.offset(n, c, 0, 0);
      std::fill_n(p, plane, g);
    }
  }
  return dx;
}

// ----------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(Shape{out_features, in_features, 1, 1}),
      bias_(Shape{1, out_features, 1, 1}) {
  require(in_ > 0 && out_ > 0, ErrorKind::ShapeError, "Linear needs positive extents");
}

Shape Linear::output_shape(const Shape& in) const {
  require(static_cast<int>(in.sample_size()) == in_, ErrorKind::ShapeError,
          "Linear expects " + std::to_string(in_) + " features, got " + in.str());
  return {in.n, out_, 1, 1};
}

Tensor Linear::forward(const Tensor& x, ForwardPass& pass) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  ConstMap X(x.data(), x.n(), in_);
  ConstMap W(weight_.data(), out_, in_);
  MutMap Y(y.data(), x.n(), out_);
  Y.noalias() = X * W.transpose();
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_; ++o) Y(n, o) += bias_[o];
  pass.push(x);
  return y;
}

Tensor Linear::backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const {
  const Tensor x = pass.pop();
  ConstMap X(x.data(), x.n(), in_);
  ConstMap W(weight_.data(), out_, in_);
  ConstMap dY(dy.data(), dy.n(), out_);
  if (grads != nullptr) {
    MutMap dW(grads->slots[weight_slot_].data(), out_, in_);
    dW.noalias() += dY.transpose() * X;
    for (int o = 0; o < out_; ++o) grads->slots[bias_slot_][o] += dY.col(o).sum();
  }
  Tensor dx(x.shape());
  MutMap dX(dx.data(), x.n(), in_);
  dX.noalias() = dY * W;
  return dx;
}

void Linear::bind(Binder& binder, const std::string& prefix) {
  weight_slot_ = binder.add_param(child_name(prefix, "weight"), &weight_);
  bias_slot_ = binder.add_param(child_name(prefix, "bias"), &bias_);
}

// --------------------------------------------------------- ChannelShuffle

Shape ChannelShuffle::output_shape(const Shape& in) const {
  require(groups_ > 0 && in.c % groups_ == 0, ErrorKind::ShapeError,
          "channel shuffle groups do not divide " + in.str());
  return in;
}

Tensor ChannelShuffle::forward(const Tensor& x, ForwardPass&) const {
  output_shape(x.shape());
  const int per = x.c() / groups_;
  const std::size_t plane = x.shape().plane();
  Tensor y(x.shape());
  for (int n = 0; n < x.n(); ++n)
    for (int g = 0; g < groups_; ++g)
      for (int k = 0; k < per; ++k)
        std::copy_n(x.data() + x.offset(n, g * per + k, 0, 0), plane, y.data() + y.offset(n, k * groups_ + g, 0, 0));
  return y;
}

Tensor ChannelShuffle::backward(const Tensor& dy, ForwardPass&, Gradients*) const {
  const int per = dy.c() / groups_;
  const std::size_t plane = dy.shape().plane();
  Tensor dx(dy.shape());
  for (int n = 0; n < dy.n(); ++n)
    for (int g = 0; g < groups_; ++g)
      for (int k = 0; k < per; ++k)
        std::copy_n(dy.data() + dy.offset(n, k * groups_ + g, 0, 0), plane, dx.data() + dx.offset(n, g * per + k, 0, 0));
  return dx;
}

// ------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::add(LayerPtr layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Shape Sequential::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

Tensor Sequential::forward(const Tensor& x, ForwardPass& pass) const {
  return forward_prefix(x, pass, layers_.size());
}

Tensor Sequential::forward_prefix(const Tensor& x, ForwardPass& pass, std::size_t end) const {
  if (end == 0) return x;
  Tensor h = layers_[0]->forward(x, pass);
  for (std::size_t i = 1; i < end; ++i) h = layers_[i]->forward(h, pass);
  return h;
}

Tensor Sequential::backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, pass, grads);
  return g;
}

void Sequential::bind(Binder& binder, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->bind(binder, child_name(prefix, std::to_string(i)));
}

// --------------------------------------------------------------- Residual

Residual::Residual(Sequential main, std::optional<Sequential> shortcut, bool post_relu)
    : main_(std::move(main)), shortcut_(std::move(shortcut)), post_relu_(post_relu) {}

Residual::Residual(const Residual& other)
    : main_(other.main_), shortcut_(other.shortcut_), post_relu_(other.post_relu_) {}

Shape Residual::output_shape(const Shape& in) const {
  const Shape m = main_.output_shape(in);
  const Shape s = shortcut_ ? shortcut_->output_shape(in) : in;
  require(m == s, ErrorKind::ShapeError, "residual branches disagree: " + m.str() + " vs " + s.str());
  return m;
}

Tensor Residual::forward(const Tensor& x, ForwardPass& pass) const {
  Tensor y = main_.forward(x, pass);
  if (shortcut_) {
    y += shortcut_->forward(x, pass);
  } else {
    y += x;
  }
  if (post_relu_) {
    for (auto& v : y.values()) v = v > 0 ? v : Scalar{0};
    if (pass.record) pass.push(y);
  }
  return y;
}

Tensor Residual::backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const {
  Tensor g = dy;
  if (post_relu_) {
    const Tensor y = pass.pop();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > 0)) g[i] = 0;
  }
  Tensor dx = shortcut_ ? shortcut_->backward(g, pass, grads) : g;
  dx += main_.backward(g, pass, grads);
  return dx;
}

void Residual::bind(Binder& binder, const std::string& prefix) {
  main_.bind(binder, child_name(prefix, "main"));
  if (shortcut_) shortcut_->bind(binder, child_name(prefix, "shortcut"));
}

// ----------------------------------------------------------------- Concat

Concat::Concat(Branch first, Branch second) : branches_{std::move(first), std::move(second)} {}

Concat::Concat(const Concat& other) : branches_{other.branches_[0], other.branches_[1]} {}

Shape Concat::output_shape(const Shape& in) const {
  Shape out{in.n, 0, 0, 0};
  for (const auto& b : branches_) {
    const int end = b.end < 0 ? in.c : b.end;
    require(b.begin >= 0 && b.begin < end && end <= in.c, ErrorKind::ShapeError,
            "channel range outside " + in.str());
    const Shape bin{in.n, end - b.begin, in.h, in.w};
    const Shape bo = b.body ? b.body->output_shape(bin) : bin;
    if (out.c == 0) {
      out.h = bo.h;
      out.w = bo.w;
    }
    require(bo.h == out.h && bo.w == out.w, ErrorKind::ShapeError, "concat branches disagree spatially");
    out.c += bo.c;
  }
  return out;
}

Tensor Concat::forward(const Tensor& x, ForwardPass& pass) const {
  Tensor outs[2];
  for (int i = 0; i < 2; ++i) {
    const auto& b = branches_[i];
    const int end = b.end < 0 ? x.c() : b.end;
    Tensor xb = (b.begin == 0 && end == x.c()) ? x : slice_channels(x, b.begin, end);
    outs[i] = b.body ? b.body->forward(xb, pass) : std::move(xb);
  }
  if (pass.record) {
    pass.push(Tensor(Shape{1, 3, 1, 1}, std::vector<Scalar>{Scalar(x.c()), Scalar(outs[0].c()), Scalar(outs[1].c())}));
    pass.push(shape_record(x.shape()));
  }
  return concat_channels(outs[0], outs[1]);
}

Tensor Concat::backward(const Tensor& dy, ForwardPass& pass, Gradients* grads) const {
  const Shape in = shape_from_record(pass.pop());
  const Tensor meta = pass.pop();
  const int c0 = static_cast<int>(meta[1]);
  const int c1 = static_cast<int>(meta[2]);
  Tensor dx(in);
  for (int i = 1; i >= 0; --i) {
    const auto& b = branches_[i];
    Tensor dyb = i == 0 ? slice_channels(dy, 0, c0) : slice_channels(dy, c0, c0 + c1);
    Tensor dxb = b.body ? b.body->backward(dyb, pass, grads) : std::move(dyb);
    add_into_channels(dx, dxb, b.begin);
  }
  return dx;
}

void Concat::bind(Binder& binder, const std::string& prefix) {
  if (branches_[0].body) branches_[0].body->bind(binder, child_name(prefix, "a"));
  if (branches_[1].body) branches_[1].body->bind(binder, child_name(prefix, "b"));
}

}  // namespace cdistill
