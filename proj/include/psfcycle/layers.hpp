#pragma once

#include "psfcycle/volume.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace psfcycle {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Multi-channel activation in planar layout: one row per channel, one column
/// per voxel, each channel plane contiguous.
template <typename Scalar>
struct Feature {
  RowMatrix<Scalar> data;
  Shape3 shape;

  Feature() = default;
  Feature(Index channels, Shape3 s) : data(RowMatrix<Scalar>::Zero(channels, s.size())), shape(s) {}
  Feature(RowMatrix<Scalar> m, Shape3 s) : data(std::move(m)), shape(s) {}

  Index channels() const { return data.rows(); }
  Index voxels() const { return data.cols(); }
  const Scalar* plane(Index c) const { return data.data() + c * data.cols(); }
  Scalar* plane(Index c) { return data.data() + c * data.cols(); }
};

template <typename Scalar>
Feature<Scalar> to_feature(const Volume<Scalar>& v) {
  return {RowMatrix<Scalar>(Eigen::Map<const RowMatrix<Scalar>>(v.data(), 1, v.size())), v.shape()};
}

template <typename Scalar>
Volume<Scalar> to_volume(const Feature<Scalar>& f) {
  require(f.channels() == 1, "expected a single-channel feature");
  return Volume<Scalar>(f.shape, typename Volume<Scalar>::Array(f.data.row(0).transpose()));
}

/// A trainable tensor with its accumulated gradient. `lr_scale` multiplies the
/// optimizer step size for this tensor only.
template <typename Scalar>
struct Param {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  double lr_scale = 1.0;

  Param() = default;
  Param(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Index numel() const { return value.size(); }
};

template <typename Scalar>
using ParamRefs = std::vector<Param<Scalar>*>;

template <typename Scalar>
void zero_grads(const ParamRefs<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename Scalar>
Index count_parameters(const ParamRefs<Scalar>& params) {
  Index n = 0;
  for (const auto* p : params) n += p->numel();
  return n;
}

inline Index conv_output_side(Index in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Cubic 3D convolution (cross-correlation) with zero padding k/2, stride 1 or 2.
/// Lowered to GEMM over chunks of whole output rows: the im2col buffer holds one
/// row per (input channel, tap), matching the weight column order.
template <typename Scalar>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, Index in_channels, Index out_channels, int kernel, int stride, Rng& rng)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride) {
    require(in_channels >= 1 && out_channels >= 1, "conv channels must be >= 1");
    require(kernel >= 1 && kernel % 2 == 1, "conv kernel must be odd");
    require(stride == 1 || stride == 2, "conv stride must be 1 or 2");
    const Index fan_in = in_ * taps();
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Matrix<Scalar> w(out_, fan_in);
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(std_dev * rng.normal());
    weight_ = Param<Scalar>(name + ".weight", std::move(w));
    bias_ = Param<Scalar>(name + ".bias", Matrix<Scalar>::Zero(out_, 1));
  }

  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  Index taps() const { return Index(k_) * k_ * k_; }

  Shape3 output_shape(const Shape3& in) const {
    return {conv_output_side(in.d, k_, stride_), conv_output_side(in.h, k_, stride_),
            conv_output_side(in.w, k_, stride_)};
  }

  Feature<Scalar> forward(const Feature<Scalar>& x) const {
    require(x.channels() == in_, weight_.name + ": expected " + std::to_string(in_) + " input channels");
    const Shape3 os = output_shape(x.shape);
    Feature<Scalar> y(RowMatrix<Scalar>(out_, os.size()), os);
    if (pointwise()) {
      y.data.noalias() = weight_.value * x.data;
    } else if (shifted()) {
      forward_shifted(x, y);
    } else {
      RowMatrix<Scalar> cols;
      for_each_chunk(os, [&](Index row0, Index nrows) {
        im2col(x, os, row0, nrows, cols);
        y.data.middleCols(row0 * os.w, nrows * os.w).noalias() = weight_.value * cols;
      });
    }
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  /// Accumulates weight/bias gradients; writes the input gradient when gx is non-null.
  void backward(const Feature<Scalar>& x, const Feature<Scalar>& gy, Feature<Scalar>* gx) {
    const Shape3 os = gy.shape;
    bias_.grad.col(0) += gy.data.rowwise().sum();
    if (gx) *gx = Feature<Scalar>(in_, x.shape);
    if (pointwise()) {
      weight_.grad.noalias() += gy.data * x.data.transpose();
      if (gx) gx->data.noalias() = weight_.value.transpose() * gy.data;
      return;
    }
    if (shifted()) {
      backward_shifted(x, gy, gx);
      return;
    }
    RowMatrix<Scalar> cols, dcols;
    for_each_chunk(os, [&](Index row0, Index nrows) {
      const auto g = gy.data.middleCols(row0 * os.w, nrows * os.w);
      im2col(x, os, row0, nrows, cols);
      weight_.grad.noalias() += g * cols.transpose();
      if (gx) {
        dcols.noalias() = weight_.value.transpose() * g;
        col2im(dcols, os, row0, nrows, *gx);
      }
    });
  }

  ParamRefs<Scalar> parameters() { return {&weight_, &bias_}; }
  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1; }
  bool shifted() const { return stride_ == 1 && in_ >= 4; }

  // Stride-1 path. The input is zero-padded into a flat buffer on which every
  // tap is a constant column offset, so each tap is one GEMM against a column
  // window. Outputs live on a virtual grid d x (h+2p) x (w+2p) whose extra
  // columns are discarded.
  struct PaddedGrid {
    Index ph, pw, virtual_cols, buffer_cols;
    std::vector<Index> tap_offsets;
  };

  PaddedGrid padded_grid(const Shape3& s) const {
    const Index p = k_ / 2;
    PaddedGrid g;
    g.ph = s.h + 2 * p;
    g.pw = s.w + 2 * p;
    g.virtual_cols = s.d * g.ph * g.pw;
    for (int kz = 0; kz < k_; ++kz)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) g.tap_offsets.push_back((kz * g.ph + ky) * g.pw + kx);
    g.buffer_cols = g.virtual_cols + g.tap_offsets.back();
    return g;
  }

  // f(virtual column, voxel) for every real voxel.
  template <typename F>
  static void visit_virtual(const Shape3& s, const PaddedGrid& g, F&& f) {
    Index n = 0;
    for (Index z = 0; z < s.d; ++z)
      for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x, ++n) f((z * g.ph + y) * g.pw + x, n);
  }

  RowMatrix<Scalar> pad_input(const Feature<Scalar>& x, const PaddedGrid& g) const {
    const Index p = k_ / 2;
    RowMatrix<Scalar> xp = RowMatrix<Scalar>::Zero(in_, g.buffer_cols);
    const Shape3& s = x.shape;
    for (Index c = 0; c < in_; ++c) {
      const Scalar* src = x.plane(c);
      Scalar* dst = xp.data() + c * g.buffer_cols;
      for (Index z = 0; z < s.d; ++z)
        for (Index y = 0; y < s.h; ++y)
          std::copy_n(src + (z * s.h + y) * s.w, s.w, dst + ((z + p) * g.ph + y + p) * g.pw + p);
    }
    return xp;
  }

  Matrix<Scalar> tap_weight(Index t) const {
    Matrix<Scalar> w(out_, in_);
    for (Index c = 0; c < in_; ++c) w.col(c) = weight_.value.col(c * taps() + t);
    return w;
  }

  static constexpr Index kShiftedChunk = 2048;

  void forward_shifted(const Feature<Scalar>& x, Feature<Scalar>& y) const {
    const PaddedGrid g = padded_grid(x.shape);
    const RowMatrix<Scalar> xp = pad_input(x, g);
    std::vector<Matrix<Scalar>> w;
    for (Index t = 0; t < taps(); ++t) w.push_back(tap_weight(t));
    RowMatrix<Scalar> yv(out_, g.virtual_cols);
    for (Index q0 = 0; q0 < g.virtual_cols; q0 += kShiftedChunk) {
      const Index n = std::min(kShiftedChunk, g.virtual_cols - q0);
      auto yc = yv.middleCols(q0, n);
      yc.noalias() = w[0] * xp.middleCols(q0 + g.tap_offsets[0], n);
      for (Index t = 1; t < taps(); ++t) yc.noalias() += w[t] * xp.middleCols(q0 + g.tap_offsets[t], n);
    }
    for (Index o = 0; o < out_; ++o) {
      const Scalar* src = yv.data() + o * g.virtual_cols;
      Scalar* dst = y.plane(o);
      visit_virtual(x.shape, g, [&](Index q, Index n) { dst[n] = src[q]; });
    }
  }

  void backward_shifted(const Feature<Scalar>& x, const Feature<Scalar>& gy, Feature<Scalar>* gx) {
    const PaddedGrid g = padded_grid(x.shape);
    const RowMatrix<Scalar> xp = pad_input(x, g);
    RowMatrix<Scalar> gv = RowMatrix<Scalar>::Zero(out_, g.virtual_cols);
    for (Index o = 0; o < out_; ++o) {
      const Scalar* src = gy.plane(o);
      Scalar* dst = gv.data() + o * g.virtual_cols;
      visit_virtual(x.shape, g, [&](Index q, Index n) { dst[q] = src[n]; });
    }
    std::vector<Matrix<Scalar>> w, gw(taps(), Matrix<Scalar>::Zero(out_, in_));
    for (Index t = 0; t < taps(); ++t) w.push_back(tap_weight(t));
    RowMatrix<Scalar> gxp;
    if (gx) gxp = RowMatrix<Scalar>::Zero(in_, g.buffer_cols);
    for (Index q0 = 0; q0 < g.virtual_cols; q0 += kShiftedChunk) {
      const Index n = std::min(kShiftedChunk, g.virtual_cols - q0);
      const auto gc = gv.middleCols(q0, n);
      for (Index t = 0; t < taps(); ++t) {
        gw[t].noalias() += gc * xp.middleCols(q0 + g.tap_offsets[t], n).transpose();
        if (gx) gxp.middleCols(q0 + g.tap_offsets[t], n).noalias() += w[t].transpose() * gc;
      }
    }
    for (Index t = 0; t < taps(); ++t)
      for (Index c = 0; c < in_; ++c) weight_.grad.col(c * taps() + t) += gw[t].col(c);
    if (!gx) return;
    const Index p = k_ / 2;
    const Shape3& s = x.shape;
    for (Index c = 0; c < in_; ++c) {
      const Scalar* src = gxp.data() + c * g.buffer_cols;
      Scalar* dst = gx->plane(c);
      for (Index z = 0; z < s.d; ++z)
        for (Index y = 0; y < s.h; ++y)
          std::copy_n(src + ((z + p) * g.ph + y + p) * g.pw + p, s.w, dst + (z * s.h + y) * s.w);
    }
  }

  // Chunks are runs of whole output rows (fixed z, y) of about 1k voxels.
  template <typename F>
  void for_each_chunk(const Shape3& os, F&& f) const {
    const Index rows = os.d * os.h;
    const Index per_chunk = std::max<Index>(1, 1024 / os.w);
    for (Index r0 = 0; r0 < rows; r0 += per_chunk) f(r0, std::min(per_chunk, rows - r0));
  }

  // Calls f(buffer row, output row index within the chunk, source row pointer
  // offset or -1, kx) for every (channel, tap, output row).
  template <typename F>
  void visit_rows(const Shape3& is, const Shape3& os, Index row0, Index nrows, F&& f) const {
    const int pad = k_ / 2;
    for (Index c = 0; c < in_; ++c) {
      Index t = 0;
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx, ++t) {
            const Index brow = c * taps() + t;
            for (Index r = 0; r < nrows; ++r) {
              const Index oz = (row0 + r) / os.h, oy = (row0 + r) % os.h;
              const Index iz = oz * stride_ + kz - pad, iy = oy * stride_ + ky - pad;
              const bool inside = iz >= 0 && iz < is.d && iy >= 0 && iy < is.h;
              f(brow, r, c, inside ? (iz * is.h + iy) * is.w : Index(-1), kx - pad);
            }
          }
    }
  }

  void im2col(const Feature<Scalar>& x, const Shape3& os, Index row0, Index nrows, RowMatrix<Scalar>& cols) const {
    const Shape3& is = x.shape;
    const Index ow = os.w, n = nrows * ow;
    cols.resize(in_ * taps(), n);
    visit_rows(is, os, row0, nrows, [&](Index brow, Index r, Index c, Index src_row, Index dx) {
      Scalar* dst = cols.data() + brow * n + r * ow;
      if (src_row < 0) {
        std::fill(dst, dst + ow, Scalar(0));
        return;
      }
      const Scalar* src = x.plane(c) + src_row;
      if (stride_ == 1) {
        const Index lo = std::max<Index>(0, -dx), hi = std::min<Index>(ow, is.w - dx);
        std::fill(dst, dst + lo, Scalar(0));
        std::copy(src + lo + dx, src + hi + dx, dst + lo);
        std::fill(dst + hi, dst + ow, Scalar(0));
      } else {
        for (Index ox = 0; ox < ow; ++ox) {
          const Index ix = ox * stride_ + dx;
          dst[ox] = ix >= 0 && ix < is.w ? src[ix] : Scalar(0);
        }
      }
    });
  }

  void col2im(const RowMatrix<Scalar>& dcols, const Shape3& os, Index row0, Index nrows, Feature<Scalar>& gx) const {
    const Shape3& is = gx.shape;
    const Index ow = os.w, n = nrows * ow;
    visit_rows(is, os, row0, nrows, [&](Index brow, Index r, Index c, Index src_row, Index dx) {
      if (src_row < 0) return;
      const Scalar* src = dcols.data() + brow * n + r * ow;
      Scalar* dst = gx.plane(c) + src_row;
      if (stride_ == 1) {
        const Index lo = std::max<Index>(0, -dx), hi = std::min<Index>(ow, is.w - dx);
        for (Index ox = lo; ox < hi; ++ox) dst[ox + dx] += src[ox];
      } else {
        for (Index ox = 0; ox < ow; ++ox) {
          const Index ix = ox * stride_ + dx;
          if (ix >= 0 && ix < is.w) dst[ix] += src[ox];
        }
      }
    });
  }

  Index in_ = 0, out_ = 0;
  int k_ = 3, stride_ = 1;
  Param<Scalar> weight_, bias_;
};

/// 2x2x2 stride-2 transposed convolution: doubles every spatial side.
template <typename Scalar>
class UpConv3d {
 public:
  UpConv3d() = default;
  UpConv3d(std::string name, Index in_channels, Index out_channels, Rng& rng) : in_(in_channels), out_(out_channels) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_));
    Matrix<Scalar> w(8 * out_, in_);
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(std_dev * rng.normal());
    weight_ = Param<Scalar>(name + ".weight", std::move(w));
    bias_ = Param<Scalar>(name + ".bias", Matrix<Scalar>::Zero(out_, 1));
  }

  Feature<Scalar> forward(const Feature<Scalar>& x) const {
    require(x.channels() == in_, weight_.name + ": expected " + std::to_string(in_) + " input channels");
    const RowMatrix<Scalar> t = weight_.value * x.data;
    const Shape3 os{2 * x.shape.d, 2 * x.shape.h, 2 * x.shape.w};
    Feature<Scalar> y(RowMatrix<Scalar>(out_, os.size()), os);
    for (Index co = 0; co < out_; ++co)
      for (Index tap = 0; tap < 8; ++tap) {
        const Scalar* src = t.data() + (tap * out_ + co) * t.cols();
        Scalar* dst = y.plane(co);
        const Scalar b = bias_.value(co, 0);
        visit(x.shape, tap, [&](Index n, Index o) { dst[o] = src[n] + b; });
      }
    return y;
  }

  void backward(const Feature<Scalar>& x, const Feature<Scalar>& gy, Feature<Scalar>* gx) {
    RowMatrix<Scalar> g(8 * out_, x.voxels());
    for (Index co = 0; co < out_; ++co)
      for (Index tap = 0; tap < 8; ++tap) {
        Scalar* dst = g.data() + (tap * out_ + co) * g.cols();
        const Scalar* src = gy.plane(co);
        visit(x.shape, tap, [&](Index n, Index o) { dst[n] = src[o]; });
      }
    bias_.grad.col(0) += gy.data.rowwise().sum();
    weight_.grad.noalias() += g * x.data.transpose();
    if (gx) *gx = Feature<Scalar>(RowMatrix<Scalar>(weight_.value.transpose() * g), x.shape);
  }

  ParamRefs<Scalar> parameters() { return {&weight_, &bias_}; }

 private:
  // f(input voxel, output voxel) for one of the 8 sub-lattice offsets.
  template <typename F>
  static void visit(const Shape3& is, Index tap, F&& f) {
    const Index a = tap >> 2, b = (tap >> 1) & 1, c = tap & 1;
    const Index oh = 2 * is.h, ow = 2 * is.w;
    Index n = 0;
    for (Index z = 0; z < is.d; ++z)
      for (Index y = 0; y < is.h; ++y) {
        const Index base = ((2 * z + a) * oh + 2 * y + b) * ow + c;
        for (Index x = 0; x < is.w; ++x, ++n) f(n, base + 2 * x);
      }
  }

  Index in_ = 0, out_ = 0;
  Param<Scalar> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Parameter-free ops.

constexpr double kInstanceNormEps = 1e-5;

/// Per-channel standardization over voxels (no learned affine).
template <typename Scalar>
Feature<Scalar> instance_norm(const Feature<Scalar>& x, Vector<Scalar>* inv_std) {
  const Vector<Scalar> mean = x.data.rowwise().mean();
  Feature<Scalar> out(x.data.colwise() - mean, x.shape);
  const Vector<Scalar> var = out.data.rowwise().squaredNorm() / static_cast<Scalar>(x.voxels());
  const Vector<Scalar> inv = (var.array() + Scalar(kInstanceNormEps)).rsqrt().matrix();
  out.data = inv.asDiagonal() * out.data;
  if (inv_std) *inv_std = inv;
  return out;
}

template <typename Scalar>
Feature<Scalar> instance_norm_backward(const Feature<Scalar>& xhat, const Vector<Scalar>& inv_std,
                                       const Feature<Scalar>& gy) {
  const Scalar n = static_cast<Scalar>(xhat.voxels());
  const Vector<Scalar> mean_g = gy.data.rowwise().sum() / n;
  const Vector<Scalar> mean_gx = gy.data.cwiseProduct(xhat.data).rowwise().sum() / n;
  Feature<Scalar> gx(gy.data.colwise() - mean_g, gy.shape);
  gx.data -= mean_gx.asDiagonal() * xhat.data;
  gx.data = inv_std.asDiagonal() * gx.data;
  return gx;
}

/// Rectifier with optional leak; slope 0 is the plain ReLU.
template <typename Scalar>
Feature<Scalar> rectify(const Feature<Scalar>& x, Scalar slope) {
  if (slope == Scalar(0)) return {x.data.cwiseMax(Scalar(0)), x.shape};
  return {x.data.unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; }), x.shape};
}

template <typename Scalar>
Feature<Scalar> rectify_backward(const Feature<Scalar>& pre, const Feature<Scalar>& gy, Scalar slope) {
  return {pre.data.binaryExpr(gy.data, [slope](Scalar p, Scalar g) { return p > Scalar(0) ? g : slope * g; }),
          gy.shape};
}

template <typename Scalar>
Feature<Scalar> concat_channels(const Feature<Scalar>& a, const Feature<Scalar>& b) {
  require(a.shape == b.shape, "concat shape mismatch");
  Feature<Scalar> out(RowMatrix<Scalar>(a.channels() + b.channels(), a.voxels()), a.shape);
  out.data.topRows(a.channels()) = a.data;
  out.data.bottomRows(b.channels()) = b.data;
  return out;
}

/// conv -> [instance norm] -> rectifier, with the activations backward needs.
template <typename Scalar>
class ConvBlock {
 public:
  struct Trace {
    Feature<Scalar> pre;  // normalized (or raw) conv output, before the rectifier
    Vector<Scalar> inv_std;
    Feature<Scalar> out;
  };

  ConvBlock() = default;
  ConvBlock(std::string name, Index in, Index out, int stride, bool norm, double slope, Rng& rng)
      : conv_(std::move(name) + ".conv", in, out, 3, stride, rng), norm_(norm), slope_(static_cast<Scalar>(slope)) {}

  Feature<Scalar> forward(const Feature<Scalar>& x, Trace* trace) const {
    Feature<Scalar> pre = conv_.forward(x);
    Vector<Scalar> inv_std;
    if (norm_) pre = instance_norm(pre, &inv_std);
    Feature<Scalar> out = rectify(pre, slope_);
    if (trace) {
      trace->pre = std::move(pre);
      trace->inv_std = std::move(inv_std);
      trace->out = out;
    }
    return out;
  }

  void backward(const Feature<Scalar>& x, const Trace& trace, const Feature<Scalar>& gy, Feature<Scalar>* gx) {
    Feature<Scalar> g = rectify_backward(trace.pre, gy, slope_);
    if (norm_) g = instance_norm_backward(trace.pre, trace.inv_std, g);
    conv_.backward(x, g, gx);
  }

  ParamRefs<Scalar> parameters() { return conv_.parameters(); }
  const Conv3d<Scalar>& conv() const { return conv_; }

 private:
  Conv3d<Scalar> conv_;
  bool norm_ = true;
  Scalar slope_ = 0;
};

}  // namespace psfcycle
