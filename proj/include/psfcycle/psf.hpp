#pragma once

#include "psfcycle/volume.hpp"

#include <cmath>

namespace psfcycle {

/// The blur kernel of the explicit PSF layer. Its "center" is index k/2 per
/// axis, which for even sizes sits half a voxel past the geometric middle.
template <typename Scalar>
struct PsfKernel {
  Volume<Scalar> weights;
  bool trainable = true;

  const Shape3& shape() const { return weights.shape(); }
  Shape3 center() const { return {shape().d / 2, shape().h / 2, shape().w / 2}; }
};

template <typename Scalar>
PsfKernel<Scalar> make_delta_kernel(Shape3 size) {
  PsfKernel<Scalar> k{Volume<Scalar>(size)};
  const Shape3 c = k.center();
  k.weights(c.d, c.h, c.w) = Scalar(1);
  return k;
}

/// Separable Gaussian sampled at voxel centers about index k/2, normalized to unit sum.
template <typename Scalar>
PsfKernel<Scalar> make_gaussian_kernel(const std::array<double, 3>& sigmas, Shape3 size) {
  for (double s : sigmas) require(s > 0.0 && std::isfinite(s), "Gaussian sigma must be positive");
  require(size.positive(), "kernel size must be >= 1 on every axis");
  std::array<std::vector<double>, 3> profile;
  for (int a = 0; a < 3; ++a) {
    const Index n = size[a];
    const double c = static_cast<double>(n / 2);
    for (Index i = 0; i < n; ++i) {
      const double t = (static_cast<double>(i) - c) / sigmas[a];
      profile[a].push_back(std::exp(-0.5 * t * t));
    }
  }
  Eigen::ArrayXd values(size.size());
  Index i = 0;
  for (Index z = 0; z < size.d; ++z)
    for (Index y = 0; y < size.h; ++y)
      for (Index x = 0; x < size.w; ++x) values[i++] = profile[0][z] * profile[1][y] * profile[2][x];
  values /= values.sum();
  return {Volume<Scalar>(size, values.cast<Scalar>())};
}

namespace detail {

template <typename Scalar>
void check_fits(const PsfKernel<Scalar>& k, const Shape3& v) {
  const Shape3& s = k.shape();
  require(s.d <= v.d && s.h <= v.h && s.w <= v.w,
          "kernel " + to_string(s) + " is larger than volume " + to_string(v));
}

template <typename Scalar>
Volume<Scalar> pad_for_kernel(const PsfKernel<Scalar>& k, const Volume<Scalar>& v) {
  const Shape3 c = k.center();
  const Shape3 s = k.shape();
  return pad_reflect(v, c, {s.d - 1 - c.d, s.h - 1 - c.h, s.w - 1 - c.w});
}

}  // namespace detail

/// Correlation of v with the kernel (no kernel flip), reflect boundaries, same-shape output:
///   out(z,y,x) = sum_{i,j,l} k(i,j,l) * v(z+i-cd, y+j-ch, x+l-cw)
template <typename Scalar>
Volume<Scalar> apply_psf(const PsfKernel<Scalar>& k, const Volume<Scalar>& v) {
  detail::check_fits(k, v.shape());
  const Volume<Scalar> p = detail::pad_for_kernel(k, v);
  const Shape3 ks = k.shape();
  Volume<Scalar> out(v.shape());
  const Index W = v.width();
  for (Index z = 0; z < v.depth(); ++z)
    for (Index i = 0; i < ks.d; ++i)
      for (Index y = 0; y < v.height(); ++y) {
        Scalar* dst = out.data() + out.offset(z, y, 0);
        for (Index j = 0; j < ks.h; ++j) {
          const Scalar* src = p.data() + p.offset(z + i, y + j, 0);
          const Scalar* kw = k.weights.data() + k.weights.offset(i, j, 0);
          for (Index l = 0; l < ks.w; ++l) {
            const Scalar w = kw[l];
            if (w == Scalar(0)) continue;
            const Scalar* s = src + l;
            for (Index x = 0; x < W; ++x) dst[x] += w * s[x];
          }
        }
      }
  return out;
}

/// d<grad_out, apply_psf(k, v)> / dk
template <typename Scalar>
Volume<Scalar> apply_psf_grad_kernel(const PsfKernel<Scalar>& k, const Volume<Scalar>& v,
                                     const Volume<Scalar>& grad_out) {
  require(grad_out.shape() == v.shape(), "gradient shape mismatch");
  const Volume<Scalar> p = detail::pad_for_kernel(k, v);
  const Shape3 ks = k.shape();
  Volume<Scalar> gk(ks);
  const Index W = v.width();
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  for (Index z = 0; z < v.depth(); ++z)
    for (Index i = 0; i < ks.d; ++i)
      for (Index y = 0; y < v.height(); ++y) {
        const Eigen::Map<const Vec> g(grad_out.data() + grad_out.offset(z, y, 0), W);
        for (Index j = 0; j < ks.h; ++j) {
          const Scalar* src = p.data() + p.offset(z + i, y + j, 0);
          Scalar* dk = gk.data() + gk.offset(i, j, 0);
          for (Index l = 0; l < ks.w; ++l) dk[l] += g.dot(Eigen::Map<const Vec>(src + l, W));
        }
      }
  return gk;
}

/// d<grad_out, apply_psf(k, v)> / dv, including the fold-back of the reflected border.
template <typename Scalar>
Volume<Scalar> apply_psf_grad_input(const PsfKernel<Scalar>& k, const Volume<Scalar>& grad_out) {
  detail::check_fits(k, grad_out.shape());
  const Shape3 ks = k.shape();
  const Shape3 c = k.center();
  const Shape3 vs = grad_out.shape();
  Volume<Scalar> gp({vs.d + ks.d - 1, vs.h + ks.h - 1, vs.w + ks.w - 1});
  const Index W = vs.w;
  for (Index z = 0; z < vs.d; ++z)
    for (Index i = 0; i < ks.d; ++i)
      for (Index y = 0; y < vs.h; ++y) {
        const Scalar* g = grad_out.data() + grad_out.offset(z, y, 0);
        for (Index j = 0; j < ks.h; ++j) {
          Scalar* dst = gp.data() + gp.offset(z + i, y + j, 0);
          const Scalar* kw = k.weights.data() + k.weights.offset(i, j, 0);
          for (Index l = 0; l < ks.w; ++l) {
            const Scalar w = kw[l];
            if (w == Scalar(0)) continue;
            Scalar* d = dst + l;
            for (Index x = 0; x < W; ++x) d[x] += w * g[x];
          }
        }
      }
  Volume<Scalar> gv(vs);
  std::vector<Index> xs(gp.width());
  for (Index x = 0; x < gp.width(); ++x) xs[x] = reflect_index(x - c.w, vs.w);
  for (Index z = 0; z < gp.depth(); ++z) {
    const Index sz = reflect_index(z - c.d, vs.d);
    for (Index y = 0; y < gp.height(); ++y) {
      const Index sy = reflect_index(y - c.h, vs.h);
      const Scalar* src = gp.data() + gp.offset(z, y, 0);
      Scalar* dst = gv.data() + gv.offset(sz, sy, 0);
      for (Index x = 0; x < gp.width(); ++x) dst[xs[x]] += src[x];
    }
  }
  return gv;
}

template <typename Scalar>
Scalar kernel_l1(const PsfKernel<Scalar>& k) {
  return k.weights.array().abs().sum();
}

/// Normalized cross-correlation (cosine) of two kernels at the integer shift of b,
/// within +-max_shift voxels per axis, where its magnitude peaks; the sign is
/// kept, so a kernel against its negation scores -1. Both kernels are centered
/// in a common zero-padded frame large enough that no shift pushes mass out.
template <typename Scalar>
double kernel_similarity(const PsfKernel<Scalar>& a, const PsfKernel<Scalar>& b, Index max_shift = 2) {
  const double na = a.weights.array().template cast<double>().matrix().norm();
  const double nb = b.weights.array().template cast<double>().matrix().norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("degenerate kernel: zero norm");

  const Shape3 sa = a.shape(), sb = b.shape();
  const Shape3 frame{std::max(sa.d, sb.d) + 2 * max_shift, std::max(sa.h, sb.h) + 2 * max_shift,
                     std::max(sa.w, sb.w) + 2 * max_shift};
  const Shape3 fc{frame.d / 2, frame.h / 2, frame.w / 2};
  auto embed = [&](const PsfKernel<Scalar>& k) {
    Volume<double> out(frame);
    const Shape3 c = k.center();
    for (Index z = 0; z < k.shape().d; ++z)
      for (Index y = 0; y < k.shape().h; ++y)
        for (Index x = 0; x < k.shape().w; ++x)
          out(fc.d - c.d + z, fc.h - c.h + y, fc.w - c.w + x) = static_cast<double>(k.weights(z, y, x));
    return out;
  };
  const Volume<double> ea = embed(a), eb = embed(b);

  double best = 0.0;
  for (Index dz = -max_shift; dz <= max_shift; ++dz)
    for (Index dy = -max_shift; dy <= max_shift; ++dy)
      for (Index dx = -max_shift; dx <= max_shift; ++dx) {
        double dot = 0.0;
        for (Index z = 0; z < frame.d; ++z) {
          const Index bz = z - dz;
          if (bz < 0 || bz >= frame.d) continue;
          for (Index y = 0; y < frame.h; ++y) {
            const Index by = y - dy;
            if (by < 0 || by >= frame.h) continue;
            for (Index x = 0; x < frame.w; ++x) {
              const Index bx = x - dx;
              if (bx < 0 || bx >= frame.w) continue;
              dot += ea(z, y, x) * eb(bz, by, bx);
            }
          }
        }
        const double ncc = dot / (na * nb);
        if (std::abs(ncc) > std::abs(best)) best = ncc;
      }
  return std::clamp(best, -1.0, 1.0);
}

}  // namespace psfcycle
