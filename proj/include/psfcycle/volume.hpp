#pragma once

#include "psfcycle/common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <optional>
#include <vector>

namespace psfcycle {

/// Dense single-channel 3D scalar field stored z-major, x fastest.
template <typename Scalar>
class Volume {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;

  explicit Volume(Shape3 shape, Scalar fill = Scalar(0)) : shape_(shape) {
    require(shape.positive(), "volume shape must be strictly positive, got " + to_string(shape));
    data_ = Array::Constant(shape.size(), fill);
  }

  Volume(Shape3 shape, Array data) : shape_(shape), data_(std::move(data)) {
    require(shape.positive(), "volume shape must be strictly positive, got " + to_string(shape));
    require(data_.size() == shape.size(), "volume data size does not match shape");
  }

  const Shape3& shape() const { return shape_; }
  Index depth() const { return shape_.d; }
  Index height() const { return shape_.h; }
  Index width() const { return shape_.w; }
  Index size() const { return shape_.size(); }
  bool empty() const { return data_.size() == 0; }

  Index offset(Index z, Index y, Index x) const { return (z * shape_.h + y) * shape_.w + x; }

  Scalar& operator()(Index z, Index y, Index x) { return data_[offset(z, y, x)]; }
  Scalar operator()(Index z, Index y, Index x) const { return data_[offset(z, y, x)]; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  /// Physical voxel size in micrometres per axis; informational only.
  std::optional<std::array<double, 3>> voxel_size;

  template <typename Other>
  Volume<Other> cast() const {
    Volume<Other> out(shape_, data_.template cast<Other>());
    out.voxel_size = voxel_size;
    return out;
  }

 private:
  Shape3 shape_{};
  Array data_;
};

using Volumef = Volume<float>;
using Volumed = Volume<double>;

template <typename Scalar>
Scalar max_abs_diff(const Volume<Scalar>& a, const Volume<Scalar>& b) {
  require(a.shape() == b.shape(), "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return (a.array() - b.array()).abs().maxCoeff();
}

/// Affine map onto [0,1]; a constant volume maps to all zeros.
template <typename Scalar>
Volume<Scalar> normalize01(const Volume<Scalar>& v) {
  Volume<Scalar> out = v;
  const Scalar lo = v.array().minCoeff();
  const Scalar hi = v.array().maxCoeff();
  if (!(hi > lo)) {
    out.array().setZero();
    return out;
  }
  out.array() = (v.array() - lo) / (hi - lo);
  return out;
}

/// Copy of the box starting at (z0,y0,x0) with the given extent; must lie inside v.
template <typename Scalar>
Volume<Scalar> crop(const Volume<Scalar>& v, Index z0, Index y0, Index x0, Shape3 extent) {
  require(z0 >= 0 && y0 >= 0 && x0 >= 0 && z0 + extent.d <= v.depth() && y0 + extent.h <= v.height() &&
              x0 + extent.w <= v.width(),
          "crop box exceeds volume bounds");
  Volume<Scalar> out(extent);
  for (Index z = 0; z < extent.d; ++z)
    for (Index y = 0; y < extent.h; ++y) {
      const Scalar* src = v.data() + v.offset(z0 + z, y0 + y, x0);
      std::copy(src, src + extent.w, out.data() + out.offset(z, y, 0));
    }
  return out;
}

/// Adds src into dst at (z0,y0,x0); the adjoint of crop.
template <typename Scalar>
void accumulate_into(Volume<Scalar>& dst, const Volume<Scalar>& src, Index z0, Index y0, Index x0) {
  for (Index z = 0; z < src.depth(); ++z)
    for (Index y = 0; y < src.height(); ++y) {
      const Scalar* s = src.data() + src.offset(z, y, 0);
      Scalar* d = dst.data() + dst.offset(z0 + z, y0 + y, x0);
      for (Index x = 0; x < src.width(); ++x) d[x] += s[x];
    }
}

/// Reflect-pads every axis: `before` voxels ahead and `after` voxels behind.
template <typename Scalar>
Volume<Scalar> pad_reflect(const Volume<Scalar>& v, Shape3 before, Shape3 after) {
  const Shape3 out_shape{v.depth() + before.d + after.d, v.height() + before.h + after.h,
                         v.width() + before.w + after.w};
  Volume<Scalar> out(out_shape);
  std::vector<Index> xs(out_shape.w);
  for (Index x = 0; x < out_shape.w; ++x) xs[x] = reflect_index(x - before.w, v.width());
  for (Index z = 0; z < out_shape.d; ++z) {
    const Index sz = reflect_index(z - before.d, v.depth());
    for (Index y = 0; y < out_shape.h; ++y) {
      const Index sy = reflect_index(y - before.h, v.height());
      const Scalar* src = v.data() + v.offset(sz, sy, 0);
      Scalar* dst = out.data() + out.offset(z, y, 0);
      for (Index x = 0; x < out_shape.w; ++x) dst[x] = src[xs[x]];
    }
  }
  out.voxel_size = v.voxel_size;
  return out;
}

/// Extends the depth axis to target_depth by mirroring about the last slice.
/// Slices 0..depth-1 are kept verbatim. A single-slice volume has no interior to
/// mirror, so it is edge-replicated instead.
template <typename Scalar>
Volume<Scalar> pad_reflect_depth(const Volume<Scalar>& v, Index target_depth) {
  require(target_depth >= v.depth(), "target depth " + std::to_string(target_depth) +
                                         " is smaller than volume depth " + std::to_string(v.depth()));
  if (target_depth == v.depth()) return v;
  if (v.depth() == 1) {
    log_warning("reflect padding of a single-slice volume falls back to edge replication");
    Volume<Scalar> out({target_depth, v.height(), v.width()});
    const Index plane = v.height() * v.width();
    for (Index z = 0; z < target_depth; ++z) std::copy(v.data(), v.data() + plane, out.data() + z * plane);
    out.voxel_size = v.voxel_size;
    return out;
  }
  return pad_reflect(v, {0, 0, 0}, {target_depth - v.depth(), 0, 0});
}

/// Window start offsets along one axis: a stride grid plus one final window
/// clamped to end at the boundary when the grid leaves a remainder.
inline std::vector<Index> window_starts(Index extent, Index size, Index stride) {
  require(size >= 1 && size <= extent, "window size " + std::to_string(size) + " exceeds extent " +
                                           std::to_string(extent));
  require(stride >= 1, "stride must be >= 1");
  std::vector<Index> starts;
  for (Index s = 0; s + size <= extent; s += stride) starts.push_back(s);
  if (starts.back() + size < extent) starts.push_back(extent - size);
  return starts;
}

struct PatchOrigin {
  Index z, y, x;
};

inline std::vector<PatchOrigin> patch_grid(Shape3 shape, Index size, Index stride) {
  const auto zs = window_starts(shape.d, size, stride);
  const auto ys = window_starts(shape.h, size, stride);
  const auto xs = window_starts(shape.w, size, stride);
  std::vector<PatchOrigin> grid;
  grid.reserve(zs.size() * ys.size() * xs.size());
  for (Index z : zs)
    for (Index y : ys)
      for (Index x : xs) grid.push_back({z, y, x});
  return grid;
}

/// All cubic patches on the stride grid, depth-major order.
template <typename Scalar>
std::vector<Volume<Scalar>> extract_patches(const Volume<Scalar>& v, Index size = 64, Index stride = 64) {
  require(size <= v.depth() && size <= v.height() && size <= v.width(),
          "patch size " + std::to_string(size) + " exceeds a dimension of " + to_string(v.shape()));
  std::vector<Volume<Scalar>> patches;
  for (const auto& o : patch_grid(v.shape(), size, stride)) patches.push_back(crop(v, o.z, o.y, o.x, {size, size, size}));
  return patches;
}

}  // namespace psfcycle
