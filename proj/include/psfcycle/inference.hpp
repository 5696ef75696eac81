#pragma once

#include "psfcycle/volume.hpp"

#include <cmath>
#include <numbers>

namespace psfcycle {

/// Stand-in model that returns its input; used to test tiling and the CLI.
struct IdentityModel {
  template <typename Scalar>
  Volume<Scalar> forward(const Volume<Scalar>& x) const {
    return x;
  }
  Index side_divisor() const { return 1; }
};

/// Per-axis blending profile of a tile: a raised-cosine ramp over the first and
/// last `overlap` voxels, 1 in between. Strictly positive.
inline std::vector<double> taper_profile(Index tile, Index overlap) {
  std::vector<double> w(static_cast<std::size_t>(tile), 1.0);
  for (Index i = 0; i < overlap && i < tile; ++i) {
    const double r = 0.5 - 0.5 * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(overlap));
    w[static_cast<std::size_t>(i)] = std::min(w[static_cast<std::size_t>(i)], r);
    w[static_cast<std::size_t>(tile - 1 - i)] = std::min(w[static_cast<std::size_t>(tile - 1 - i)], r);
  }
  return w;
}

/// Runs `model` over a whole volume in overlapping cubic tiles.
///
/// Axes shorter than `tile` are reflect-padded at the far end; tiles sit on a
/// stride tile-overlap grid whose last window is clamped to the boundary.
/// Tile outputs are blended with the separable taper, normalized by the
/// accumulated weight, and the padding is cropped away.
template <typename Model, typename Scalar>
Volume<Scalar> infer_volume(const Model& model, const Volume<Scalar>& v, Index tile = 64, Index overlap = 16) {
  require(tile >= 1, "tile must be >= 1");
  require(overlap >= 0 && overlap < tile, "overlap must lie in [0, tile)");
  require(tile % model.side_divisor() == 0,
          "tile " + std::to_string(tile) + " is not divisible by " + std::to_string(model.side_divisor()));
  const Shape3 in = v.shape();
  const Shape3 padded{std::max(in.d, tile), std::max(in.h, tile), std::max(in.w, tile)};
  const Volume<Scalar> src =
      padded == in ? v : pad_reflect(v, {0, 0, 0}, {padded.d - in.d, padded.h - in.h, padded.w - in.w});

  const std::vector<double> prof = taper_profile(tile, overlap);
  Volume<double> acc(padded), weight(padded);
  for (const PatchOrigin& o : patch_grid(padded, tile, tile - overlap)) {
    const Volume<Scalar> out = model.forward(crop(src, o.z, o.y, o.x, {tile, tile, tile}));
    require(out.shape() == Shape3{tile, tile, tile}, "model changed the tile shape");
    for (Index z = 0; z < tile; ++z)
      for (Index y = 0; y < tile; ++y) {
        const double wzy = prof[static_cast<std::size_t>(z)] * prof[static_cast<std::size_t>(y)];
        for (Index x = 0; x < tile; ++x) {
          const double w = wzy * prof[static_cast<std::size_t>(x)];
          acc(o.z + z, o.y + y, o.x + x) += w * static_cast<double>(out(z, y, x));
          weight(o.z + z, o.y + y, o.x + x) += w;
        }
      }
  }
  Volume<Scalar> result(in);
  for (Index z = 0; z < in.d; ++z)
    for (Index y = 0; y < in.h; ++y)
      for (Index x = 0; x < in.w; ++x) result(z, y, x) = static_cast<Scalar>(acc(z, y, x) / weight(z, y, x));
  result.voxel_size = v.voxel_size;
  return result;
}

}  // namespace psfcycle
