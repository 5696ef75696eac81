#pragma once

#include "psfcycle/volume.hpp"

#include <cmath>

namespace psfcycle {

/// Which geometric perturbations augment() may sample, and their ranges.
struct AugmentSpec {
  bool rotate = true;     // in-plane (height/width) multiples of 90 degrees
  bool flip = true;       // independent flip per axis
  bool translate = true;  // integer shift with reflect fill
  bool scale = true;      // isotropic zoom about the patch center
  double max_shift_fraction = 0.1;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
};

struct AugmentParams {
  int quarter_turns = 0;
  std::array<bool, 3> flips{false, false, false};
  std::array<Index, 3> shift{0, 0, 0};
  double scale = 1.0;

  bool identity() const {
    return quarter_turns == 0 && !flips[0] && !flips[1] && !flips[2] && shift == std::array<Index, 3>{0, 0, 0} &&
           scale == 1.0;
  }
};

inline AugmentParams sample_augment(Index side, const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x617567ULL));
  AugmentParams p;
  // Every draw happens regardless of the toggles so the stream layout is fixed.
  const int turns = static_cast<int>(rng.below(4));
  std::array<bool, 3> flips{rng.coin(), rng.coin(), rng.coin()};
  const auto max_shift = static_cast<Index>(std::floor(spec.max_shift_fraction * static_cast<double>(side)));
  std::array<Index, 3> shift{};
  for (auto& s : shift) s = static_cast<Index>(rng.below(2 * max_shift + 1)) - max_shift;
  const double scale = rng.uniform(spec.scale_lo, spec.scale_hi);
  if (spec.rotate) p.quarter_turns = turns;
  if (spec.flip) p.flips = flips;
  if (spec.translate) p.shift = shift;
  if (spec.scale) p.scale = scale;
  return p;
}

namespace detail {

template <typename Scalar>
Volume<Scalar> rescale_about_center(const Volume<Scalar>& v, double scale) {
  const Index n = v.depth();
  const double c = 0.5 * static_cast<double>(n - 1);
  struct Tap {
    Index i0, i1;
    Scalar f;
  };
  std::vector<Tap> taps(n);
  for (Index o = 0; o < n; ++o) {
    const double src = c + (static_cast<double>(o) - c) / scale;
    const double fl = std::floor(src);
    const auto i = static_cast<Index>(fl);
    taps[o] = {reflect_index(i, n), reflect_index(i + 1, n), static_cast<Scalar>(src - fl)};
  }
  // Lerp as a + f*(b-a) keeps constant fields exactly constant.
  auto lerp = [](Scalar a, Scalar b, Scalar f) { return a + f * (b - a); };
  Volume<Scalar> out(v.shape());
  for (Index z = 0; z < n; ++z)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) {
        const Tap& tz = taps[z];
        const Tap& ty = taps[y];
        const Tap& tx = taps[x];
        auto plane = [&](Index zi) {
          const Scalar a = lerp(v(zi, ty.i0, tx.i0), v(zi, ty.i0, tx.i1), tx.f);
          const Scalar b = lerp(v(zi, ty.i1, tx.i0), v(zi, ty.i1, tx.i1), tx.f);
          return lerp(a, b, ty.f);
        };
        out(z, y, x) = lerp(plane(tz.i0), plane(tz.i1), tz.f);
      }
  return out;
}

}  // namespace detail

/// Applies the given geometric parameters: scale, then in-plane rotation, then flips, then shift.
template <typename Scalar>
Volume<Scalar> apply_augment(const Volume<Scalar>& p, const AugmentParams& a) {
  require(p.shape().cubic(), "augmentation requires a cubic patch, got " + to_string(p.shape()));
  if (a.identity()) return p;
  const Index n = p.depth();
  Volume<Scalar> cur = a.scale != 1.0 ? detail::rescale_about_center(p, a.scale) : p;
  Volume<Scalar> out(p.shape());
  const int turns = ((a.quarter_turns % 4) + 4) % 4;
  for (Index z = 0; z < n; ++z)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) {
        // Output voxel -> source voxel, undoing shift, flips and rotation in reverse order.
        Index sz = reflect_index(z - a.shift[0], n);
        Index sy = reflect_index(y - a.shift[1], n);
        Index sx = reflect_index(x - a.shift[2], n);
        if (a.flips[0]) sz = n - 1 - sz;
        if (a.flips[1]) sy = n - 1 - sy;
        if (a.flips[2]) sx = n - 1 - sx;
        for (int t = 0; t < turns; ++t) {
          const Index ry = sx;
          const Index rx = n - 1 - sy;
          sy = ry;
          sx = rx;
        }
        out(z, y, x) = cur(sz, sy, sx);
      }
  return out;
}

/// Seeded random geometric augmentation of a cubic patch; output shape equals input shape.
template <typename Scalar>
Volume<Scalar> augment(const Volume<Scalar>& p, std::uint64_t seed, const AugmentSpec& spec = {}) {
  require(p.shape().cubic(), "augmentation requires a cubic patch, got " + to_string(p.shape()));
  return apply_augment(p, sample_augment(p.depth(), spec, seed));
}

}  // namespace psfcycle
