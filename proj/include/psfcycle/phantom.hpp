#pragma once

#include "psfcycle/volume.hpp"

namespace psfcycle {

/// Random filament phantom description (stand-in for microtubule stacks).
struct PhantomSpec {
  Shape3 shape{64, 64, 64};
  int n_filaments = 12;
  double filament_width_vox = 2.0;
  std::array<double, 2> intensity_range{0.5, 1.0};
  double curvature = 0.15;  // std-dev of the per-voxel direction perturbation
};

void validate(const PhantomSpec& spec);

/// Rasterizes n_filaments smooth random 3D curves as tubes of the given width
/// on a zero background. Overlaps keep the brighter filament. Deterministic in seed.
Volumef synthesize_phantom(const PhantomSpec& spec, std::uint64_t seed);

}  // namespace psfcycle
