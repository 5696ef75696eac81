#pragma once

#include "psfcycle/volume.hpp"

namespace psfcycle {

/// Contrast-limited adaptive histogram equalization applied to each z-slice.
///
/// Each slice is split into tiles x tiles regions with 256-bin histograms.
/// Bins are clipped at clip_limit times the mean bin count and the excess is
/// spread evenly; the resulting CDFs are bilinearly interpolated between tile
/// centres. Constant slices are returned unchanged. Input must lie in [0,1].
Volumef clahe_slices(const Volumef& v, double clip_limit, int tiles);

}  // namespace psfcycle
