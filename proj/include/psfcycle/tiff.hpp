#pragma once

#include "psfcycle/volume.hpp"

#include <filesystem>

namespace psfcycle {

/// Reads a multi-page TIFF stack, one z-slice per page. Accepts uncompressed
/// single-sample pages in 8/16/32-bit integer or 32/64-bit float formats, in
/// either byte order. Throws IoError on missing files, non-TIFF payloads,
/// unsupported encodings and pages of differing size.
Volumef load_volume(const std::filesystem::path& path);

/// Writes a little-endian float32 multi-page TIFF. The voxel size, when set,
/// is stored in the ImageDescription tag and restored by load_volume.
void save_volume(const Volumef& v, const std::filesystem::path& path);

/// Single-page 8-bit grayscale TIFF for figure export; values are clamped to [0,1].
void save_slice_u8(const Eigen::ArrayXXf& slice, const std::filesystem::path& path);

}  // namespace psfcycle
