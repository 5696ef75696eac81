#pragma once

#include "psfcycle/psf.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

namespace testsupport {

using psfcycle::Index;
using psfcycle::Shape3;
using psfcycle::Volume;

template <typename Scalar>
Volume<Scalar> random_volume(Shape3 s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  psfcycle::Rng rng(seed);
  Volume<Scalar> v(s);
  for (auto& x : v.array()) x = static_cast<Scalar>(rng.uniform(lo, hi));
  return v;
}

/// Straight triple loop: out(p) = sum_t k(t) * v(reflect(p + t - center)).
template <typename Scalar>
Volume<Scalar> naive_correlation(const Volume<Scalar>& k, const Volume<Scalar>& v) {
  Volume<Scalar> out(v.shape());
  const Index cz = k.depth() / 2, cy = k.height() / 2, cx = k.width() / 2;
  for (Index z = 0; z < v.depth(); ++z)
    for (Index y = 0; y < v.height(); ++y)
      for (Index x = 0; x < v.width(); ++x) {
        double acc = 0;
        for (Index a = 0; a < k.depth(); ++a)
          for (Index b = 0; b < k.height(); ++b)
            for (Index c = 0; c < k.width(); ++c) {
              const Index sz = psfcycle::reflect_index(z + a - cz, v.depth());
              const Index sy = psfcycle::reflect_index(y + b - cy, v.height());
              const Index sx = psfcycle::reflect_index(x + c - cx, v.width());
              acc += static_cast<double>(k(a, b, c)) * static_cast<double>(v(sz, sy, sx));
            }
        out(z, y, x) = static_cast<Scalar>(acc);
      }
  return out;
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

/// Relative agreement, or absolute agreement for gradients that are zero up to
/// finite-difference noise (e.g. conv biases cancelled by instance norm).
inline bool gradient_close(double analytic, double numeric, double rel_tol, double abs_tol = 1e-7) {
  return std::abs(analytic - numeric) <= abs_tol || relative_error(analytic, numeric) < rel_tol;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("psfcycle-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
