#include "psfcycle/clahe.hpp"

#include <array>
#include <cmath>

namespace psfcycle {

namespace {

constexpr int kBins = 256;

int bin_of(float v) { return std::min(kBins - 1, static_cast<int>(v * kBins)); }

// Tile bounds along one axis: [start, end) for tile t of n over extent.
std::pair<Index, Index> tile_span(Index extent, int n, int t) {
  return {extent * t / n, extent * (t + 1) / n};
}

using Cdf = std::array<double, kBins>;

Cdf clipped_cdf(const float* slice, Index w, Index y0, Index y1, Index x0, Index x1, double clip_limit) {
  std::array<double, kBins> hist{};
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) hist[static_cast<std::size_t>(bin_of(slice[y * w + x]))] += 1.0;
  const double count = static_cast<double>((y1 - y0) * (x1 - x0));
  const double limit = std::max(1.0, clip_limit * count / kBins);
  double excess = 0;
  for (double& h : hist)
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  Cdf cdf{};
  double run = 0;
  for (int b = 0; b < kBins; ++b) {
    run += hist[static_cast<std::size_t>(b)] + excess / kBins;
    cdf[static_cast<std::size_t>(b)] = run / count;
  }
  return cdf;
}

// Interpolation neighbours and weight along one axis for pixel coordinate p.
struct Axis {
  int lo, hi;
  double f;
};

Axis locate(Index p, Index extent, int n) {
  const double pos = (static_cast<double>(p) + 0.5) * n / static_cast<double>(extent) - 0.5;
  if (pos <= 0.0) return {0, 0, 0.0};
  if (pos >= n - 1) return {n - 1, n - 1, 0.0};
  const int lo = static_cast<int>(std::floor(pos));
  return {lo, lo + 1, pos - lo};
}

}  // namespace

Volumef clahe_slices(const Volumef& v, double clip_limit, int tiles) {
  require(clip_limit > 0.0, "CLAHE clip limit must be > 0");
  require(tiles >= 1, "CLAHE tile count must be >= 1");
  require(v.array().minCoeff() >= 0.0f && v.array().maxCoeff() <= 1.0f, "CLAHE input must lie in [0,1]");
  const Index h = v.height(), w = v.width();
  const int ty = static_cast<int>(std::min<Index>(tiles, h));
  const int tx = static_cast<int>(std::min<Index>(tiles, w));
  Volumef out = v;
  std::vector<Cdf> cdfs(static_cast<std::size_t>(ty * tx));
  for (Index z = 0; z < v.depth(); ++z) {
    const float* slice = v.data() + v.offset(z, 0, 0);
    const auto [mn, mx] = std::minmax_element(slice, slice + h * w);
    if (*mn == *mx) continue;
    for (int i = 0; i < ty; ++i)
      for (int j = 0; j < tx; ++j) {
        const auto [y0, y1] = tile_span(h, ty, i);
        const auto [x0, x1] = tile_span(w, tx, j);
        cdfs[static_cast<std::size_t>(i * tx + j)] = clipped_cdf(slice, w, y0, y1, x0, x1, clip_limit);
      }
    float* dst = out.data() + out.offset(z, 0, 0);
    for (Index y = 0; y < h; ++y) {
      const Axis ay = locate(y, h, ty);
      for (Index x = 0; x < w; ++x) {
        const Axis ax = locate(x, w, tx);
        const auto b = static_cast<std::size_t>(bin_of(slice[y * w + x]));
        auto c = [&](int i, int j) { return cdfs[static_cast<std::size_t>(i * tx + j)][b]; };
        const double top = (1 - ax.f) * c(ay.lo, ax.lo) + ax.f * c(ay.lo, ax.hi);
        const double bottom = (1 - ax.f) * c(ay.hi, ax.lo) + ax.f * c(ay.hi, ax.hi);
        dst[y * w + x] = static_cast<float>(std::clamp((1 - ay.f) * top + ay.f * bottom, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace psfcycle
