#include "psfcycle/phantom.hpp"

#include <Eigen/Dense>

namespace psfcycle {

void validate(const PhantomSpec& spec) {
  require(spec.shape.positive(), "phantom shape must be strictly positive, got " + to_string(spec.shape));
  require(spec.n_filaments >= 1, "phantom needs n_filaments >= 1");
  require(spec.filament_width_vox > 0.0, "filament width must be > 0");
  const auto [lo, hi] = spec.intensity_range;
  require(lo >= 0.0 && hi <= 1.0 && lo < hi, "intensity range must satisfy 0 <= lo < hi <= 1");
  require(spec.curvature >= 0.0, "curvature must be >= 0");
}

namespace {

using Vec3 = Eigen::Vector3d;

constexpr double kStep = 0.5;

Vec3 random_direction(Rng& rng) {
  Vec3 d(rng.normal(), rng.normal(), rng.normal());
  const double n = d.norm();
  return n > 0.0 ? Vec3(d / n) : Vec3::UnitZ();
}

bool inside(const Vec3& p, const Vec3& extent, double margin) {
  return (p.array() >= -margin).all() && (p.array() <= extent.array() - 1.0 + margin).all();
}

// Follows a smooth random walk from start until it leaves the volume.
void trace(std::vector<Vec3>& points, Vec3 pos, Vec3 dir, const Vec3& extent, double curvature, double margin,
           Rng& rng) {
  const auto max_steps = static_cast<int>(8.0 * extent.maxCoeff() / kStep);
  const double jitter = curvature * std::sqrt(kStep);
  for (int s = 0; s < max_steps && inside(pos, extent, margin); ++s) {
    points.push_back(pos);
    dir += jitter * Vec3(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    pos += kStep * dir;
  }
}

void stamp(Volumef& v, const Vec3& c, double radius, float value) {
  const Shape3 s = v.shape();
  const double r2 = radius * radius;
  const auto lo = [&](double x) { return std::max<Index>(0, static_cast<Index>(std::ceil(x - radius))); };
  const auto hi = [&](double x, Index n) { return std::min<Index>(n - 1, static_cast<Index>(std::floor(x + radius))); };
  for (Index z = lo(c[0]); z <= hi(c[0], s.d); ++z)
    for (Index y = lo(c[1]); y <= hi(c[1], s.h); ++y)
      for (Index x = lo(c[2]); x <= hi(c[2], s.w); ++x) {
        const double dz = double(z) - c[0], dy = double(y) - c[1], dx = double(x) - c[2];
        if (dz * dz + dy * dy + dx * dx <= r2) v(z, y, x) = std::max(v(z, y, x), value);
      }
}

}  // namespace

Volumef synthesize_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  validate(spec);
  Volumef v(spec.shape);
  const Vec3 extent(double(spec.shape.d), double(spec.shape.h), double(spec.shape.w));
  // Thin tubes still touch a voxel center at least once per half-voxel step.
  const double radius = std::max(0.5, 0.5 * spec.filament_width_vox);
  const double margin = radius;
  for (int f = 0; f < spec.n_filaments; ++f) {
    Rng rng(mix_seed(seed, 0x66696cULL, static_cast<std::uint64_t>(f)));
    const auto value = static_cast<float>(rng.uniform(spec.intensity_range[0], spec.intensity_range[1]));
    const Vec3 start(rng.uniform() * (extent[0] - 1.0), rng.uniform() * (extent[1] - 1.0),
                     rng.uniform() * (extent[2] - 1.0));
    const Vec3 dir = random_direction(rng);
    std::vector<Vec3> points;
    trace(points, start, dir, extent, spec.curvature, margin, rng);
    trace(points, start - kStep * dir, -dir, extent, spec.curvature, margin, rng);
    for (const auto& p : points) stamp(v, p, radius, value);
  }
  return v;
}

}  // namespace psfcycle
