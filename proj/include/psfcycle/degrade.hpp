#pragma once

#include "psfcycle/psf.hpp"

namespace psfcycle {

struct DegradationSpec {
  PsfKernel<float> kernel;
  double noise_sigma = 0.0;  // additive Gaussian, intensity units
  bool clip = true;          // clamp to [0,1] after noise
};

/// Synthesizes a blurred-domain sample: apply_psf(kernel, v) plus seeded Gaussian noise.
template <typename Scalar>
Volume<Scalar> degrade(const Volume<Scalar>& v, const DegradationSpec& d, std::uint64_t seed) {
  require(d.noise_sigma >= 0.0, "noise sigma must be >= 0");
  const PsfKernel<Scalar> k{d.kernel.weights.template cast<Scalar>(), false};
  Volume<Scalar> out = apply_psf(k, v);
  if (d.noise_sigma > 0.0) {
    Rng rng(mix_seed(seed, 0x6e6f697365ULL));
    for (Index i = 0; i < out.size(); ++i) out.array()[i] += static_cast<Scalar>(d.noise_sigma * rng.normal());
  }
  if (d.clip) out.array() = out.array().max(Scalar(0)).min(Scalar(1));
  return out;
}

}  // namespace psfcycle
