#pragma once

#include "psfcycle/degrade.hpp"
#include "psfcycle/phantom.hpp"

namespace psfcycle {

/// Paired sharp/blurred phantom set with a known kernel.
struct SyntheticSpec {
  PhantomSpec phantom;
  int n_train = 8;
  int n_heldout = 2;
  std::array<double, 3> psf_sigma{2.5, 1.2, 1.2};
  int psf_size = 9;
  double noise_sigma = 0.01;
  bool stretch_blurred = true;  // rescale each blurred volume to [0,1]; off keeps the blur's intensity scale
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSet {
  PsfKernel<float> true_kernel;
  std::vector<Volumef> sharp_train, blurred_train;
  std::vector<Volumef> sharp_heldout, blurred_heldout;
};

/// Phantoms normalized to [0,1] (sharp domain) and their degraded counterparts
/// (blurred domain, clipped to [0,1] and optionally stretched to fill it).
/// Volume i uses phantom seed mix(seed, i) and noise seed mix(seed, i, 1);
/// held-out volumes follow the training ones.
SyntheticSet make_synthetic_set(const SyntheticSpec& spec);

}  // namespace psfcycle
