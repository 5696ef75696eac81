#include "psfcycle/synthetic.hpp"

namespace psfcycle {

void SyntheticSpec::validate() const {
  psfcycle::validate(phantom);
  require(n_train >= 1, "n_train must be >= 1");
  require(n_heldout >= 0, "n_heldout must be >= 0");
  require(psf_size >= 1, "psf_size must be >= 1");
  for (double s : psf_sigma) require(s > 0.0, "psf sigmas must be > 0");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
}

SyntheticSet make_synthetic_set(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticSet set;
  const Index k = spec.psf_size;
  set.true_kernel = make_gaussian_kernel<float>(spec.psf_sigma, {k, k, k});
  const DegradationSpec deg{set.true_kernel, spec.noise_sigma, true};
  for (int i = 0; i < spec.n_train + spec.n_heldout; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Volumef sharp = normalize01(synthesize_phantom(spec.phantom, mix_seed(spec.seed, idx)));
    Volumef blurred = degrade(sharp, deg, mix_seed(spec.seed, idx, 1));
    if (spec.stretch_blurred) blurred = normalize01(blurred);
    const bool train = i < spec.n_train;
    (train ? set.sharp_train : set.sharp_heldout).push_back(std::move(sharp));
    (train ? set.blurred_train : set.blurred_heldout).push_back(std::move(blurred));
  }
  return set;
}

}  // namespace psfcycle
