#pragma once

#include "psfcycle/volume.hpp"

namespace psfcycle {

/// Image pool of previously generated patches fed to a discriminator.
/// Stores every patch until full; afterwards each query returns the fresh patch
/// or, on a fair coin, swaps it for a uniformly chosen stored one.
template <typename Scalar>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50) : capacity_(capacity) {}

  Volume<Scalar> query(const Volume<Scalar>& fresh, std::uint64_t seed) {
    if (capacity_ == 0) return fresh;
    if (pool_.size() < capacity_) {
      pool_.push_back(fresh);
      return fresh;
    }
    Rng rng(mix_seed(seed, 0x706f6f6cULL));
    if (rng.coin()) return fresh;
    const auto i = static_cast<std::size_t>(rng.below(pool_.size()));
    Volume<Scalar> old = std::move(pool_[i]);
    pool_[i] = fresh;
    return old;
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return pool_.size(); }
  const std::vector<Volume<Scalar>>& pool() const { return pool_; }
  std::vector<Volume<Scalar>>& pool() { return pool_; }

 private:
  std::size_t capacity_;
  std::vector<Volume<Scalar>> pool_;
};

}  // namespace psfcycle
