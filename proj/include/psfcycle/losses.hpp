#pragma once

#include "psfcycle/volume.hpp"

#include <cmath>
#include <vector>

namespace psfcycle {

struct LossWeights {
  double lambda1 = 3.0;   // cycle consistency
  double lambda2 = 0.01;  // kernel L1

  void validate() const { require(lambda1 >= 0.0 && lambda2 >= 0.0, "loss weights must be >= 0"); }
};

/// One score map per discriminator scale.
template <typename Scalar>
using ScoreMaps = std::vector<Volume<Scalar>>;

// Every map and voxel error is reduced by its mean; per-scale terms are summed.

template <typename Scalar>
Scalar lsgan_generator_loss(const ScoreMaps<Scalar>& fake_scores) {
  require(!fake_scores.empty(), "generator loss needs at least one score map");
  Scalar total = 0;
  for (const auto& s : fake_scores) total += (s.array() - Scalar(1)).square().mean();
  return total;
}

template <typename Scalar>
ScoreMaps<Scalar> lsgan_generator_loss_grad(const ScoreMaps<Scalar>& fake_scores) {
  require(!fake_scores.empty(), "generator loss needs at least one score map");
  ScoreMaps<Scalar> grads;
  for (const auto& s : fake_scores) {
    Volume<Scalar> g = s;
    g.array() = Scalar(2) * (s.array() - Scalar(1)) / static_cast<Scalar>(s.size());
    grads.push_back(std::move(g));
  }
  return grads;
}

template <typename Scalar>
Scalar lsgan_discriminator_loss(const ScoreMaps<Scalar>& real_scores, const ScoreMaps<Scalar>& fake_scores) {
  require(real_scores.size() == fake_scores.size(), "real and fake score lists differ in scale count");
  require(!real_scores.empty(), "discriminator loss needs at least one score map");
  Scalar total = 0;
  for (std::size_t i = 0; i < real_scores.size(); ++i)
    total += Scalar(0.5) * (real_scores[i].array() - Scalar(1)).square().mean() +
             Scalar(0.5) * fake_scores[i].array().square().mean();
  return total;
}

/// Gradients with respect to (real_scores, fake_scores).
template <typename Scalar>
std::pair<ScoreMaps<Scalar>, ScoreMaps<Scalar>> lsgan_discriminator_loss_grad(const ScoreMaps<Scalar>& real_scores,
                                                                             const ScoreMaps<Scalar>& fake_scores) {
  require(real_scores.size() == fake_scores.size(), "real and fake score lists differ in scale count");
  ScoreMaps<Scalar> gr, gf;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    Volume<Scalar> r = real_scores[i];
    r.array() = (real_scores[i].array() - Scalar(1)) / static_cast<Scalar>(r.size());
    Volume<Scalar> f = fake_scores[i];
    f.array() = fake_scores[i].array() / static_cast<Scalar>(f.size());
    gr.push_back(std::move(r));
    gf.push_back(std::move(f));
  }
  return {std::move(gr), std::move(gf)};
}

namespace detail {
template <typename Scalar>
void check_same(const Volume<Scalar>& a, const Volume<Scalar>& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + " shape mismatch: " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
}
}  // namespace detail

/// Mean absolute A-cycle error plus mean absolute B-cycle error.
template <typename Scalar>
Scalar cycle_loss(const Volume<Scalar>& x_a, const Volume<Scalar>& cyc_a, const Volume<Scalar>& x_b,
                  const Volume<Scalar>& cyc_b) {
  detail::check_same(x_a, cyc_a, "A-cycle");
  detail::check_same(x_b, cyc_b, "B-cycle");
  return (cyc_a.array() - x_a.array()).abs().mean() + (cyc_b.array() - x_b.array()).abs().mean();
}

/// Gradients with respect to (cyc_a, cyc_b); the subgradient at zero error is 0.
template <typename Scalar>
std::pair<Volume<Scalar>, Volume<Scalar>> cycle_loss_grad(const Volume<Scalar>& x_a, const Volume<Scalar>& cyc_a,
                                                          const Volume<Scalar>& x_b, const Volume<Scalar>& cyc_b) {
  detail::check_same(x_a, cyc_a, "A-cycle");
  detail::check_same(x_b, cyc_b, "B-cycle");
  auto l1_grad = [](const Volume<Scalar>& x, const Volume<Scalar>& c) {
    Volume<Scalar> g = c;
    g.array() = (c.array() - x.array()).sign() / static_cast<Scalar>(c.size());
    return g;
  };
  return {l1_grad(x_a, cyc_a), l1_grad(x_b, cyc_b)};
}

/// Mean absolute error, used by the supervised baseline.
template <typename Scalar>
Scalar l1_loss(const Volume<Scalar>& pred, const Volume<Scalar>& target) {
  detail::check_same(pred, target, "L1");
  return (pred.array() - target.array()).abs().mean();
}

template <typename Scalar>
Volume<Scalar> l1_loss_grad(const Volume<Scalar>& pred, const Volume<Scalar>& target) {
  detail::check_same(pred, target, "L1");
  Volume<Scalar> g = pred;
  g.array() = (pred.array() - target.array()).sign() / static_cast<Scalar>(pred.size());
  return g;
}

/// adv_ab + adv_ba + lambda1 * cycle + lambda2 * kernel_l1
inline double total_generator_objective(double adv_ab, double adv_ba, double cyc, double k_l1, const LossWeights& w) {
  if (!std::isfinite(adv_ab) || !std::isfinite(adv_ba) || !std::isfinite(cyc) || !std::isfinite(k_l1))
    throw std::domain_error("non-finite loss term in generator objective");
  return adv_ab + adv_ba + w.lambda1 * cyc + w.lambda2 * k_l1;
}

}  // namespace psfcycle
