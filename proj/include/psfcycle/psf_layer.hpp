#pragma once

#include "psfcycle/layers.hpp"
#include "psfcycle/psf.hpp"

namespace psfcycle {

template <typename Scalar>
Scalar softplus(Scalar t) {
  return t > Scalar(20) ? t : std::log1p(std::exp(t));
}

template <typename Scalar>
Scalar inverse_softplus(Scalar w) {
  if (w > Scalar(20)) return w;
  const Scalar floor_w = std::numeric_limits<Scalar>::min() * Scalar(1e6);
  return std::log(std::expm1(std::max(w, floor_w)));
}

/// The explicit blur generator: one trainable 3D kernel applied by apply_psf.
/// With `nonnegative` set, the stored parameter is passed through softplus so
/// the effective weights stay positive under any update.
template <typename Scalar>
class PsfLayer {
 public:
  PsfLayer() = default;
  PsfLayer(const PsfKernel<Scalar>& init, bool nonnegative) : size_(init.shape()), nonnegative_(nonnegative) {
    Matrix<Scalar> theta(1, size_.size());
    for (Index i = 0; i < size_.size(); ++i) {
      const Scalar w = init.weights.array()[i];
      theta(0, i) = nonnegative ? inverse_softplus(w) : w;
    }
    theta_ = Param<Scalar>("g_ba.psf.theta", std::move(theta));
  }

  PsfKernel<Scalar> kernel() const {
    typename Volume<Scalar>::Array w(size_.size());
    for (Index i = 0; i < size_.size(); ++i) w[i] = nonnegative_ ? softplus(theta_.value(0, i)) : theta_.value(0, i);
    return {Volume<Scalar>(size_, std::move(w)), true};
  }

  Volume<Scalar> forward(const Volume<Scalar>& x) const { return apply_psf(kernel(), x); }

  /// Accumulates d<grad_out, forward(x)>/dtheta; returns the input gradient if asked.
  Volume<Scalar> backward(const Volume<Scalar>& x, const Volume<Scalar>& grad_out, bool need_input_grad) {
    const PsfKernel<Scalar> k = kernel();
    accumulate_kernel_grad(apply_psf_grad_kernel(k, x, grad_out));
    if (!need_input_grad) return {};
    return apply_psf_grad_input(k, grad_out);
  }

  /// Adds dL/dw for the effective weights, chained through the reparameterization.
  void accumulate_kernel_grad(const Volume<Scalar>& grad_w) {
    for (Index i = 0; i < size_.size(); ++i) {
      Scalar g = grad_w.array()[i];
      if (nonnegative_) g *= Scalar(1) / (Scalar(1) + std::exp(-theta_.value(0, i)));
      theta_.grad(0, i) += g;
    }
  }

  /// Scales the kernel down when its mass exceeds one (no-op otherwise).
  void project_unit_mass() {
    const PsfKernel<Scalar> k = kernel();
    const Scalar mass = kernel_l1(k);
    if (mass <= Scalar(1)) return;
    PsfKernel<Scalar> scaled = k;
    scaled.weights.array() /= mass;
    for (Index i = 0; i < size_.size(); ++i) {
      const Scalar w = scaled.weights.array()[i];
      theta_.value(0, i) = nonnegative_ ? inverse_softplus(w) : w;
    }
  }

  bool nonnegative() const { return nonnegative_; }
  const Shape3& size() const { return size_; }
  Param<Scalar>& theta() { return theta_; }
  const Param<Scalar>& theta() const { return theta_; }
  ParamRefs<Scalar> parameters() { return {&theta_}; }

 private:
  Shape3 size_{};
  bool nonnegative_ = true;
  Param<Scalar> theta_;
};

}  // namespace psfcycle
