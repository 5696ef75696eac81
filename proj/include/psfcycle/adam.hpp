#pragma once

#include "psfcycle/layers.hpp"

#include <cmath>

namespace psfcycle {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are kept in the order of the
/// parameter list handed to step(), which must not change between calls.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const ParamRefs<Scalar>& params, double lr) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    require(m_.size() == params.size(), "optimizer parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<Scalar>& p = *params[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * p.grad.cwiseAbs2();
      const auto step_size = static_cast<Scalar>(lr * p.lr_scale / bc1);
      const auto inv_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
      const auto eps = static_cast<Scalar>(cfg_.eps);
      p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_bc2 + eps);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  std::vector<Matrix<Scalar>>& first_moments() { return m_; }
  std::vector<Matrix<Scalar>>& second_moments() { return v_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return m_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Matrix<Scalar>> m_, v_;
};

}  // namespace psfcycle
