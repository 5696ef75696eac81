#pragma once

#include "psfcycle/volume.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace psfcycle {

struct Psnr {
  double db = 0;           // +inf when identical
  bool identical = false;  // mean squared error is exactly 0
};

template <typename Scalar>
double mean_squared_error(const Volume<Scalar>& reference, const Volume<Scalar>& test) {
  require(reference.shape() == test.shape(), "metric shape mismatch: " + to_string(reference.shape()) + " vs " +
                                                 to_string(test.shape()));
  return (reference.array().template cast<double>() - test.array().template cast<double>()).square().mean();
}

template <typename Scalar>
Psnr psnr(const Volume<Scalar>& reference, const Volume<Scalar>& test, double peak = 1.0) {
  require(peak > 0.0, "PSNR peak must be > 0");
  const double mse = mean_squared_error(reference, test);
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(peak * peak / mse), false};
}

template <typename Scalar>
double mean_abs_error(const Volume<Scalar>& reference, const Volume<Scalar>& test) {
  require(reference.shape() == test.shape(), "metric shape mismatch: " + to_string(reference.shape()) + " vs " +
                                                 to_string(test.shape()));
  return (reference.array().template cast<double>() - test.array().template cast<double>()).abs().mean();
}

struct Metrics {
  Psnr psnr;
  double mean_abs_err = 0;
  std::optional<double> kernel_similarity;
};

template <typename Scalar>
Metrics compute_metrics(const Volume<Scalar>& reference, const Volume<Scalar>& test, double peak = 1.0) {
  return {psnr(reference, test, peak), mean_abs_error(reference, test), std::nullopt};
}

}  // namespace psfcycle
