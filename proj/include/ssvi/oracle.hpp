#pragma once

#include <Eigen/Dense>

#include "ssvi/starmap.hpp"

namespace ssvi {

struct GaussianDist {
  Vector mean;
  Matrix cov;
};

struct SsviGaussian {
  GaussianDist dist;
  double min_eigenvalue;  // of dist.cov
};

/// Star-structured KL minimizer for N(m, cov): root row kept, leaves coupled
/// only through the root.
SsviGaussian ssvi_gaussian(const Vector& m, const Matrix& cov);

/// Mean-field minimizer: diag(1 / precision_ii).
GaussianDist mfvi_gaussian(const Vector& m, const Matrix& cov);

/// KL(p0 || p1).
double kl_gaussians(const GaussianDist& p0, const GaussianDist& p1);

/// KL(ssvi || target) - KL(mfvi || target) = -log(cov_00 * precision_00) / 2.
double ssvi_mfvi_gap(const Matrix& cov);

/// Monotone star map pushing N(0, I) to the star-structured minimizer.
class GaussianStarMap final : public StarSeparableMap {
 public:
  GaussianStarMap(Vector mean, const Matrix& cov);
  int dimension() const override { return static_cast<int>(mean_.size()); }
  double root(double x0) const override { return mean_[0] + root_scale_ * x0; }
  double leaf(int i, double xi, double x0) const override;

 private:
  Vector mean_;
  double root_scale_;
  Vector regression_;  // cov_i0 / cov_00
  Vector leaf_scale_;  // precision_ii^{-1/2}
};

GaussianStarMap closed_form_star_map(const Vector& m, const Matrix& cov);

}  // namespace ssvi
