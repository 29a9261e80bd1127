#include "ssvi/oracle.hpp"

#include <cmath>

#include "ssvi/error.hpp"

namespace ssvi {

namespace {

Eigen::LLT<Matrix> spd_factor(const Matrix& cov, const char* what) {
  if (cov.rows() != cov.cols() || cov.rows() < 1) throw InputError(std::string(what) + " must be square");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InputError(std::string(what) + " is not symmetric");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw InputError(std::string(what) + " is not positive definite");
  return llt;
}

Matrix precision_of(const Matrix& cov) {
  Eigen::LLT<Matrix> llt = spd_factor(cov, "covariance");
  Matrix p = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
  return 0.5 * (p + p.transpose());
}

double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

SsviGaussian ssvi_gaussian(const Vector& m, const Matrix& cov) {
  if (m.size() != cov.rows()) throw InputError("mean and covariance sizes differ");
  const Matrix prec = precision_of(cov);
  const Eigen::Index d = cov.rows();
  Matrix s(d, d);
  const double s00 = cov(0, 0);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i == 0 || j == 0)
        s(i, j) = cov(i, j);
      else if (i == j)
        s(i, i) = 1.0 / prec(i, i) + cov(0, i) * cov(0, i) / s00;
      else
        s(i, j) = cov(0, i) * cov(0, j) / s00;
    }
  }
  Eigen::LLT<Matrix> check(s);
  if (check.info() != Eigen::Success) throw NumericalError("star covariance is not positive definite");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
  return {{m, s}, eig.eigenvalues().minCoeff()};
}

GaussianDist mfvi_gaussian(const Vector& m, const Matrix& cov) {
  if (m.size() != cov.rows()) throw InputError("mean and covariance sizes differ");
  const Matrix prec = precision_of(cov);
  return {m, prec.diagonal().cwiseInverse().asDiagonal()};
}

double kl_gaussians(const GaussianDist& p0, const GaussianDist& p1) {
  const Eigen::Index k = p0.mean.size();
  if (p1.mean.size() != k || p0.cov.rows() != k || p1.cov.rows() != k) throw InputError("dimension mismatch");
  Eigen::LLT<Matrix> l0, l1;
  try {
    l0 = spd_factor(p0.cov, "covariance");
    l1 = spd_factor(p1.cov, "covariance");
  } catch (const InputError&) {
    throw InputError("singular or indefinite covariance in KL");
  }
  const Vector dm = p0.mean - p1.mean;
  const double trace = l1.solve(p0.cov).trace();
  const double quad = dm.dot(l1.solve(dm));
  return 0.5 * (log_det(l1) - log_det(l0)) + 0.5 * (trace - static_cast<double>(k)) + 0.5 * quad;
}

double ssvi_mfvi_gap(const Matrix& cov) {
  const Matrix prec = precision_of(cov);
  return -0.5 * std::log(cov(0, 0) * prec(0, 0));
}

GaussianStarMap::GaussianStarMap(Vector mean, const Matrix& cov) : mean_(std::move(mean)) {
  if (mean_.size() != cov.rows()) throw InputError("mean and covariance sizes differ");
  const Matrix prec = precision_of(cov);
  root_scale_ = std::sqrt(cov(0, 0));
  regression_ = cov.col(0) / cov(0, 0);
  leaf_scale_ = prec.diagonal().cwiseInverse().cwiseSqrt();
}

double GaussianStarMap::leaf(int i, double xi, double x0) const {
  if (i < 1 || i >= dimension()) throw InputError("leaf index out of range");
  return mean_[i] + regression_[i] * (root(x0) - mean_[0]) + leaf_scale_[i] * xi;
}

GaussianStarMap closed_form_star_map(const Vector& m, const Matrix& cov) { return GaussianStarMap(m, cov); }

}  // namespace ssvi
