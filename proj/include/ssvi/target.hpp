#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssvi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Curvature constants of a potential. Coordinate 0 is the root.
///   ell, big_l            bounds on the leaf block of the Hessian
///   ell_root, big_l_root  root curvature; big_l_root stores 2 * sup d00 V
///   l_bar                 mixed-derivative bound (absent when its denominator is not positive)
struct RegularityConstants {
  std::optional<double> ell, big_l, ell_root, big_l_root, l_bar;
  std::vector<std::string> warnings;

  bool complete() const { return ell && big_l && ell_root && big_l_root; }
  /// ell > 0 and ell_root > 0.
  bool root_dominated() const { return ell && ell_root && *ell > 0 && *ell_root > 0; }
};

struct ConstantOverrides {
  std::optional<double> ell, big_l, ell_root, big_l_root, l_bar;
};

/// Posterior proportional to exp(-V) on R^d. Immutable; evaluation is thread safe.
/// Indices are 0-based and coordinate 0 is the root.
class TargetPotential {
 public:
  virtual ~TargetPotential() = default;

  virtual int dimension() const = 0;
  virtual std::string family() const = 0;

  double value(const Vector& z) const;
  Vector gradient(const Vector& z) const;
  double hessian(const Vector& z, int i, int j) const;

  // Unchecked kernels used by hot loops. `z` has length dimension().
  virtual double value_at(const double* z) const = 0;
  virtual void gradient_at(const double* z, double* out) const = 0;
  virtual double hessian_at(const double* z, int i, int j) const = 0;

  /// Closed-form constants; entries the family cannot supply are left empty.
  virtual RegularityConstants analytic_constants() const = 0;

 protected:
  void check_point(const Vector& z) const;
};

/// V(z) = (z-m)' P (z-m) / 2 with P = cov^{-1}.
class GaussianTarget final : public TargetPotential {
 public:
  GaussianTarget(Vector mean, Matrix cov);

  int dimension() const override { return static_cast<int>(mean_.size()); }
  std::string family() const override { return "gaussian"; }
  double value_at(const double* z) const override;
  void gradient_at(const double* z, double* out) const override;
  double hessian_at(const double*, int i, int j) const override { return precision_(i, j); }
  RegularityConstants analytic_constants() const override;

  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& precision() const { return precision_; }

 private:
  Vector mean_;
  Matrix cov_, precision_;
};

enum class LinkFamily { Linear, Logistic, Poisson };

/// GLM log-partition function and derivatives.
struct LogPartition {
  LinkFamily family = LinkFamily::Linear;
  double value(double t) const;
  double d1(double t) const;
  double d2(double t) const;
  /// Global upper bound on the second derivative, if finite.
  std::optional<double> d2_sup() const;
};

/// Scalar convex potential: Gaussian precision*(t-location)^2/2, or the
/// logistic (t-location)/s + 2 log(1 + exp(-(t-location)/s)).
struct ScalarPotential {
  enum class Kind { Gaussian, Logistic } kind = Kind::Gaussian;
  double precision = 1.0;
  double scale = 1.0;
  double location = 0.0;

  double value(double t) const;
  double d1(double t) const;
  double d2(double t) const;
  double d2_inf() const;
  double d2_sup() const;

  static ScalarPotential gaussian(double precision, double location = 0.0);
  static ScalarPotential logistic(double scale, double location = 0.0);
};

/// Shared regression data: A = X'X/c and w = X'y/c.
struct GlmData {
  Matrix design;
  Vector response;
  double dispersion = 1.0;
  LogPartition link;
  std::optional<double> psi2_lower;  // user-declared lower bound b on psi'' (logistic)

  void validate() const;
};

/// z = (theta, beta_1..beta_d), dimension d+1:
/// V = g(theta) - w'beta + sum_i psi(x_i'beta)/c + sum_j rho(beta_j - theta).
class GlmLocationTarget final : public TargetPotential {
 public:
  GlmLocationTarget(GlmData data, ScalarPotential prior, ScalarPotential hyperprior);

  int dimension() const override { return static_cast<int>(data_.design.cols()) + 1; }
  std::string family() const override { return "glm_location"; }
  double value_at(const double* z) const override;
  void gradient_at(const double* z, double* out) const override;
  double hessian_at(const double* z, int i, int j) const override;
  RegularityConstants analytic_constants() const override;

  const GlmData& data() const { return data_; }
  const Matrix& gram() const { return a_; }
  const Vector& score() const { return w_; }
  const ScalarPotential& prior() const { return prior_; }
  const ScalarPotential& hyperprior() const { return hyper_; }

 private:
  GlmData data_;
  ScalarPotential prior_, hyper_;
  Matrix a_;
  Vector w_;
};

/// z = beta (root beta_1), dimension d:
/// V = sum_i psi(x_i'beta)/c - w'beta + sum_{j>=2} xi(beta_j) + g(beta_1 + sum_j gamma_j beta_j)
/// with xi = -log(eta N(0, 1/spike) + (1-eta) N(0, 1/slab)), g(t) = debias * t^2 / 2.
class SpikeSlabGlmTarget final : public TargetPotential {
 public:
  SpikeSlabGlmTarget(GlmData data, double eta, double spike_precision, double slab_precision,
                     double debias_precision);

  int dimension() const override { return static_cast<int>(data_.design.cols()); }
  std::string family() const override { return "spike_slab"; }
  double value_at(const double* z) const override;
  void gradient_at(const double* z, double* out) const override;
  double hessian_at(const double* z, int i, int j) const override;
  RegularityConstants analytic_constants() const override;

  /// Mixture negative log-density and its derivatives.
  double mixture_value(double x) const;
  double mixture_d1(double x) const;
  double mixture_d2(double x) const;

  /// (1, gamma_2, ..., gamma_d)
  const Vector& loadings() const { return gamma_; }
  const GlmData& data() const { return data_; }
  const Matrix& gram() const { return a_; }

 private:
  struct Weights {
    double spike, slab;
  };
  Weights posterior_weights(double x) const;

  GlmData data_;
  double eta_, spike_, slab_, debias_;
  Matrix a_;
  Vector w_, gamma_;
};

double eval_potential(const TargetPotential& target, const Vector& z);
Vector grad_potential(const TargetPotential& target, const Vector& z);
/// 0-based (i, j); throws InputError when out of range.
double hessian_entry(const TargetPotential& target, const Vector& z, int i, int j);

/// Analytic constants with overrides applied, plus warnings for missing or
/// violated quantities.
RegularityConstants regularity_constants(const TargetPotential& target, const ConstantOverrides& overrides = {});

/// Lower bound on the second derivative of -log(eta N(0,tau0^-2) + (1-eta) N(0,tau1^-2)).
/// eta = 1 is the single spike component and returns tau0^2.
double mixture_log_concavity_bound(double eta, double tau0, double tau1);

/// n rows drawn from N(0, cov).
Matrix gaussian_ensemble_design(const Matrix& cov, int n, std::uint64_t seed);

/// Builds a target from its JSON block. Relative CSV paths resolve against base_dir.
std::unique_ptr<TargetPotential> target_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
ConstantOverrides overrides_from_json(const nlohmann::json& j);

/// Reads a numeric CSV (comma separated) into a matrix.
Matrix read_csv_matrix(const std::string& path, bool header);

}  // namespace ssvi
