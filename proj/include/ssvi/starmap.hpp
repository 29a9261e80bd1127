#pragma once

#include <Eigen/Dense>
#include <vector>

#include <json.hpp>

#include "ssvi/dictionary.hpp"
#include "ssvi/target.hpp"

namespace ssvi {

/// T(x) = diag(alpha) x + sum_k lambda_k T_k(x) + v with centered bases T_k.
struct StarMapParams {
  Vector lambda;
  Vector v;
  Vector alpha;
};

/// alpha = ((L'_V)^{-1/2}, L_V^{-1/2}, ...). Throws when the constants are missing or not positive.
Vector spike_vector(int d, const RegularityConstants& c);
StarMapParams spike_params(const DictionarySpec& spec, const Vector& alpha, const Vector& v = Vector());
/// alpha = 1, lambda = 0, v = 0.
StarMapParams identity_params(const DictionarySpec& spec);
/// Shapes match, alpha > 0 and constrained coefficients >= -tol.
bool admissible(const StarMapParams& params, const DictionarySpec& spec, double tol = 0.0);

/// A map z_0 = T_0(x_0), z_i = T_i(x_i; x_0) evaluated coordinate-wise.
class StarSeparableMap {
 public:
  virtual ~StarSeparableMap() = default;
  virtual int dimension() const = 0;
  virtual double root(double x0) const = 0;
  virtual double leaf(int i, double xi, double x0) const = 0;
  Vector apply(const Vector& x) const;
};

/// Triangular Jacobian with nonzeros on the diagonal and in column 0.
struct JacobianSketch {
  Vector diag;      // length d
  Vector root_col;  // length d-1: entries (i, 0) for i >= 1
  Matrix dense() const;
};

/// Compiled star map: prefix sums over breakpoints give O(1) work per coordinate.
class StarMap final : public StarSeparableMap {
 public:
  StarMap(const DictionarySpec& spec, const StarMapParams& params);

  int dimension() const override { return d_; }
  double root(double x0) const override;
  double leaf(int i, double xi, double x0) const override;

  /// dT_0/dx_0, dT_i/dx_i, dT_i/dx_0
  double root_slope(double x0) const;
  double leaf_slope(int i, double xi, double x0) const;
  double leaf_cross_slope(int i, double xi, double x0) const;

  /// z = T(x); diag and root_col may be null.
  void eval(const double* x, double* z, double* diag = nullptr, double* root_col = nullptr) const;
  JacobianSketch jacobian(const Vector& x) const;

  /// Bisection inverses (tolerance 1e-12, at most 200 steps).
  double root_inverse(double z0) const;
  double leaf_inverse(int i, double zi, double x0) const;

  const DictionarySpec& spec() const { return spec_; }
  const StarMapParams& params() const { return params_; }

 private:
  double ramp_sum(std::size_t family, Cell c) const;
  double coef(std::size_t family, int k) const { return coef_[family * n_ + static_cast<std::size_t>(k)]; }
  std::size_t leaf_family(int i, int slot) const { return 1 + static_cast<std::size_t>(i - 1) * (2 * n_ + 3) + static_cast<std::size_t>(slot); }

  DictionarySpec spec_;
  StarMapParams params_;
  int d_;
  std::size_t n_;
  double inv_width_;
  Vector shift_;                // v - sum lambda * offset, per coordinate
  std::vector<double> prefix_;  // per family: N+1 partial sums
  std::vector<double> coef_;    // per family: N coefficients
};

Vector map_eval(const StarMapParams& params, const DictionarySpec& spec, const Vector& x);
JacobianSketch jacobian(const StarMapParams& params, const DictionarySpec& spec, const Vector& x);

/// Sum of log diagonal entries; throws NumericalError on a nonpositive diagonal.
double log_det(const JacobianSketch& jac);

/// tr(DT^{-1} DT') for a basis T' on `coordinate` with Jacobian entries `partials`.
double inverse_trace_weight(const JacobianSketch& jac, int coordinate, const BasisPartials& partials);

double root_marginal_logdensity(const StarMap& map, double z0);
double leaf_conditional_logdensity(const StarMap& map, int i, double zi, double z0);

/// Interpolates T_star - diag(alpha) id on the grid with the clamped tail
/// construction. Throws InputError if an increment that must be nonnegative is not.
StarMapParams build_oracle_approximator(const StarSeparableMap& t_star, const DictionarySpec& spec, const Vector& alpha);

nlohmann::json params_to_json(const StarMapParams& params, const DictionarySpec& spec);
struct SavedMap {
  DictionarySpec spec;
  StarMapParams params;
};
/// Rebuilds the dictionary the params were saved with; rejects ordering mismatches.
SavedMap params_from_json(const nlohmann::json& j);

}  // namespace ssvi
