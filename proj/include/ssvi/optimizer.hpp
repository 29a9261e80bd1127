#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssvi/dictionary.hpp"
#include "ssvi/objective.hpp"
#include "ssvi/starmap.hpp"
#include "ssvi/target.hpp"

namespace ssvi {

struct PgdConfig {
  /// Explicit step; when empty the step is 1/(L + Upsilon).
  std::optional<double> step_size;
  int max_iterations = 5000;
  double tolerance = 1e-6;             // on ||(theta+ - theta)/h||_Theta
  double projection_tolerance = 1e-10;  // KKT residual of each projection
  int max_halvings = 10;
  double descent_slack = 1e-10;  // allowed increase per accepted step
  std::uint64_t seed = 0;
  std::size_t n_samples = 20000;
  bool fresh_batches = false;  // redraw the sample every iteration
};

struct StepConstants {
  double smoothness;  // L = max(L_V, L'_V / 2)
  double upsilon;
  double step;        // 1 / (L + upsilon)
  double kappa;       // (L + upsilon) / min(ell, ell_root)
};

/// 9 delta^-2 (sqrt(L'_V) + (d-1) sqrt(L_V))^2 ||Q^{-1}||_2
double compute_upsilon(const RegularityConstants& c, const DictionarySpec& spec, double q_inverse_norm);
double compute_upsilon(const RegularityConstants& c, const DictionarySpec& spec, const GramMatrix& q);
StepConstants step_constants(const RegularityConstants& c, const DictionarySpec& spec, const GramMatrix& q);

struct ProjectionResult {
  Vector point;
  Vector q_point;  // Q * point

  double kkt_residual = 0;
  int iterations = 0;
  bool used_fallback = false;
};

/// Cholesky factor of a principal submatrix Q_FF that supports adding and
/// dropping indices of F in O(|F|^2).
class UpdatableCholesky {
 public:
  explicit UpdatableCholesky(std::shared_ptr<const Matrix> q) : q_(std::move(q)) {}

  void reset(const std::vector<int>& free);
  bool append(int index);
  void remove(int index);
  /// Solves Q_FF t = rhs_F and scatters into a full-length vector (zeros off F).
  Vector solve(const Vector& rhs) const;

  const std::vector<int>& order() const { return order_; }
  bool ok() const { return ok_; }
  int updates() const { return updates_; }

 private:
  std::shared_ptr<const Matrix> q_;
  Matrix l_;
  std::vector<int> order_;
  std::vector<int> position_;  // index -> slot in order_, -1 when absent
  bool ok_ = false;
  int updates_ = 0;
};

/// argmin_{theta_i >= 0, i constrained} 1/2 theta'Q theta - theta'c for a dense SPD Q.
/// Primal-dual active set, warm started from the previous call's active set,
/// with a primal active-set fallback.
class BoxQpSolver {
 public:
  BoxQpSolver(std::shared_ptr<const Matrix> q, std::vector<char> constrained, double tolerance = 1e-10);

  ProjectionResult solve(const Vector& linear);
  /// Q-norm projection of z.
  ProjectionResult project(const Vector& z);

  const Matrix& matrix() const { return *q_; }

 private:
  bool sync_factor(const std::vector<char>& active);
  double kkt(const Vector& theta, const Vector& linear) const;
  double kkt(const Vector& theta, const Vector& linear, const Vector& q_theta) const;
  ProjectionResult primal_active_set(const Vector& linear);

  std::shared_ptr<const Matrix> q_;
  std::vector<char> constrained_;
  double tol_;
  std::vector<char> active_;  // warm start
  UpdatableCholesky factor_;
};

/// Projection of (lambda, v) onto the cone in the Theta-norm. The v block passes through.
Vector project_cone_q(const Vector& zpoint, const Matrix& q, const std::vector<char>& constrained,
                      double tolerance = 1e-10);

/// Block-separable projection engine for a dictionary Gram matrix.
class ConeProjector {
 public:
  ConeProjector(const DictionarySpec& spec, const GramMatrix& q, double tolerance = 1e-10);
  /// Minimizes ||lambda - z||_Q^2 given q_z = Q z.
  ProjectionResult project_linear(const Vector& q_z);
  ProjectionResult project(const Vector& z) { return project_linear(q_.apply(z)); }

 private:
  const DictionarySpec& spec_;
  const GramMatrix& q_;
  std::unique_ptr<BoxQpSolver> root_;
  std::vector<std::unique_ptr<BoxQpSolver>> leaves_;
};

struct FitResult {
  StarMapParams params;
  std::vector<double> free_energy;  // after each accepted iteration
  std::vector<double> grad_theta_norm;
  std::vector<int> step_halvings;
  int iterations = 0;
  std::string termination;  // tolerance | max_iterations | stalled | target_overflow
  std::string message;
  double initial_free_energy = 0;
  double initial_step = 0;
  double final_step = 0;
  double std_error = 0;  // MC std error of the final free energy
};

/// Mode of V by damped Newton with Armijo backtracking.
Vector map_point(const TargetPotential& target, const Vector& start, int max_iter = 20);

/// lambda = 0 with the spike and v at the mode of V.
StarMapParams default_init(const TargetPotential& target, const DictionarySpec& spec, const Vector& alpha);

FitResult run_pgd(const TargetPotential& target, const DictionarySpec& spec, const GramMatrix& q,
                  const PgdConfig& config, const RegularityConstants& constants, const StarMapParams& init);

/// Variant with a caller-owned sample (used by tests and benchmarks).
FitResult run_pgd(const TargetPotential& target, const DictionarySpec& spec, const GramMatrix& q,
                  const PgdConfig& config, const RegularityConstants& constants, const StarMapParams& init,
                  const SaaSample& sample);

/// ||a - b||_Theta^2 = (la - lb)'Q(la - lb) + ||va - vb||^2
double theta_distance_squared(const StarMapParams& a, const StarMapParams& b, const GramMatrix& q);

}  // namespace ssvi
