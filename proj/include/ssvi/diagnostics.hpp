#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssvi/objective.hpp"
#include "ssvi/starmap.hpp"
#include "ssvi/target.hpp"

namespace ssvi {

/// n standard-normal rows; chunk c of 1024 rows is drawn from stream (seed, stream + c),
/// so the draws do not depend on the thread count.
RowMatrix reference_draws(std::uint64_t seed, std::uint64_t stream, std::size_t n, int d);

struct Estimate {
  double value = 0;
  double std_error = 0;
};

// ---------------------------------------------------------------- residuals

struct ResidualOptions {
  int root_points = 21;  // grid over mean +- 3 sd of the root pushforward
  int leaf_points = 11;  // per root point: leaf reference quantiles in [-3, 3]
  std::size_t mc_n = 2000;
  std::uint64_t seed = 0;
  double fd_step = 1e-4;
};

/// equation 0 is the root equation; equation i >= 1 the leaf-i equation at (z0, zi).
struct ResidualPoint {
  int equation = 0;
  double z0 = 0;
  double zi = 0;  // unused (0) for the root equation
  double log_density_slope = 0;
  double conditional_mean = 0;  // E[d_i V | conditioning]
  double residual = 0;
  double std_error = 0;
  double normalized = 0;  // residual / (1 + |conditional_mean|)
  double z_score = 0;     // |residual| / std_error; 0 for deterministic points
  bool stochastic = true;  // false when no leaf is integrated out or the integrand does not vary
};

struct ResidualReport {
  std::vector<ResidualPoint> points;
  double worst_normalized = 0;
  double worst_z_score = 0;  // over stochastic points
  double root_mean = 0, root_sd = 0;
  nlohmann::json to_json() const;
};

ResidualReport self_consistency_residual(const StarMapParams& params, const DictionarySpec& spec,
                                         const TargetPotential& target, const ResidualOptions& options);

// ------------------------------------------------------------------- bound

struct PairTerm {
  int i = 0, j = 0;  // leaves, i < j
  Estimate mean_square;  // E[(d_ij V)^2]
};

struct BoundCertificate {
  bool assumptions_verified = false;
  std::string status;
  double constant = 0;     // L'_V / (2 l'_V l_V^2)
  Estimate pair_sum;       // sum over leaf pairs i < j of E[(d_ij V)^2]
  std::vector<PairTerm> terms;
  std::optional<double> rhs;
  double rhs_std_error = 0;
  std::optional<double> kl;     // exact KL(pi* || pi), Gaussian path
  std::optional<double> slack;  // rhs - kl
  nlohmann::json to_json() const;
};

/// pi* sampled through the fitted map.
BoundCertificate approximation_bound(const StarMapParams& params, const DictionarySpec& spec,
                                     const TargetPotential& target, const RegularityConstants& constants,
                                     std::size_t mc_n, std::uint64_t seed);

/// pi* taken as the closed-form star-structured Gaussian; also reports the exact KL.
BoundCertificate approximation_bound(const GaussianTarget& target, const RegularityConstants& constants,
                                     std::size_t mc_n, std::uint64_t seed);

// ------------------------------------------------------- distances, moments

/// sqrt(E ||T_a(x) - T_b(x)||^2) over x ~ N(0, I); std error by the delta method.
Estimate l2_map_distance(const StarSeparableMap& a, const StarSeparableMap& b, std::size_t mc_n, std::uint64_t seed);

struct PushforwardMoments {
  Vector mean, mean_se;
  Matrix cov, cov_se;
  nlohmann::json to_json() const;
};

PushforwardMoments pushforward_moments(const StarSeparableMap& map, std::size_t mc_n, std::uint64_t seed);

}  // namespace ssvi
