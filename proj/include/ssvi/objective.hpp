#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "ssvi/dictionary.hpp"
#include "ssvi/starmap.hpp"
#include "ssvi/target.hpp"

namespace ssvi {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Frozen standard-normal reference draws, one row per sample.
struct SaaSample {
  std::uint64_t seed = 0;
  RowMatrix x;
  /// Summation order: rows sorted lexicographically, so sums do not depend on
  /// row order. Filled by make_saa_sample / canonicalize; computed on use if empty.
  std::vector<std::uint32_t> order;
  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  int dimension() const { return static_cast<int>(x.cols()); }
};

SaaSample make_saa_sample(std::uint64_t seed, std::size_t n, int d);
void canonicalize(SaaSample& sample);

/// value = potential + entropy, with entropy = -mean log det DT.
struct FreeEnergyReport {
  double value = 0;
  double potential = 0;
  double entropy = 0;
  double std_error = 0;
};

struct ObjectiveGradient {
  Vector lambda;
  Vector v;
};

struct ObjectiveEvaluation {
  FreeEnergyReport energy;
  ObjectiveGradient grad;  // empty unless requested
};

/// Free energy mean[V(T(x)) - log det DT(x)] and optionally its gradient in (lambda, v).
/// Throws NumericalError naming the sample when V is not finite.
ObjectiveEvaluation evaluate_objective(const StarMapParams& params, const DictionarySpec& spec,
                                       const TargetPotential& target, const SaaSample& sample, bool with_gradient);

FreeEnergyReport free_energy(const StarMapParams& params, const DictionarySpec& spec, const TargetPotential& target,
                             const SaaSample& sample);
ObjectiveGradient gradient(const StarMapParams& params, const DictionarySpec& spec, const TargetPotential& target,
                           const SaaSample& sample);

}  // namespace ssvi
