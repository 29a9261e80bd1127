#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "ssvi/dictionary.hpp"
#include "ssvi/starmap.hpp"

namespace testing {

using ssvi::Matrix;
using ssvi::Vector;

inline Vector normal_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * nd(rng);
  return v;
}

/// Well-conditioned random SPD matrix: B B'/d + 0.5 I.
inline Matrix random_spd(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> nd;
  Matrix b(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) b(i, j) = nd(rng);
  Matrix s = b * b.transpose() / d + 0.5 * Matrix::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

/// Central difference of f along coordinate k.
inline double central_diff(const std::function<double(const Vector&)>& f, Vector x, int k, double h) {
  const double x0 = x[k];
  x[k] = x0 + h;
  const double up = f(x);
  x[k] = x0 - h;
  const double down = f(x);
  return (up - down) / (2 * h);
}

inline double rel_err(double a, double b, double floor = 1.0) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Random admissible params: constrained entries uniform in [0, scale), free entries normal.
inline ssvi::StarMapParams random_params(std::mt19937_64& rng, const ssvi::DictionarySpec& spec,
                                         double scale = 0.3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd;
  ssvi::StarMapParams p = ssvi::identity_params(spec);
  for (std::size_t k = 0; k < spec.size(); ++k) p.lambda[k] = spec.constrained(k) ? scale * u(rng) : scale * nd(rng);
  for (int i = 0; i < spec.dimension(); ++i) {
    p.v[i] = 0.5 * nd(rng);
    p.alpha[i] = 0.5 + u(rng);
  }
  return p;
}

/// Running mean and standard error.
struct Moments {
  double sum = 0, sum2 = 0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    sum2 += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double se() const {
    const double m = mean();
    return std::sqrt(std::max(0.0, sum2 / n - m * m) / (n - 1));
  }
};

}  // namespace testing
