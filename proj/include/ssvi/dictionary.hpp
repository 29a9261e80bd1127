#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssvi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Bumped whenever the canonical basis order changes; stored in params and caches.
inline constexpr int kOrderingVersion = 1;

/// M5 is the positive-ramp root class with a sign-free coefficient.
enum class BasisClass : std::uint8_t { M0 = 0, M1, M2, M3, M4, M5 };

const char* class_name(BasisClass c);

/// `leaf` is the 0-based output coordinate (>= 1; 0 for M0). `b` and
/// `b_prime` index breakpoints -R + k*delta, k in [0, N).
struct BasisId {
  BasisClass cls = BasisClass::M0;
  int leaf = 0;
  int b = 0;
  int b_prime = 0;
  bool operator==(const BasisId&) const = default;
};

/// Position of x on the grid. index -1: x < -R; index N: x >= R;
/// otherwise x in [b_index, b_index + delta) with frac = (x - b_index)/delta.
struct Cell {
  int index;
  double frac;
};

/// Piecewise-linear dictionary on [-R, R] with cell width delta, ordered
/// class-major, then leaf, then b', then b.
class DictionarySpec {
 public:
  DictionarySpec(int d, double radius, double width);

  int dimension() const { return d_; }
  int cells() const { return n_; }
  double radius() const { return radius_; }
  double width() const { return width_; }
  std::size_t size() const { return p_; }
  double breakpoint(int k) const { return -radius_ + k * width_; }

  Cell locate(double x) const;

  BasisId basis(std::size_t k) const;
  std::size_t index(const BasisId& id) const;
  int coordinate(std::size_t k) const { return k < static_cast<std::size_t>(n_) ? 0 : basis(k).leaf; }
  bool constrained(std::size_t k) const { return k < class_start(BasisClass::M5); }
  std::size_t class_start(BasisClass c) const;

  /// E[T] under the standard normal reference, on the basis' active coordinate.
  double offset(std::size_t k) const { return offsets_[k]; }
  const Vector& offsets() const { return offsets_; }

  /// Size of the per-leaf Gram block: 2N^2 + 3N.
  std::size_t leaf_block_size() const { return static_cast<std::size_t>(2 * n_ * n_ + 3 * n_); }
  /// Global index of position `local` in leaf `leaf`'s block (classes M1..M5 in order).
  std::size_t leaf_global(int leaf, std::size_t local) const;

  /// Gathers the coefficients of each leaf into a (leaf_block_size x (d-1)) matrix.
  Matrix gather_leaves(const Vector& lambda) const;
  void scatter_leaves(const Matrix& cols, Vector& lambda) const;

  nlohmann::json to_json() const;

 private:
  int d_, n_;
  double radius_, width_;
  std::size_t p_;
  Vector offsets_;
};

DictionarySpec build_dictionary(int d, double radius, double width);

struct Contribution {
  int coordinate;
  double value;
};

/// Centered value of a basis on its active coordinate.
Contribution basis_eval(const DictionarySpec& spec, const BasisId& id, const Vector& x);

/// Jacobian entries of a basis: diag is d/dx_i at its coordinate, root is d/dx_0
/// (always 0 for M0, whose only slot is the diagonal (0,0)).
struct BasisPartials {
  double diag;
  double root;
};
BasisPartials basis_partials(const DictionarySpec& spec, const BasisId& id, const Vector& x);

/// E[ramp((X - b)/delta)] for X ~ N(0,1).
double ramp_mean(double b, double delta);

/// Block-diagonal Gram matrix of the centered bases under N(0, I). The root
/// block covers M0; every leaf shares one block ordered M1, M2, M3, M4, M5.
class GramMatrix {
 public:
  GramMatrix(const DictionarySpec& spec, Matrix root_block, Matrix leaf_block, double inverse_norm = -1);

  std::size_t size() const { return p_; }
  int dimension() const { return d_; }
  const Matrix& root_block() const { return root_; }
  const Matrix& leaf_block() const { return leaf_; }
  const Eigen::LLT<Matrix>& root_factor() const { return root_llt_; }
  const Eigen::LLT<Matrix>& leaf_factor() const { return leaf_llt_; }

  /// ||Q^{-1}||_2 from inverse power iteration on each distinct block.
  double inverse_norm() const { return inverse_norm_; }

  double entry(std::size_t k, std::size_t l) const;
  Vector apply(const Vector& lambda) const;
  Vector solve(const Vector& g) const;
  double quadratic(const Vector& lambda) const { return lambda.dot(apply(lambda)); }
  Matrix dense() const;

 private:
  DictionarySpec spec_;
  std::size_t p_;
  int d_;
  Matrix root_, leaf_;
  Eigen::LLT<Matrix> root_llt_, leaf_llt_;
  double inverse_norm_;
};

struct GramOptions {
  /// Directory for the binary cache; empty disables it. Defaults to $SSVI_CACHE_DIR.
  std::string cache_dir = default_cache_dir();
  static std::string default_cache_dir();
};

/// Entries from exact truncated-normal moments per grid interval.
GramMatrix gram_matrix(const DictionarySpec& spec, const GramOptions& options = {});

/// Inverse power iteration for ||A^{-1}||_2 with A = factor's matrix.
double inverse_norm_estimate(const Eigen::LLT<Matrix>& factor, int max_iter = 500, double rel_tol = 1e-6);

std::string gram_cache_path(const std::string& dir, const DictionarySpec& spec);
void write_gram_cache(const std::string& path, const GramMatrix& q, const DictionarySpec& spec);
/// Returns false when the file is absent or does not match the spec.
bool read_gram_cache(const std::string& path, const DictionarySpec& spec, Matrix& root, Matrix& leaf, double& inv_norm);

}  // namespace ssvi
