#include "ssvi/dictionary.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ssvi/error.hpp"
#include "ssvi/numeric.hpp"
#include "ssvi/parallel.hpp"

namespace ssvi {

const char* class_name(BasisClass c) {
  switch (c) {
    case BasisClass::M0: return "M0";
    case BasisClass::M1: return "M1";
    case BasisClass::M2: return "M2";
    case BasisClass::M3: return "M3";
    case BasisClass::M4: return "M4";
    case BasisClass::M5: return "M5'";
  }
  return "?";
}

namespace {

/// Linear pieces c0 + c1*x on the N+2 grid intervals
/// (-inf,-R), [b_0,b_1), ..., [b_{N-1},R), [R,inf).
struct Piecewise {
  std::vector<double> c0, c1;
  explicit Piecewise(int n) : c0(n + 2, 0.0), c1(n + 2, 0.0) {}
};

/// Truncated standard-normal moments int x^k phi over each interval.
struct IntervalMoments {
  std::vector<double> m0, m1, m2;

  IntervalMoments(int n, double radius, double width) : m0(n + 2), m1(n + 2), m2(n + 2) {
    const double inf = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n + 2; ++k) {
      const double a = k == 0 ? -inf : -radius + (k - 1) * width;
      const double b = k == n + 1 ? inf : -radius + k * width;
      // Upper-tail form keeps precision for cells right of zero.
      m0[k] = a >= 0 ? norm_cdf(-a) - norm_cdf(-b) : norm_cdf(b) - norm_cdf(a);
      const double pa = std::isinf(a) ? 0.0 : norm_pdf(a), pb = std::isinf(b) ? 0.0 : norm_pdf(b);
      const double apa = std::isinf(a) ? 0.0 : a * pa, bpb = std::isinf(b) ? 0.0 : b * pb;
      m1[k] = pa - pb;
      m2[k] = m0[k] + apa - bpb;
    }
  }

  double mean(const Piecewise& f) const {
    double s = 0;
    for (std::size_t k = 0; k < m0.size(); ++k) s += f.c0[k] * m0[k] + f.c1[k] * m1[k];
    return s;
  }

  double inner(const Piecewise& f, const Piecewise& g) const {
    double s = 0;
    for (std::size_t k = 0; k < m0.size(); ++k) {
      s += f.c0[k] * g.c0[k] * m0[k] + (f.c0[k] * g.c1[k] + f.c1[k] * g.c0[k]) * m1[k] + f.c1[k] * g.c1[k] * m2[k];
    }
    return s;
  }
};

Piecewise ramp_piece(int n, double radius, double width, int m) {
  Piecewise f(n);
  const double b = -radius + m * width;
  f.c0[m + 1] = -b / width;
  f.c1[m + 1] = 1.0 / width;
  for (int k = m + 2; k < n + 2; ++k) f.c0[k] = 1.0;
  return f;
}

/// The 1-D factors of the dictionary, shared by offsets and the Gram matrix.
struct Factors {
  // leaf-argument factors: ramps then the constant
  std::vector<Piecewise> leaf;
  // root-argument factors: rising gates, falling gates, upper tail, lower tail, ramps
  std::vector<Piecewise> root;
  int n;

  Factors(int n_, double radius, double width) : n(n_) {
    for (int m = 0; m < n; ++m) leaf.push_back(ramp_piece(n, radius, width, m));
    Piecewise one(n);
    std::fill(one.c0.begin(), one.c0.end(), 1.0);
    leaf.push_back(one);
    for (int j = 0; j < n; ++j) {
      Piecewise g(n);
      const double b = -radius + j * width;
      g.c0[j + 1] = -b / width;
      g.c1[j + 1] = 1.0 / width;
      root.push_back(g);
    }
    for (int j = 0; j < n; ++j) {
      Piecewise g(n);
      const double b = -radius + j * width;
      g.c0[j + 1] = (b + width) / width;
      g.c1[j + 1] = -1.0 / width;
      root.push_back(g);
    }
    Piecewise upper(n), lower(n);
    upper.c0[n + 1] = 1.0;
    lower.c0[0] = 1.0;
    root.push_back(upper);
    root.push_back(lower);
    for (int m = 0; m < n; ++m) root.push_back(ramp_piece(n, radius, width, m));
  }

  int const_leaf() const { return n; }
  int rise(int j) const { return j; }
  int fall(int j) const { return n + j; }
  int upper() const { return 2 * n; }
  int lower() const { return 2 * n + 1; }
  int root_ramp(int m) const { return 2 * n + 2 + m; }

  /// (leaf factor, root factor) for position `local` in a leaf block.
  std::pair<int, int> leaf_basis(std::size_t local) const {
    const std::size_t nn = static_cast<std::size_t>(n) * n, un = n;
    if (local < nn) return {static_cast<int>(local % un), rise(static_cast<int>(local / un))};
    local -= nn;
    if (local < nn) return {static_cast<int>(local % un), fall(static_cast<int>(local / un))};
    local -= nn;
    if (local < un) return {static_cast<int>(local), upper()};
    local -= un;
    if (local < un) return {static_cast<int>(local), lower()};
    local -= un;
    return {const_leaf(), root_ramp(static_cast<int>(local))};
  }
};

}  // namespace

double ramp_mean(double b, double delta) {
  return ((norm_pdf(b) - norm_pdf(b + delta)) - b * (norm_cdf(b + delta) - norm_cdf(b))) / delta +
         (1.0 - norm_cdf(b + delta));
}

// ---------------------------------------------------------------- spec

DictionarySpec::DictionarySpec(int d, double radius, double width) : d_(d), radius_(radius), width_(width) {
  if (d < 2) throw InputError("dictionary needs d >= 2");
  if (!(radius > 0) || !(width > 0) || !std::isfinite(radius) || !std::isfinite(width))
    throw InputError("R and delta must be positive and finite");
  const double ratio = radius / width;
  const double r = std::round(ratio);
  if (r < 1 || std::abs(ratio - r) > 1e-9 * r) throw InputError("R must be a positive integer multiple of delta");
  n_ = 2 * static_cast<int>(r);
  const std::size_t n = static_cast<std::size_t>(n_), leaves = static_cast<std::size_t>(d - 1);
  p_ = n + 2 * leaves * n * n + 3 * leaves * n;

  const Factors f(n_, radius_, width_);
  const IntervalMoments mom(n_, radius_, width_);
  std::vector<double> leaf_mean(f.leaf.size()), root_mean(f.root.size());
  for (std::size_t k = 0; k < f.leaf.size(); ++k) leaf_mean[k] = mom.mean(f.leaf[k]);
  for (std::size_t k = 0; k < f.root.size(); ++k) root_mean[k] = mom.mean(f.root[k]);

  offsets_.resize(static_cast<Eigen::Index>(p_));
  for (int m = 0; m < n_; ++m) offsets_[m] = leaf_mean[m];
  for (int leaf = 1; leaf < d_; ++leaf) {
    for (std::size_t local = 0; local < leaf_block_size(); ++local) {
      auto [a, b] = f.leaf_basis(local);
      offsets_[static_cast<Eigen::Index>(leaf_global(leaf, local))] = leaf_mean[a] * root_mean[b];
    }
  }
}

Cell DictionarySpec::locate(double x) const {
  if (x < -radius_) return {-1, 0.0};
  if (x >= radius_) return {n_, 0.0};
  const double t = (x + radius_) / width_;
  int k = static_cast<int>(std::floor(t));
  if (k >= n_) k = n_ - 1;
  if (k < 0) k = 0;
  double frac = t - k;
  if (frac < 0) frac = 0;
  if (frac > 1) frac = 1;
  return {k, frac};
}

std::size_t DictionarySpec::class_start(BasisClass c) const {
  const std::size_t n = static_cast<std::size_t>(n_), leaves = static_cast<std::size_t>(d_ - 1);
  switch (c) {
    case BasisClass::M0: return 0;
    case BasisClass::M1: return n;
    case BasisClass::M2: return n + leaves * n * n;
    case BasisClass::M3: return n + 2 * leaves * n * n;
    case BasisClass::M4: return n + 2 * leaves * n * n + leaves * n;
    case BasisClass::M5: return n + 2 * leaves * n * n + 2 * leaves * n;
  }
  return p_;
}

BasisId DictionarySpec::basis(std::size_t k) const {
  if (k >= p_) throw InputError("basis index out of range");
  const std::size_t n = static_cast<std::size_t>(n_);
  BasisId id;
  if (k < class_start(BasisClass::M1)) {
    id.cls = BasisClass::M0;
    id.b = static_cast<int>(k);
    return id;
  }
  for (BasisClass c : {BasisClass::M1, BasisClass::M2}) {
    const std::size_t s = class_start(c), e = s + static_cast<std::size_t>(d_ - 1) * n * n;
    if (k < e) {
      const std::size_t r = k - s;
      id.cls = c;
      id.leaf = static_cast<int>(r / (n * n)) + 1;
      id.b_prime = static_cast<int>((r / n) % n);
      id.b = static_cast<int>(r % n);
      return id;
    }
  }
  for (BasisClass c : {BasisClass::M3, BasisClass::M4, BasisClass::M5}) {
    const std::size_t s = class_start(c), e = s + static_cast<std::size_t>(d_ - 1) * n;
    if (k < e) {
      id.cls = c;
      id.leaf = static_cast<int>((k - s) / n) + 1;
      id.b = static_cast<int>((k - s) % n);
      return id;
    }
  }
  return id;
}

std::size_t DictionarySpec::index(const BasisId& id) const {
  const std::size_t n = static_cast<std::size_t>(n_);
  auto in_range = [&](int v) { return v >= 0 && v < n_; };
  if (!in_range(id.b)) throw InputError("breakpoint index out of range");
  if (id.cls == BasisClass::M0) return static_cast<std::size_t>(id.b);
  if (id.leaf < 1 || id.leaf >= d_) throw InputError("leaf coordinate out of range");
  const std::size_t leaf = static_cast<std::size_t>(id.leaf - 1);
  if (id.cls == BasisClass::M1 || id.cls == BasisClass::M2) {
    if (!in_range(id.b_prime)) throw InputError("breakpoint index out of range");
    return class_start(id.cls) + leaf * n * n + static_cast<std::size_t>(id.b_prime) * n + static_cast<std::size_t>(id.b);
  }
  return class_start(id.cls) + leaf * n + static_cast<std::size_t>(id.b);
}

std::size_t DictionarySpec::leaf_global(int leaf, std::size_t local) const {
  const std::size_t n = static_cast<std::size_t>(n_), nn = n * n, l = static_cast<std::size_t>(leaf - 1);
  if (local < nn) return class_start(BasisClass::M1) + l * nn + local;
  local -= nn;
  if (local < nn) return class_start(BasisClass::M2) + l * nn + local;
  local -= nn;
  if (local < n) return class_start(BasisClass::M3) + l * n + local;
  local -= n;
  if (local < n) return class_start(BasisClass::M4) + l * n + local;
  local -= n;
  return class_start(BasisClass::M5) + l * n + local;
}

Matrix DictionarySpec::gather_leaves(const Vector& lambda) const {
  const std::size_t n = static_cast<std::size_t>(n_), nn = n * n;
  Matrix out(static_cast<Eigen::Index>(leaf_block_size()), d_ - 1);
  for (int leaf = 1; leaf < d_; ++leaf) {
    const std::size_t l = static_cast<std::size_t>(leaf - 1);
    auto col = out.col(leaf - 1);
    Eigen::Index pos = 0;
    auto copy = [&](BasisClass c, std::size_t len) {
      col.segment(pos, static_cast<Eigen::Index>(len)) =
          lambda.segment(static_cast<Eigen::Index>(class_start(c) + l * len), static_cast<Eigen::Index>(len));
      pos += static_cast<Eigen::Index>(len);
    };
    copy(BasisClass::M1, nn);
    copy(BasisClass::M2, nn);
    copy(BasisClass::M3, n);
    copy(BasisClass::M4, n);
    copy(BasisClass::M5, n);
  }
  return out;
}

void DictionarySpec::scatter_leaves(const Matrix& cols, Vector& lambda) const {
  const std::size_t n = static_cast<std::size_t>(n_), nn = n * n;
  for (int leaf = 1; leaf < d_; ++leaf) {
    const std::size_t l = static_cast<std::size_t>(leaf - 1);
    auto col = cols.col(leaf - 1);
    Eigen::Index pos = 0;
    auto copy = [&](BasisClass c, std::size_t len) {
      lambda.segment(static_cast<Eigen::Index>(class_start(c) + l * len), static_cast<Eigen::Index>(len)) =
          col.segment(pos, static_cast<Eigen::Index>(len));
      pos += static_cast<Eigen::Index>(len);
    };
    copy(BasisClass::M1, nn);
    copy(BasisClass::M2, nn);
    copy(BasisClass::M3, n);
    copy(BasisClass::M4, n);
    copy(BasisClass::M5, n);
  }
}

nlohmann::json DictionarySpec::to_json() const {
  return {{"d", d_}, {"R", radius_}, {"delta", width_}, {"ordering_version", kOrderingVersion}};
}

DictionarySpec build_dictionary(int d, double radius, double width) { return DictionarySpec(d, radius, width); }

// ------------------------------------------------------------ evaluation

namespace {

struct RawParts {
  int coordinate;
  double value;
  double diag;
  double root;
};

RawParts raw_basis(const DictionarySpec& spec, const BasisId& id, const Vector& x) {
  if (x.size() != spec.dimension()) throw InputError("point length does not match dictionary dimension");
  const double w = spec.width();
  const double x1 = x[0];
  const Cell c1 = spec.locate(x1);
  if (id.cls == BasisClass::M0) {
    const double b = spec.breakpoint(id.b);
    return {0, ramp((x1 - b) / w), c1.index == id.b ? 1.0 / w : 0.0, 0.0};
  }
  if (id.leaf < 1 || id.leaf >= spec.dimension()) throw InputError("leaf coordinate out of range");
  const double xi = x[id.leaf];
  const double b = spec.breakpoint(id.b);
  if (id.cls == BasisClass::M5) return {id.leaf, ramp((x1 - b) / w), 0.0, c1.index == id.b ? 1.0 / w : 0.0};

  const double f = ramp((xi - b) / w);
  const double fd = spec.locate(xi).index == id.b ? 1.0 / w : 0.0;
  double g = 0, gd = 0;
  switch (id.cls) {
    case BasisClass::M1:
      if (c1.index == id.b_prime) {
        g = c1.frac;
        gd = 1.0 / w;
      }
      break;
    case BasisClass::M2:
      if (c1.index == id.b_prime) {
        g = 1.0 - c1.frac;
        gd = -1.0 / w;
      }
      break;
    case BasisClass::M3: g = c1.index == spec.cells() ? 1.0 : 0.0; break;
    case BasisClass::M4: g = c1.index == -1 ? 1.0 : 0.0; break;
    default: break;
  }
  return {id.leaf, f * g, fd * g, f * gd};
}

}  // namespace

Contribution basis_eval(const DictionarySpec& spec, const BasisId& id, const Vector& x) {
  const RawParts r = raw_basis(spec, id, x);
  return {r.coordinate, r.value - spec.offset(spec.index(id))};
}

BasisPartials basis_partials(const DictionarySpec& spec, const BasisId& id, const Vector& x) {
  const RawParts r = raw_basis(spec, id, x);
  return {r.diag, r.root};
}

// ------------------------------------------------------------------ Gram

GramMatrix::GramMatrix(const DictionarySpec& spec, Matrix root_block, Matrix leaf_block, double inverse_norm)
    : spec_(spec), p_(spec.size()), d_(spec.dimension()), root_(std::move(root_block)), leaf_(std::move(leaf_block)) {
  if (root_.rows() != spec.cells() || leaf_.rows() != static_cast<Eigen::Index>(spec.leaf_block_size()))
    throw InputError("Gram block shapes do not match the dictionary");
  root_llt_.compute(root_);
  leaf_llt_.compute(leaf_);
  if (root_llt_.info() != Eigen::Success || leaf_llt_.info() != Eigen::Success)
    throw NumericalError("dictionary degenerate: Gram matrix is not positive definite");
  inverse_norm_ = inverse_norm > 0 ? inverse_norm
                                   : std::max(inverse_norm_estimate(root_llt_), inverse_norm_estimate(leaf_llt_));
}

double GramMatrix::entry(std::size_t k, std::size_t l) const {
  const int ck = spec_.coordinate(k), cl = spec_.coordinate(l);
  if (ck != cl) return 0.0;
  if (ck == 0) return root_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
  // Invert the leaf_global mapping through the basis ids.
  auto local = [&](std::size_t g) {
    const BasisId id = spec_.basis(g);
    const std::size_t n = static_cast<std::size_t>(spec_.cells()), nn = n * n;
    switch (id.cls) {
      case BasisClass::M1: return static_cast<std::size_t>(id.b_prime) * n + id.b;
      case BasisClass::M2: return nn + static_cast<std::size_t>(id.b_prime) * n + id.b;
      case BasisClass::M3: return 2 * nn + id.b;
      case BasisClass::M4: return 2 * nn + n + id.b;
      default: return 2 * nn + 2 * n + id.b;
    }
  };
  return leaf_(static_cast<Eigen::Index>(local(k)), static_cast<Eigen::Index>(local(l)));
}

Vector GramMatrix::apply(const Vector& lambda) const {
  if (lambda.size() != static_cast<Eigen::Index>(p_)) throw InputError("coefficient length does not match Gram size");
  Vector out(lambda.size());
  const int n = spec_.cells();
  out.head(n) = root_ * lambda.head(n);
  Matrix leaves = leaf_ * spec_.gather_leaves(lambda);
  spec_.scatter_leaves(leaves, out);
  return out;
}

Vector GramMatrix::solve(const Vector& g) const {
  if (g.size() != static_cast<Eigen::Index>(p_)) throw InputError("vector length does not match Gram size");
  Vector out(g.size());
  const int n = spec_.cells();
  out.head(n) = root_llt_.solve(g.head(n));
  Matrix leaves = leaf_llt_.solve(spec_.gather_leaves(g));
  spec_.scatter_leaves(leaves, out);
  return out;
}

Matrix GramMatrix::dense() const {
  Matrix q = Matrix::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
  const int n = spec_.cells();
  q.topLeftCorner(n, n) = root_;
  const std::size_t qs = spec_.leaf_block_size();
  for (int leaf = 1; leaf < d_; ++leaf)
    for (std::size_t a = 0; a < qs; ++a)
      for (std::size_t b = 0; b < qs; ++b)
        q(static_cast<Eigen::Index>(spec_.leaf_global(leaf, a)), static_cast<Eigen::Index>(spec_.leaf_global(leaf, b))) =
            leaf_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  return q;
}

double inverse_norm_estimate(const Eigen::LLT<Matrix>& factor, int max_iter, double rel_tol) {
  // Block inverse iteration with Rayleigh-Ritz; a single vector stalls when the top eigenvalues cluster.
  const Eigen::Index n = factor.matrixLLT().rows();
  const Eigen::Index k = std::min<Eigen::Index>(n, 8);
  Matrix x(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) x(i, j) = 1.0 + 0.01 * static_cast<double>((i + 3 * j) % 7) + (i == j);
  x = Eigen::HouseholderQR<Matrix>(x).householderQ() * Matrix::Identity(n, k);
  double est = 0;
  for (int it = 0; it < max_iter; ++it) {
    Matrix y = factor.solve(x);
    if (!y.allFinite()) throw NumericalError("inverse power iteration failed");
    Eigen::SelfAdjointEigenSolver<Matrix> ritz(x.transpose() * y);
    est = ritz.eigenvalues()[k - 1];
    const Vector s = ritz.eigenvectors().col(k - 1);
    const double residual = (y * s - est * (x * s)).norm();
    if (residual <= rel_tol * est) break;
    x = Eigen::HouseholderQR<Matrix>(y).householderQ() * Matrix::Identity(n, k);
  }
  return est;
}

std::string GramOptions::default_cache_dir() {
  const char* env = std::getenv("SSVI_CACHE_DIR");
  return env ? std::string(env) : std::string();
}

GramMatrix gram_matrix(const DictionarySpec& spec, const GramOptions& options) {
  std::string cache;
  if (!options.cache_dir.empty()) {
    cache = gram_cache_path(options.cache_dir, spec);
    Matrix root, leaf;
    double inv = -1;
    if (read_gram_cache(cache, spec, root, leaf, inv)) return GramMatrix(spec, std::move(root), std::move(leaf), inv);
  }

  const int n = spec.cells();
  const Factors f(n, spec.radius(), spec.width());
  const IntervalMoments mom(n, spec.radius(), spec.width());
  const std::size_t nl = f.leaf.size(), nr = f.root.size();
  Matrix leaf_inner(nl, nl), root_inner(nr, nr);
  Vector leaf_mean(nl), root_mean(nr);
  for (std::size_t a = 0; a < nl; ++a) {
    leaf_mean[a] = mom.mean(f.leaf[a]);
    for (std::size_t b = 0; b <= a; ++b) leaf_inner(a, b) = leaf_inner(b, a) = mom.inner(f.leaf[a], f.leaf[b]);
  }
  for (std::size_t a = 0; a < nr; ++a) {
    root_mean[a] = mom.mean(f.root[a]);
    for (std::size_t b = 0; b <= a; ++b) root_inner(a, b) = root_inner(b, a) = mom.inner(f.root[a], f.root[b]);
  }

  Matrix root(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) root(a, b) = leaf_inner(a, b) - leaf_mean[a] * leaf_mean[b];

  const std::size_t qs = spec.leaf_block_size();
  std::vector<std::pair<int, int>> parts(qs);
  for (std::size_t l = 0; l < qs; ++l) parts[l] = f.leaf_basis(l);
  Matrix leaf(static_cast<Eigen::Index>(qs), static_cast<Eigen::Index>(qs));
  parallel_for(qs, [&](std::size_t a) {
    const auto [fa, ga] = parts[a];
    const double ca = leaf_mean[fa] * root_mean[ga];
    for (std::size_t b = 0; b < qs; ++b) {
      const auto [fb, gb] = parts[b];
      leaf(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          leaf_inner(fa, fb) * root_inner(ga, gb) - ca * leaf_mean[fb] * root_mean[gb];
    }
  });

  GramMatrix q(spec, std::move(root), std::move(leaf));
  if (!cache.empty()) {
    try {
      write_gram_cache(cache, q, spec);
    } catch (const std::exception&) {
      // cache is best effort
    }
  }
  return q;
}

// ----------------------------------------------------------------- cache

namespace {

constexpr char kMagic[8] = {'S', 'S', 'V', 'I', 'G', 'R', 'A', 'M'};
constexpr std::uint32_t kCacheVersion = 1;

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
bool get_le(std::istream& is, T& v) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

}  // namespace

std::string gram_cache_path(const std::string& dir, const DictionarySpec& spec) {
  return dir + "/gram_d" + std::to_string(spec.dimension()) + "_R" + format_real(spec.radius()) + "_delta" +
         format_real(spec.width()) + "_v" + std::to_string(kOrderingVersion) + ".bin";
}

void write_gram_cache(const std::string& path, const GramMatrix& q, const DictionarySpec& spec) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw NumericalError("cannot write Gram cache " + path);
    os.write(kMagic, 8);
    put_le<std::uint32_t>(os, kCacheVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(q.size()));
    const Matrix dense = q.dense();
    for (Eigen::Index r = 0; r < dense.rows(); ++r)
      for (Eigen::Index c = 0; c < dense.cols(); ++c) put_le<double>(os, dense(r, c));
  }
  nlohmann::json meta = spec.to_json();
  meta["inverse_norm"] = q.inverse_norm();
  std::ofstream(path + ".json") << meta.dump(2) << "\n";
  std::filesystem::rename(tmp, path);
}

bool read_gram_cache(const std::string& path, const DictionarySpec& spec, Matrix& root, Matrix& leaf, double& inv_norm) {
  std::ifstream meta_in(path + ".json");
  std::ifstream is(path, std::ios::binary);
  if (!is || !meta_in) return false;
  nlohmann::json meta;
  try {
    meta_in >> meta;
    nlohmann::json want = spec.to_json();
    for (const char* k : {"d", "R", "delta", "ordering_version"})
      if (meta.at(k) != want.at(k)) return false;
    inv_norm = meta.at("inverse_norm").get<double>();
  } catch (const std::exception&) {
    return false;
  }
  char magic[8];
  std::uint32_t version = 0, p = 0;
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) return false;
  if (!get_le(is, version) || version != kCacheVersion) return false;
  if (!get_le(is, p) || p != spec.size()) return false;
  Matrix dense(p, p);
  for (std::uint32_t r = 0; r < p; ++r)
    for (std::uint32_t c = 0; c < p; ++c)
      if (!get_le(is, dense(r, c))) return false;
  const int n = spec.cells();
  root = dense.topLeftCorner(n, n);
  const std::size_t qs = spec.leaf_block_size();
  leaf.resize(static_cast<Eigen::Index>(qs), static_cast<Eigen::Index>(qs));
  for (std::size_t a = 0; a < qs; ++a)
    for (std::size_t b = 0; b < qs; ++b)
      leaf(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          dense(static_cast<Eigen::Index>(spec.leaf_global(1, a)), static_cast<Eigen::Index>(spec.leaf_global(1, b)));
  return true;
}

}  // namespace ssvi
