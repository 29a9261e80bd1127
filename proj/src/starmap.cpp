#include "ssvi/starmap.hpp"

#include <cmath>
#include <limits>

#include "json_util.hpp"
#include "ssvi/error.hpp"
#include "ssvi/numeric.hpp"
#include "ssvi/version.hpp"

namespace ssvi {

Vector spike_vector(int d, const RegularityConstants& c) {
  if (!c.big_l_root || !c.big_l) throw InputError("spike needs L_V and L'_V");
  if (!(*c.big_l_root > 0) || !(*c.big_l > 0)) throw InputError("spike needs positive L_V and L'_V");
  Vector a = Vector::Constant(d, 1.0 / std::sqrt(*c.big_l));
  a[0] = 1.0 / std::sqrt(*c.big_l_root);
  return a;
}

StarMapParams spike_params(const DictionarySpec& spec, const Vector& alpha, const Vector& v) {
  if (alpha.size() != spec.dimension()) throw InputError("alpha length does not match dictionary dimension");
  StarMapParams p;
  p.lambda = Vector::Zero(static_cast<Eigen::Index>(spec.size()));
  p.v = v.size() ? v : Vector::Zero(spec.dimension());
  if (p.v.size() != spec.dimension()) throw InputError("v length does not match dictionary dimension");
  p.alpha = alpha;
  return p;
}

StarMapParams identity_params(const DictionarySpec& spec) {
  return spike_params(spec, Vector::Ones(spec.dimension()));
}

bool admissible(const StarMapParams& p, const DictionarySpec& spec, double tol) {
  if (p.lambda.size() != static_cast<Eigen::Index>(spec.size()) || p.v.size() != spec.dimension() ||
      p.alpha.size() != spec.dimension())
    return false;
  if (!(p.alpha.array() > 0).all() || !p.lambda.allFinite() || !p.v.allFinite()) return false;
  const auto m5 = static_cast<Eigen::Index>(spec.class_start(BasisClass::M5));
  return p.lambda.head(m5).minCoeff() >= -tol;
}

Vector StarSeparableMap::apply(const Vector& x) const {
  const int d = dimension();
  if (x.size() != d) throw InputError("point length does not match map dimension");
  Vector z(d);
  z[0] = root(x[0]);
  for (int i = 1; i < d; ++i) z[i] = leaf(i, x[i], x[0]);
  return z;
}

Matrix JacobianSketch::dense() const {
  const Eigen::Index d = diag.size();
  Matrix m = Matrix::Zero(d, d);
  m.diagonal() = diag;
  if (d > 1) m.col(0).tail(d - 1) = root_col;
  return m;
}

// ------------------------------------------------------------- compiled map

StarMap::StarMap(const DictionarySpec& spec, const StarMapParams& params)
    : spec_(spec), params_(params), d_(spec.dimension()), n_(static_cast<std::size_t>(spec.cells())),
      inv_width_(1.0 / spec.width()) {
  if (params.lambda.size() != static_cast<Eigen::Index>(spec.size()) || params.v.size() != d_ ||
      params.alpha.size() != d_)
    throw InputError("params do not match the dictionary");
  if (!(params.alpha.array() > 0).all()) throw InputError("spike entries must be positive");

  shift_ = params.v;
  for (std::size_t k = 0; k < spec.size(); ++k)
    shift_[spec.coordinate(k)] -= params.lambda[static_cast<Eigen::Index>(k)] * spec.offset(k);

  const std::size_t families = 1 + static_cast<std::size_t>(d_ - 1) * (2 * n_ + 3);
  coef_.assign(families * n_, 0.0);
  prefix_.assign(families * (n_ + 1), 0.0);
  auto load = [&](std::size_t family, std::size_t start) {
    double acc = 0;
    prefix_[family * (n_ + 1)] = 0;
    for (std::size_t m = 0; m < n_; ++m) {
      const double c = params.lambda[static_cast<Eigen::Index>(start + m)];
      coef_[family * n_ + m] = c;
      acc += c;
      prefix_[family * (n_ + 1) + m + 1] = acc;
    }
  };
  load(0, 0);
  const std::size_t nn = n_ * n_;
  for (int i = 1; i < d_; ++i) {
    const std::size_t l = static_cast<std::size_t>(i - 1);
    for (std::size_t j = 0; j < n_; ++j) {
      load(leaf_family(i, static_cast<int>(j)), spec.class_start(BasisClass::M1) + l * nn + j * n_);
      load(leaf_family(i, static_cast<int>(n_ + j)), spec.class_start(BasisClass::M2) + l * nn + j * n_);
    }
    load(leaf_family(i, static_cast<int>(2 * n_)), spec.class_start(BasisClass::M3) + l * n_);
    load(leaf_family(i, static_cast<int>(2 * n_ + 1)), spec.class_start(BasisClass::M4) + l * n_);
    load(leaf_family(i, static_cast<int>(2 * n_ + 2)), spec.class_start(BasisClass::M5) + l * n_);
  }
}

double StarMap::ramp_sum(std::size_t family, Cell c) const {
  if (c.index < 0) return 0.0;
  const double* pre = &prefix_[family * (n_ + 1)];
  if (c.index >= static_cast<int>(n_)) return pre[n_];
  return pre[c.index] + coef(family, c.index) * c.frac;
}

void StarMap::eval(const double* x, double* z, double* diag, double* root_col) const {
  const int n = static_cast<int>(n_);
  const Cell c0 = spec_.locate(x[0]);
  const bool inside = c0.index >= 0 && c0.index < n;
  z[0] = params_.alpha[0] * x[0] + shift_[0] + ramp_sum(0, c0);
  if (diag) diag[0] = params_.alpha[0] + (inside ? coef(0, c0.index) * inv_width_ : 0.0);
  for (int i = 1; i < d_; ++i) {
    const Cell ci = spec_.locate(x[i]);
    const bool in_i = ci.index >= 0 && ci.index < n;
    double raw, slope = 0, cross = 0;
    if (inside) {
      const std::size_t f1 = leaf_family(i, c0.index), f2 = leaf_family(i, n + c0.index), f5 = leaf_family(i, 2 * n + 2);
      const double s1 = ramp_sum(f1, ci), s2 = ramp_sum(f2, ci);
      const double w = c0.frac;
      raw = w * s1 + (1.0 - w) * s2 + ramp_sum(f5, c0);
      if (in_i) slope = (w * coef(f1, ci.index) + (1.0 - w) * coef(f2, ci.index)) * inv_width_;
      cross = (s1 - s2 + coef(f5, c0.index)) * inv_width_;
    } else {
      const std::size_t tail = leaf_family(i, c0.index < 0 ? 2 * n + 1 : 2 * n);
      raw = ramp_sum(tail, ci) + ramp_sum(leaf_family(i, 2 * n + 2), c0);
      if (in_i) slope = coef(tail, ci.index) * inv_width_;
    }
    z[i] = params_.alpha[i] * x[i] + shift_[i] + raw;
    if (diag) diag[i] = params_.alpha[i] + slope;
    if (root_col) root_col[i - 1] = cross;
  }
}

double StarMap::root(double x0) const {
  return params_.alpha[0] * x0 + shift_[0] + ramp_sum(0, spec_.locate(x0));
}

double StarMap::root_slope(double x0) const {
  const Cell c = spec_.locate(x0);
  const bool inside = c.index >= 0 && c.index < static_cast<int>(n_);
  return params_.alpha[0] + (inside ? coef(0, c.index) * inv_width_ : 0.0);
}

double StarMap::leaf(int i, double xi, double x0) const {
  if (i < 1 || i >= d_) throw InputError("leaf index out of range");
  const int n = static_cast<int>(n_);
  const Cell c0 = spec_.locate(x0);
  const Cell ci = spec_.locate(xi);
  double raw;
  if (c0.index >= 0 && c0.index < n) {
    const double w = c0.frac;
    raw = w * ramp_sum(leaf_family(i, c0.index), ci) + (1.0 - w) * ramp_sum(leaf_family(i, n + c0.index), ci);
  } else {
    raw = ramp_sum(leaf_family(i, c0.index < 0 ? 2 * n + 1 : 2 * n), ci);
  }
  raw += ramp_sum(leaf_family(i, 2 * n + 2), c0);
  return params_.alpha[i] * xi + shift_[i] + raw;
}

double StarMap::leaf_slope(int i, double xi, double x0) const {
  if (i < 1 || i >= d_) throw InputError("leaf index out of range");
  const int n = static_cast<int>(n_);
  const Cell c0 = spec_.locate(x0), ci = spec_.locate(xi);
  double slope = params_.alpha[i];
  if (ci.index < 0 || ci.index >= n) return slope;
  if (c0.index >= 0 && c0.index < n) {
    const double w = c0.frac;
    slope += (w * coef(leaf_family(i, c0.index), ci.index) + (1.0 - w) * coef(leaf_family(i, n + c0.index), ci.index)) *
             inv_width_;
  } else {
    slope += coef(leaf_family(i, c0.index < 0 ? 2 * n + 1 : 2 * n), ci.index) * inv_width_;
  }
  return slope;
}

double StarMap::leaf_cross_slope(int i, double xi, double x0) const {
  if (i < 1 || i >= d_) throw InputError("leaf index out of range");
  const int n = static_cast<int>(n_);
  const Cell c0 = spec_.locate(x0), ci = spec_.locate(xi);
  if (c0.index < 0 || c0.index >= n) return 0.0;
  return (ramp_sum(leaf_family(i, c0.index), ci) - ramp_sum(leaf_family(i, n + c0.index), ci) +
          coef(leaf_family(i, 2 * n + 2), c0.index)) *
         inv_width_;
}

JacobianSketch StarMap::jacobian(const Vector& x) const {
  if (x.size() != d_) throw InputError("point length does not match map dimension");
  JacobianSketch j;
  j.diag.resize(d_);
  j.root_col.resize(d_ - 1);
  Vector z(d_);
  eval(x.data(), z.data(), j.diag.data(), j.root_col.data());
  return j;
}

namespace {

template <class F>
double invert_increasing(F f, double target) {
  if (!std::isfinite(target)) throw InputError("cannot invert a non-finite value");
  double lo = -1, hi = 1;
  for (int k = 0; f(lo) > target; ++k) {
    hi = lo;
    lo *= 2;
    if (k > 2000) throw NumericalError("inverse bracket failed");
  }
  for (int k = 0; f(hi) < target; ++k) {
    lo = hi;
    hi *= 2;
    if (k > 2000) throw NumericalError("inverse bracket failed");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double StarMap::root_inverse(double z0) const {
  return invert_increasing([&](double x) { return root(x); }, z0);
}

double StarMap::leaf_inverse(int i, double zi, double x0) const {
  return invert_increasing([&](double x) { return leaf(i, x, x0); }, zi);
}

Vector map_eval(const StarMapParams& params, const DictionarySpec& spec, const Vector& x) {
  return StarMap(spec, params).apply(x);
}

JacobianSketch jacobian(const StarMapParams& params, const DictionarySpec& spec, const Vector& x) {
  return StarMap(spec, params).jacobian(x);
}

double log_det(const JacobianSketch& jac) {
  double s = 0;
  for (Eigen::Index i = 0; i < jac.diag.size(); ++i) {
    if (!(jac.diag[i] > 0)) throw NumericalError("cone violation: nonpositive Jacobian diagonal");
    s += std::log(jac.diag[i]);
  }
  return s;
}

double inverse_trace_weight(const JacobianSketch& jac, int coordinate, const BasisPartials& partials) {
  if (coordinate < 0 || coordinate >= jac.diag.size()) throw InputError("coordinate out of range");
  const double di = jac.diag[coordinate];
  if (!(di > 0)) throw NumericalError("cone violation: nonpositive Jacobian diagonal");
  // (DT^{-1})_{0,i} = 0 for i >= 1, so the root-slot partial never meets a nonzero entry.
  return partials.diag / di;
}

double root_marginal_logdensity(const StarMap& map, double z0) {
  const double x0 = map.root_inverse(z0);
  return norm_logpdf(x0) - std::log(map.root_slope(x0));
}

double leaf_conditional_logdensity(const StarMap& map, int i, double zi, double z0) {
  const double x0 = map.root_inverse(z0);
  const double xi = map.leaf_inverse(i, zi, x0);
  return norm_logpdf(xi) - std::log(map.leaf_slope(i, xi, x0));
}

// ---------------------------------------------------------------- oracle

StarMapParams build_oracle_approximator(const StarSeparableMap& t_star, const DictionarySpec& spec, const Vector& alpha) {
  const int d = spec.dimension();
  if (t_star.dimension() != d) throw InputError("map dimension does not match dictionary");
  if (alpha.size() != d || !(alpha.array() > 0).all()) throw InputError("alpha must be positive with length d");
  const int n = spec.cells();
  const std::size_t un = static_cast<std::size_t>(n);
  StarMapParams p = spike_params(spec, alpha);

  auto nonneg = [](double inc, double scale, const char* what) {
    if (inc >= 0) return inc;
    if (inc > -1e-12 * (1.0 + scale)) return 0.0;
    throw InputError(std::string("oracle map is not increasing: negative ") + what + " increment");
  };

  std::vector<double> r(un + 1);
  for (int m = 0; m <= n; ++m) r[m] = t_star.root(spec.breakpoint(m)) - alpha[0] * spec.breakpoint(m);
  for (int m = 0; m < n; ++m) p.lambda[m] = nonneg(r[m + 1] - r[m], std::abs(r[m]), "root");
  p.v[0] = r[0];

  // grid(m, j) = T_i(b_m; b_j) - alpha_i b_m
  std::vector<double> grid((un + 1) * (un + 1));
  for (int i = 1; i < d; ++i) {
    for (int j = 0; j <= n; ++j)
      for (int m = 0; m <= n; ++m)
        grid[static_cast<std::size_t>(m) * (un + 1) + j] =
            t_star.leaf(i, spec.breakpoint(m), spec.breakpoint(j)) - alpha[i] * spec.breakpoint(m);
    auto g = [&](int m, int j) { return grid[static_cast<std::size_t>(m) * (un + 1) + j]; };
    auto inc = [&](int m, int j) { return nonneg(g(m + 1, j) - g(m, j), std::abs(g(m, j)), "leaf"); };
    for (int m = 0; m < n; ++m) {
      for (int j = 0; j < n; ++j) {
        p.lambda[static_cast<Eigen::Index>(spec.index({BasisClass::M1, i, m, j}))] = inc(m, j + 1);
        p.lambda[static_cast<Eigen::Index>(spec.index({BasisClass::M2, i, m, j}))] = inc(m, j);
      }
      p.lambda[static_cast<Eigen::Index>(spec.index({BasisClass::M3, i, m, 0}))] = inc(m, n);
      p.lambda[static_cast<Eigen::Index>(spec.index({BasisClass::M4, i, m, 0}))] = inc(m, 0);
    }
    for (int j = 0; j < n; ++j)
      p.lambda[static_cast<Eigen::Index>(spec.index({BasisClass::M5, i, j, 0}))] = g(0, j + 1) - g(0, j);
    p.v[i] = g(0, 0);
  }
  // Centered bases: add back the offsets so the represented function is unchanged.
  for (std::size_t k = 0; k < spec.size(); ++k)
    p.v[spec.coordinate(k)] += p.lambda[static_cast<Eigen::Index>(k)] * spec.offset(k);
  return p;
}

// ------------------------------------------------------------------- JSON

nlohmann::json params_to_json(const StarMapParams& params, const DictionarySpec& spec) {
  return {{"tool_version", kToolVersion},
          {"dict", spec.to_json()},
          {"alpha", detail::from_vector(params.alpha)},
          {"lambda", detail::from_vector(params.lambda)},
          {"v", detail::from_vector(params.v)}};
}

SavedMap params_from_json(const nlohmann::json& j) {
  const std::string path = "params";
  detail::require_keys(j, {"tool_version", "dict", "alpha", "lambda", "v"}, path);
  const auto& dict = detail::require(j, "dict", path);
  detail::require_keys(dict, {"d", "R", "delta", "ordering_version"}, "params.dict");
  if (detail::get_int(dict, "ordering_version", "params.dict") != kOrderingVersion)
    throw ConfigError("params.dict.ordering_version", "saved with a different basis ordering");
  try {
    SavedMap out{DictionarySpec(static_cast<int>(detail::get_int(dict, "d", "params.dict")),
                                detail::get_double(dict, "R", "params.dict"), detail::get_double(dict, "delta", "params.dict")),
                 {}};
    out.params.alpha = detail::to_vector(detail::require(j, "alpha", path), "params.alpha");
    out.params.lambda = detail::to_vector(detail::require(j, "lambda", path), "params.lambda");
    out.params.v = detail::to_vector(detail::require(j, "v", path), "params.v");
    if (!admissible(out.params, out.spec, 0.0)) throw ConfigError(path, "parameters are not admissible for the dictionary");
    return out;
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace ssvi
