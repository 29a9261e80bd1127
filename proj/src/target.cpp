#include "ssvi/target.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "json_util.hpp"
#include "ssvi/error.hpp"
#include "ssvi/numeric.hpp"
#include "ssvi/parallel.hpp"

namespace ssvi {

using ConstVecMap = Eigen::Map<const Vector>;

void TargetPotential::check_point(const Vector& z) const {
  if (z.size() != dimension())
    throw InputError("point has length " + std::to_string(z.size()) + ", target dimension is " +
                     std::to_string(dimension()));
}

double TargetPotential::value(const Vector& z) const {
  check_point(z);
  return value_at(z.data());
}

Vector TargetPotential::gradient(const Vector& z) const {
  check_point(z);
  Vector g(dimension());
  gradient_at(z.data(), g.data());
  return g;
}

double TargetPotential::hessian(const Vector& z, int i, int j) const {
  check_point(z);
  const int d = dimension();
  if (i < 0 || j < 0 || i >= d || j >= d)
    throw InputError("hessian index (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
  return hessian_at(z.data(), i, j);
}

double eval_potential(const TargetPotential& t, const Vector& z) { return t.value(z); }
Vector grad_potential(const TargetPotential& t, const Vector& z) { return t.gradient(z); }
double hessian_entry(const TargetPotential& t, const Vector& z, int i, int j) { return t.hessian(z, i, j); }

// ---------------------------------------------------------------- Gaussian

GaussianTarget::GaussianTarget(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  const Eigen::Index d = mean_.size();
  if (d < 1) throw InputError("gaussian target needs dimension >= 1");
  if (cov_.rows() != d || cov_.cols() != d) throw InputError("covariance shape does not match mean");
  const double scale = cov_.cwiseAbs().maxCoeff();
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, scale))
    throw InputError("covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov_, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0)) throw InputError("covariance is not positive definite");
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) throw InputError("covariance is not positive definite");
  precision_ = llt.solve(Matrix::Identity(d, d));
  precision_ = 0.5 * (precision_ + precision_.transpose());
}

// Allocation-free loops: these sit in the Monte Carlo inner loop.
double GaussianTarget::value_at(const double* z) const {
  const Eigen::Index d = mean_.size();
  double s = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double rj = z[j] - mean_[j];
    double row = 0;
    for (Eigen::Index i = 0; i < d; ++i) row += precision_(i, j) * (z[i] - mean_[i]);
    s += rj * row;
  }
  return 0.5 * s;
}

void GaussianTarget::gradient_at(const double* z, double* out) const {
  const Eigen::Index d = mean_.size();
  for (Eigen::Index j = 0; j < d; ++j) {
    double row = 0;
    for (Eigen::Index i = 0; i < d; ++i) row += precision_(i, j) * (z[i] - mean_[i]);
    out[j] = row;
  }
}

namespace {

/// ell * max_i rootcoupling / (ell - max_i leafrowsum), empty when the denominator is not positive.
void set_l_bar(RegularityConstants& c, double max_root_coupling, double max_leaf_rowsum) {
  if (!c.ell) return;
  double denom = *c.ell - max_leaf_rowsum;
  if (denom > 0) {
    c.l_bar = *c.ell * max_root_coupling / denom;
  } else {
    c.warnings.push_back("mixed-derivative bound unavailable: leaf off-diagonal mass exceeds ell");
  }
}

}  // namespace

RegularityConstants GaussianTarget::analytic_constants() const {
  RegularityConstants c;
  const Eigen::Index d = mean_.size();
  c.big_l_root = 2.0 * precision_(0, 0);
  if (d == 1) {
    c.ell_root = precision_(0, 0);
    return c;
  }
  const Matrix leaf = precision_.bottomRightCorner(d - 1, d - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(leaf, Eigen::EigenvaluesOnly);
  c.ell = eig.eigenvalues().minCoeff();
  c.big_l = eig.eigenvalues().maxCoeff();
  const Vector cross = precision_.row(0).tail(d - 1).transpose();
  c.ell_root = precision_(0, 0) - cross.squaredNorm() / *c.ell;

  double row_max = 0;
  for (Eigen::Index i = 0; i < d - 1; ++i) row_max = std::max(row_max, leaf.row(i).cwiseAbs().sum() - std::abs(leaf(i, i)));
  set_l_bar(c, cross.cwiseAbs().maxCoeff(), row_max);
  return c;
}

// --------------------------------------------------------- scalar functions

double LogPartition::value(double t) const {
  switch (family) {
    case LinkFamily::Linear: return 0.5 * t * t;
    case LinkFamily::Logistic: return log1pexp(t);
    case LinkFamily::Poisson: return std::exp(t);
  }
  return 0;
}

double LogPartition::d1(double t) const {
  switch (family) {
    case LinkFamily::Linear: return t;
    case LinkFamily::Logistic: return sigmoid(t);
    case LinkFamily::Poisson: return std::exp(t);
  }
  return 0;
}

double LogPartition::d2(double t) const {
  switch (family) {
    case LinkFamily::Linear: return 1.0;
    case LinkFamily::Logistic: {
      double s = sigmoid(t);
      return s * (1.0 - s);
    }
    case LinkFamily::Poisson: return std::exp(t);
  }
  return 0;
}

std::optional<double> LogPartition::d2_sup() const {
  switch (family) {
    case LinkFamily::Linear: return 1.0;
    case LinkFamily::Logistic: return 0.25;
    case LinkFamily::Poisson: return std::nullopt;
  }
  return std::nullopt;
}

ScalarPotential ScalarPotential::gaussian(double precision, double location) {
  if (!(precision > 0)) throw InputError("gaussian potential precision must be positive");
  ScalarPotential p;
  p.kind = Kind::Gaussian;
  p.precision = precision;
  p.location = location;
  return p;
}

ScalarPotential ScalarPotential::logistic(double scale, double location) {
  if (!(scale > 0)) throw InputError("logistic potential scale must be positive");
  ScalarPotential p;
  p.kind = Kind::Logistic;
  p.scale = scale;
  p.location = location;
  return p;
}

double ScalarPotential::value(double t) const {
  const double u = t - location;
  if (kind == Kind::Gaussian) return 0.5 * precision * u * u;
  const double r = u / scale;
  return r + 2.0 * log1pexp(-r);
}

double ScalarPotential::d1(double t) const {
  const double u = t - location;
  if (kind == Kind::Gaussian) return precision * u;
  return std::tanh(0.5 * u / scale) / scale;
}

double ScalarPotential::d2(double t) const {
  if (kind == Kind::Gaussian) return precision;
  const double r = (t - location) / scale;
  return 2.0 * sigmoid(r) * sigmoid(-r) / (scale * scale);
}

double ScalarPotential::d2_inf() const { return kind == Kind::Gaussian ? precision : 0.0; }
double ScalarPotential::d2_sup() const { return kind == Kind::Gaussian ? precision : 0.5 / (scale * scale); }

void GlmData::validate() const {
  if (design.rows() < 1 || design.cols() < 1) throw InputError("design matrix is empty");
  if (response.size() != design.rows()) throw InputError("response length does not match design rows");
  if (!(dispersion > 0)) throw InputError("dispersion must be positive");
  if (!design.allFinite() || !response.allFinite()) throw InputError("design or response has non-finite entries");
  if (psi2_lower && !(*psi2_lower > 0)) throw InputError("psi2_lower must be positive");
}

namespace {

struct CurvatureRange {
  std::optional<double> lo, hi;
};

CurvatureRange link_curvature(const GlmData& data) {
  CurvatureRange r;
  r.hi = data.link.d2_sup();
  if (data.link.family == LinkFamily::Linear) r.lo = 1.0;
  if (data.psi2_lower) r.lo = data.psi2_lower;
  if (data.link.family == LinkFamily::Poisson) r.hi.reset();
  return r;
}

std::pair<double, double> extreme_eigenvalues(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
  return {eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff()};
}

/// Entrywise bound on |sum_k psi''(eta_k) X_ki X_kj / c|.
Matrix leaf_coupling_bound(const GlmData& data, const Matrix& a, double psi2_hi) {
  if (data.link.family == LinkFamily::Linear) return a.cwiseAbs();
  Matrix ax = data.design.cwiseAbs();
  return psi2_hi * (ax.transpose() * ax) / data.dispersion;
}

}  // namespace

// ----------------------------------------------------------- location GLM

GlmLocationTarget::GlmLocationTarget(GlmData data, ScalarPotential prior, ScalarPotential hyperprior)
    : data_(std::move(data)), prior_(prior), hyper_(hyperprior) {
  data_.validate();
  a_ = data_.design.transpose() * data_.design / data_.dispersion;
  w_ = data_.design.transpose() * data_.response / data_.dispersion;
}

double GlmLocationTarget::value_at(const double* z) const {
  const Eigen::Index d = data_.design.cols();
  const double theta = z[0];
  ConstVecMap beta(z + 1, d);
  const Vector eta = data_.design * beta;
  double s = hyper_.value(theta) - w_.dot(beta);
  double lp = 0;
  for (Eigen::Index k = 0; k < eta.size(); ++k) lp += data_.link.value(eta[k]);
  s += lp / data_.dispersion;
  for (Eigen::Index j = 0; j < d; ++j) s += prior_.value(beta[j] - theta);
  return s;
}

void GlmLocationTarget::gradient_at(const double* z, double* out) const {
  const Eigen::Index d = data_.design.cols();
  const double theta = z[0];
  ConstVecMap beta(z + 1, d);
  Vector eta = data_.design * beta;
  for (Eigen::Index k = 0; k < eta.size(); ++k) eta[k] = data_.link.d1(eta[k]);
  Eigen::Map<Vector> g(out + 1, d);
  g = data_.design.transpose() * eta / data_.dispersion - w_;
  double root = hyper_.d1(theta);
  for (Eigen::Index j = 0; j < d; ++j) {
    double r1 = prior_.d1(beta[j] - theta);
    g[j] += r1;
    root -= r1;
  }
  out[0] = root;
}

double GlmLocationTarget::hessian_at(const double* z, int i, int j) const {
  const Eigen::Index d = data_.design.cols();
  const double theta = z[0];
  if (i == 0 && j == 0) {
    double s = hyper_.d2(theta);
    for (Eigen::Index k = 0; k < d; ++k) s += prior_.d2(z[1 + k] - theta);
    return s;
  }
  if (i == 0 || j == 0) return -prior_.d2(z[std::max(i, j)] - theta);
  ConstVecMap beta(z + 1, d);
  const Vector eta = data_.design * beta;
  double s = 0;
  for (Eigen::Index k = 0; k < eta.size(); ++k)
    s += data_.link.d2(eta[k]) * data_.design(k, i - 1) * data_.design(k, j - 1);
  s /= data_.dispersion;
  if (i == j) s += prior_.d2(z[i] - theta);
  return s;
}

RegularityConstants GlmLocationTarget::analytic_constants() const {
  RegularityConstants c;
  const double d = static_cast<double>(data_.design.cols());
  const auto [a_lo, a_hi] = extreme_eigenvalues(a_);
  const CurvatureRange psi2 = link_curvature(data_);
  const double rho_sup = prior_.d2_sup();
  const double g_inf = hyper_.d2_inf(), g_sup = hyper_.d2_sup();

  c.big_l_root = 2.0 * (d * rho_sup + g_sup);
  if (data_.link.family == LinkFamily::Linear && prior_.kind == ScalarPotential::Kind::Gaussian) {
    const double tau2 = prior_.precision;
    c.ell = a_lo + tau2;
    c.big_l = a_hi + tau2;
    c.ell_root = g_inf + d * a_lo * tau2 / (a_lo + tau2);
  } else if (psi2.lo) {
    const double ab = a_lo * *psi2.lo;
    c.ell = ab;
    if (ab > 0) c.ell_root = g_inf - d * rho_sup * rho_sup / ab;
    if (psi2.hi) c.big_l = *psi2.hi * a_hi + rho_sup;
  }
  if (!psi2.lo) c.warnings.push_back("lower bound on psi'' unknown; supply psi2_lower or override leaf constants");
  if (!psi2.hi) c.warnings.push_back("psi'' is unbounded for this link; constants must be overridden");
  if (psi2.hi) {
    Matrix off = leaf_coupling_bound(data_, a_, *psi2.hi);
    off.diagonal().setZero();
    set_l_bar(c, rho_sup, off.rowwise().sum().maxCoeff());
  }
  return c;
}

// ------------------------------------------------------------ spike-slab

SpikeSlabGlmTarget::SpikeSlabGlmTarget(GlmData data, double eta, double spike_precision, double slab_precision,
                                       double debias_precision)
    : data_(std::move(data)), eta_(eta), spike_(spike_precision), slab_(slab_precision), debias_(debias_precision) {
  data_.validate();
  if (!(eta_ >= 0 && eta_ <= 1)) throw InputError("mixture weight eta must lie in [0,1]");
  if (!(slab_ > 0 && slab_ < spike_)) throw InputError("need 0 < slab precision < spike precision");
  if (!(debias_ > 0)) throw InputError("debias precision must be positive");
  if (data_.design.cols() < 2) throw InputError("spike-slab target needs at least two coefficients");
  const double root_norm2 = data_.design.col(0).squaredNorm();
  if (!(root_norm2 > 0)) throw InputError("first design column has zero norm");
  a_ = data_.design.transpose() * data_.design / data_.dispersion;
  w_ = data_.design.transpose() * data_.response / data_.dispersion;
  gamma_ = data_.design.transpose() * data_.design.col(0) / root_norm2;
  gamma_[0] = 1.0;
}

SpikeSlabGlmTarget::Weights SpikeSlabGlmTarget::posterior_weights(double x) const {
  if (eta_ <= 0) return {0.0, 1.0};
  if (eta_ >= 1) return {1.0, 0.0};
  const double l0 = std::log(eta_) + 0.5 * std::log(spike_) - 0.5 * spike_ * x * x;
  const double l1 = std::log1p(-eta_) + 0.5 * std::log(slab_) - 0.5 * slab_ * x * x;
  const double w0 = sigmoid(l0 - l1);
  return {w0, sigmoid(l1 - l0)};
}

double SpikeSlabGlmTarget::mixture_value(double x) const {
  const double c = 0.5 * std::log(2.0 * std::numbers::pi);
  const double l1 = 0.5 * std::log(slab_) - 0.5 * slab_ * x * x - c;
  const double l0 = 0.5 * std::log(spike_) - 0.5 * spike_ * x * x - c;
  if (eta_ <= 0) return -l1;
  if (eta_ >= 1) return -l0;
  const double a = std::log(eta_) + l0, b = std::log1p(-eta_) + l1;
  const double m = std::max(a, b);
  return -(m + std::log(std::exp(a - m) + std::exp(b - m)));
}

double SpikeSlabGlmTarget::mixture_d1(double x) const {
  const Weights w = posterior_weights(x);
  return (w.spike * spike_ + w.slab * slab_) * x;
}

double SpikeSlabGlmTarget::mixture_d2(double x) const {
  const Weights w = posterior_weights(x);
  const double diff = spike_ - slab_;
  return w.spike * spike_ + w.slab * slab_ - x * x * w.spike * w.slab * diff * diff;
}

double SpikeSlabGlmTarget::value_at(const double* z) const {
  const Eigen::Index d = data_.design.cols();
  ConstVecMap beta(z, d);
  const Vector eta = data_.design * beta;
  double lp = 0;
  for (Eigen::Index k = 0; k < eta.size(); ++k) lp += data_.link.value(eta[k]);
  double s = lp / data_.dispersion - w_.dot(beta);
  for (Eigen::Index j = 1; j < d; ++j) s += mixture_value(beta[j]);
  const double t = gamma_.dot(beta);
  return s + 0.5 * debias_ * t * t;
}

void SpikeSlabGlmTarget::gradient_at(const double* z, double* out) const {
  const Eigen::Index d = data_.design.cols();
  ConstVecMap beta(z, d);
  Vector eta = data_.design * beta;
  for (Eigen::Index k = 0; k < eta.size(); ++k) eta[k] = data_.link.d1(eta[k]);
  Eigen::Map<Vector> g(out, d);
  g = data_.design.transpose() * eta / data_.dispersion - w_ + debias_ * gamma_.dot(beta) * gamma_;
  for (Eigen::Index j = 1; j < d; ++j) g[j] += mixture_d1(beta[j]);
}

double SpikeSlabGlmTarget::hessian_at(const double* z, int i, int j) const {
  const Eigen::Index d = data_.design.cols();
  ConstVecMap beta(z, d);
  const Vector eta = data_.design * beta;
  double s = 0;
  for (Eigen::Index k = 0; k < eta.size(); ++k) s += data_.link.d2(eta[k]) * data_.design(k, i) * data_.design(k, j);
  s = s / data_.dispersion + debias_ * gamma_[i] * gamma_[j];
  if (i == j && i > 0) s += mixture_d2(beta[i]);
  return s;
}

RegularityConstants SpikeSlabGlmTarget::analytic_constants() const {
  RegularityConstants c;
  const Eigen::Index d = data_.design.cols();
  const auto [a_lo, a_hi] = extreme_eigenvalues(a_);
  const CurvatureRange psi2 = link_curvature(data_);
  const double a11 = a_(0, 0);
  const double leak = gamma_.tail(d - 1).squaredNorm();
  const double bound = mixture_log_concavity_bound(eta_, std::sqrt(spike_), std::sqrt(slab_));

  if (psi2.hi) {
    const double hi = *psi2.hi;
    c.big_l_root = 2.0 * (hi * a11 + debias_);
    c.big_l = hi * a_hi + spike_ + debias_ * leak;
  } else {
    c.warnings.push_back("psi'' is unbounded for this link; constants must be overridden");
  }
  if (psi2.lo) {
    const double lo = *psi2.lo;
    const double bad = lo * a_lo;
    c.ell = bad + bound;
    if (psi2.hi && bad > 0) {
      const double hi = *psi2.hi;
      c.ell_root = lo * a11 + debias_ - 2.0 * leak * debias_ * debias_ / bad -
                   2.0 * (hi * a_hi - bad) * (hi * a11 - bad) / bad;
    }
  } else {
    c.warnings.push_back("lower bound on psi'' unknown; supply psi2_lower or override leaf constants");
  }
  if (psi2.hi) {
    Matrix coupling = leaf_coupling_bound(data_, a_, *psi2.hi);
    if (data_.link.family == LinkFamily::Linear)
      coupling = (a_ + debias_ * gamma_ * gamma_.transpose()).cwiseAbs();
    else
      coupling += debias_ * (gamma_ * gamma_.transpose()).cwiseAbs();
    const double root_coupling = coupling.row(0).tail(d - 1).maxCoeff();
    Matrix leaf = coupling.bottomRightCorner(d - 1, d - 1);
    leaf.diagonal().setZero();
    set_l_bar(c, root_coupling, leaf.rowwise().sum().maxCoeff());
  }
  return c;
}

// ------------------------------------------------------------- free functions

RegularityConstants regularity_constants(const TargetPotential& target, const ConstantOverrides& o) {
  RegularityConstants c = target.analytic_constants();
  if (o.ell) c.ell = o.ell;
  if (o.big_l) c.big_l = o.big_l;
  if (o.ell_root) c.ell_root = o.ell_root;
  if (o.big_l_root) c.big_l_root = o.big_l_root;
  if (o.l_bar) c.l_bar = o.l_bar;
  if (c.ell && !(*c.ell > 0)) c.warnings.push_back("root domination violated: ell <= 0");
  if (c.ell_root && !(*c.ell_root > 0)) c.warnings.push_back("root domination violated: ell_root <= 0");
  if (!c.complete()) c.warnings.push_back("constants incomplete; overrides required for spike and step size");
  return c;
}

double mixture_log_concavity_bound(double eta, double tau0, double tau1) {
  if (!(eta >= 0 && eta <= 1)) throw InputError("eta must lie in [0,1]");
  if (!(tau1 > 0 && tau1 < tau0)) throw InputError("need 0 < tau1 < tau0");
  if (eta == 0) return tau1 * tau1;
  if (eta == 1) return tau0 * tau0;
  const double ratio = eta * tau0 / ((1.0 - eta) * std::numbers::e * tau1);
  return tau1 * tau1 - 2.0 * (tau0 * tau0 - tau1 * tau1) * std::log1p(ratio);
}

Matrix gaussian_ensemble_design(const Matrix& cov, int n, std::uint64_t seed) {
  if (n < 1) throw InputError("design needs at least one row");
  if (cov.rows() != cov.cols() || cov.rows() < 1) throw InputError("covariance must be square");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw InputError("covariance is not positive definite");
  const Matrix lower = llt.matrixL();
  auto rng = make_stream(seed, 0);
  std::normal_distribution<double> normal;
  const Eigen::Index d = cov.rows();
  Matrix x(n, d);
  Vector xi(d);
  for (int r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < d; ++k) xi[k] = normal(rng);
    x.row(r) = (lower * xi).transpose();
  }
  return x;
}

Matrix read_csv_matrix(const std::string& path, bool header) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open CSV file");
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && header) {
      first = false;
      continue;
    }
    first = false;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ConfigError(path, "row " + std::to_string(rows.size() + 1) + ": non-numeric cell '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw ConfigError(path, "row " + std::to_string(rows.size() + 1) + " has a different column count");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path, "CSV file has no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < rows[r].size(); ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  return m;
}

// ------------------------------------------------------------------- JSON

namespace {

using detail::json;

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || p[0] == '/' || base.empty()) return p;
  return base + "/" + p;
}

ScalarPotential potential_from_json(const json& j, const std::string& path) {
  detail::require_keys(j, {"kind", "precision", "scale", "location"}, path);
  const std::string kind = detail::get_string(j, "kind", path);
  const double loc = detail::get_optional_double(j, "location", path).value_or(0.0);
  try {
    if (kind == "gaussian") return ScalarPotential::gaussian(detail::get_double(j, "precision", path), loc);
    if (kind == "logistic") return ScalarPotential::logistic(detail::get_double(j, "scale", path), loc);
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(detail::join_path(path, "kind"), "expected 'gaussian' or 'logistic'");
}

GlmData glm_from_json(const json& j, const std::string& path, const std::string& base) {
  GlmData g;
  if (j.contains("design") == j.contains("design_csv"))
    throw ConfigError(path, "exactly one of 'design' or 'design_csv' is required");
  const bool header = detail::get_bool(j, "csv_header", path, false);
  if (j.contains("design"))
    g.design = detail::to_matrix(j.at("design"), detail::join_path(path, "design"));
  else
    g.design = read_csv_matrix(resolve(base, detail::get_string(j, "design_csv", path)), header);
  if (j.contains("response") == j.contains("response_csv"))
    throw ConfigError(path, "exactly one of 'response' or 'response_csv' is required");
  if (j.contains("response")) {
    g.response = detail::to_vector(j.at("response"), detail::join_path(path, "response"));
  } else {
    Matrix r = read_csv_matrix(resolve(base, detail::get_string(j, "response_csv", path)), header);
    if (r.cols() != 1) throw ConfigError(detail::join_path(path, "response_csv"), "expected a single column");
    g.response = r.col(0);
  }
  g.dispersion = detail::get_optional_double(j, "dispersion", path).value_or(1.0);
  const std::string link = j.contains("link") ? detail::get_string(j, "link", path) : "linear";
  if (link == "linear")
    g.link.family = LinkFamily::Linear;
  else if (link == "logistic")
    g.link.family = LinkFamily::Logistic;
  else if (link == "poisson")
    g.link.family = LinkFamily::Poisson;
  else
    throw ConfigError(detail::join_path(path, "link"), "expected linear, logistic or poisson");
  g.psi2_lower = detail::get_optional_double(j, "psi2_lower", path);
  try {
    g.validate();
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
  return g;
}

}  // namespace

ConstantOverrides overrides_from_json(const json& j) {
  const std::string path = "target.constants";
  detail::require_keys(j, {"ell", "big_l", "ell_root", "big_l_root", "l_bar"}, path);
  ConstantOverrides o;
  o.ell = detail::get_optional_double(j, "ell", path);
  o.big_l = detail::get_optional_double(j, "big_l", path);
  o.ell_root = detail::get_optional_double(j, "ell_root", path);
  o.big_l_root = detail::get_optional_double(j, "big_l_root", path);
  o.l_bar = detail::get_optional_double(j, "l_bar", path);
  return o;
}

std::unique_ptr<TargetPotential> target_from_json(const json& j, const std::string& base_dir) {
  const std::string path = "target";
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  const std::string family = detail::get_string(j, "family", path);
  try {
    if (family == "gaussian") {
      detail::require_keys(j, {"family", "mean", "cov", "constants"}, path);
      Matrix cov = detail::to_matrix(detail::require(j, "cov", path), path + ".cov");
      Vector mean = j.contains("mean") ? detail::to_vector(j.at("mean"), path + ".mean") : Vector::Zero(cov.rows());
      return std::make_unique<GaussianTarget>(std::move(mean), std::move(cov));
    }
    if (family == "glm_location") {
      detail::require_keys(j, {"family", "design", "design_csv", "response", "response_csv", "csv_header", "dispersion",
                               "link", "psi2_lower", "prior", "hyperprior", "constants"},
                           path);
      GlmData data = glm_from_json(j, path, base_dir);
      ScalarPotential prior = potential_from_json(detail::require(j, "prior", path), path + ".prior");
      ScalarPotential hyper = potential_from_json(detail::require(j, "hyperprior", path), path + ".hyperprior");
      return std::make_unique<GlmLocationTarget>(std::move(data), prior, hyper);
    }
    if (family == "spike_slab") {
      detail::require_keys(j, {"family", "design", "design_csv", "response", "response_csv", "csv_header", "dispersion",
                               "link", "psi2_lower", "eta", "spike_precision", "slab_precision", "debias_precision",
                               "constants"},
                           path);
      GlmData data = glm_from_json(j, path, base_dir);
      return std::make_unique<SpikeSlabGlmTarget>(std::move(data), detail::get_double(j, "eta", path),
                                                  detail::get_double(j, "spike_precision", path),
                                                  detail::get_double(j, "slab_precision", path),
                                                  detail::get_double(j, "debias_precision", path));
    }
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".family", "expected gaussian, glm_location or spike_slab");
}

}  // namespace ssvi
