#include "ssvi/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ssvi/error.hpp"
#include "ssvi/oracle.hpp"
#include "ssvi/parallel.hpp"

namespace ssvi {

namespace {

constexpr std::uint64_t kMomentStream = 0xd1a0000;
constexpr std::uint64_t kBoundStream = 0xb0d0000;
constexpr std::uint64_t kDistanceStream = 0x12d0000;
constexpr std::uint64_t kGridStream = 0x6d1d0000;

/// Mean of rows of `values` (one column per quantity) with chunked pairwise sums.
struct ColumnStats {
  Vector mean, std_error;
};

ColumnStats column_stats(const Matrix& values) {
  const std::size_t n = static_cast<std::size_t>(values.rows());
  const Eigen::Index m = values.cols();
  auto chunked = [&](auto term) {
    std::vector<Vector> parts(chunk_count(n), Vector::Zero(m));
    for (std::size_t c = 0; c < parts.size(); ++c) {
      const std::size_t e = std::min(n, (c + 1) * kReductionChunk);
      for (std::size_t k = c * kReductionChunk; k < e; ++k) parts[c] += term(static_cast<Eigen::Index>(k));
    }
    return Vector(pairwise_reduce(parts, [](Vector& a, const Vector& b) { a += b; }));
  };
  ColumnStats s;
  s.mean = chunked([&](Eigen::Index k) { return Vector(values.row(k).transpose()); }) / static_cast<double>(n);
  if (n > 1) {
    const Vector ss = chunked([&](Eigen::Index k) {
      return Vector((values.row(k).transpose() - s.mean).array().square().matrix());
    });
    s.std_error = (ss / static_cast<double>(n - 1) / static_cast<double>(n)).cwiseSqrt();
  } else {
    s.std_error = Vector::Zero(m);
  }
  return s;
}

double pairwise_mean(const std::vector<double>& v, double* std_error) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t k = 0; k < v.size(); ++k) m(static_cast<Eigen::Index>(k), 0) = v[k];
  const ColumnStats s = column_stats(m);
  if (std_error) *std_error = s.std_error[0];
  return s.mean[0];
}

/// Central difference refined by one Richardson level.
template <class F>
double richardson_slope(F f, double x, double h) {
  const double coarse = (f(x + h) - f(x - h)) / (2 * h);
  const double fine = (f(x + h / 2) - f(x - h / 2)) / h;
  return (4 * fine - coarse) / 3;
}

/// Moves x off the breakpoint grid by at least `margin`.
double off_breakpoint(const DictionarySpec& spec, double x, double margin) {
  const double t = std::round((x + spec.radius()) / spec.width());
  const double k = std::clamp(t, 0.0, static_cast<double>(spec.cells()));
  const double b = spec.breakpoint(static_cast<int>(k));
  if (std::abs(x - b) >= margin) return x;
  return x >= b ? b + margin : b - margin;
}

void check_mc(std::size_t mc_n) {
  if (mc_n < 100) throw InputError("mc_n must be at least 100");
}

double z_score(double residual, double se) {
  if (se > 0) return std::abs(residual) / se;
  return residual == 0 ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace

RowMatrix reference_draws(std::uint64_t seed, std::uint64_t stream, std::size_t n, int d) {
  RowMatrix x(static_cast<Eigen::Index>(n), d);
  parallel_for(chunk_count(n), [&](std::size_t c) {
    auto rng = make_stream(seed, stream + c);
    std::normal_distribution<double> normal;
    const std::size_t e = std::min(n, (c + 1) * kReductionChunk);
    for (std::size_t k = c * kReductionChunk; k < e; ++k)
      for (int i = 0; i < d; ++i) x(static_cast<Eigen::Index>(k), i) = normal(rng);
  });
  return x;
}

// ---------------------------------------------------------------- residuals

ResidualReport self_consistency_residual(const StarMapParams& params, const DictionarySpec& spec,
                                         const TargetPotential& target, const ResidualOptions& opt) {
  check_mc(opt.mc_n);
  const int d = spec.dimension();
  if (target.dimension() != d) throw InputError("target and dictionary dimensions disagree");
  if (opt.root_points < 1 || (d > 1 && opt.leaf_points < 1)) throw InputError("grid sizes must be positive");
  if (!(opt.fd_step > 0)) throw InputError("fd_step must be positive");
  const StarMap map(spec, params);

  ResidualReport rep;
  {
    const PushforwardMoments mom = pushforward_moments(map, std::max<std::size_t>(opt.mc_n, 10000), opt.seed);
    rep.root_mean = mom.mean[0];
    rep.root_sd = std::sqrt(mom.cov(0, 0));
  }

  // Root grid, nudged so the difference stencil stays inside one cell.
  std::vector<double> root_x(static_cast<std::size_t>(opt.root_points));
  for (int g = 0; g < opt.root_points; ++g) {
    const double u = opt.root_points == 1 ? 0.0 : -3.0 + 6.0 * g / (opt.root_points - 1);
    const double x0 = map.root_inverse(rep.root_mean + u * rep.root_sd);
    const double margin = 10 * opt.fd_step / map.root_slope(x0) + 1e-9;
    root_x[static_cast<std::size_t>(g)] = off_breakpoint(spec, x0, margin);
  }

  const std::size_t per_root = 1 + static_cast<std::size_t>(d - 1) * static_cast<std::size_t>(opt.leaf_points);
  rep.points.resize(root_x.size() * per_root);

  parallel_for(rep.points.size(), [&](std::size_t task) {
    const std::size_t g = task / per_root, r = task % per_root;
    const double x0 = root_x[g];
    const double z0 = map.root(x0);
    ResidualPoint pt;
    pt.z0 = z0;
    auto rng = make_stream(opt.seed, kGridStream + task);
    std::normal_distribution<double> normal;
    std::vector<double> z(static_cast<std::size_t>(d)), grad(static_cast<std::size_t>(d));

    int eq = 0;
    double xi = 0;
    if (r > 0) {
      eq = 1 + static_cast<int>((r - 1) / static_cast<std::size_t>(opt.leaf_points));
      const int q = static_cast<int>((r - 1) % static_cast<std::size_t>(opt.leaf_points));
      const double u = opt.leaf_points == 1 ? 0.0 : -3.0 + 6.0 * q / (opt.leaf_points - 1);
      const double margin = 10 * opt.fd_step / map.leaf_slope(eq, u, x0) + 1e-9;
      xi = off_breakpoint(spec, u, margin);
      pt.zi = map.leaf(eq, xi, x0);
    }
    pt.equation = eq;

    if (eq == 0) {
      pt.log_density_slope =
          richardson_slope([&](double t) { return root_marginal_logdensity(map, t); }, z0, opt.fd_step);
    } else {
      pt.log_density_slope = richardson_slope(
          [&](double t) { return leaf_conditional_logdensity(map, eq, t, z0); }, pt.zi, opt.fd_step);
    }

    // Given the root, leaves are independent: draw the free ones through their conditional maps.
    z[0] = z0;
    const int free_leaves = (d - 1) - (eq > 0 ? 1 : 0);
    pt.stochastic = free_leaves > 0;
    std::vector<double> draws(pt.stochastic ? opt.mc_n : 1);
    for (std::size_t k = 0; k < draws.size(); ++k) {
      for (int j = 1; j < d; ++j) z[static_cast<std::size_t>(j)] = j == eq ? pt.zi : map.leaf(j, normal(rng), x0);
      target.gradient_at(z.data(), grad.data());
      draws[k] = grad[static_cast<std::size_t>(eq)];
    }
    pt.conditional_mean = pairwise_mean(draws, &pt.std_error);
    pt.residual = pt.log_density_slope + pt.conditional_mean;
    const double scale = 1 + std::abs(pt.conditional_mean);
    pt.normalized = pt.residual / scale;
    // The integrand can be constant in the free leaves (no leaf-leaf coupling); its spread is then round-off.
    if (pt.std_error <= 1e-12 * scale) pt.stochastic = false;
    pt.z_score = pt.stochastic ? z_score(pt.residual, pt.std_error) : 0.0;
    if (!std::isfinite(pt.residual)) throw NumericalError("non-finite self-consistency residual");
    rep.points[task] = pt;
  });

  for (const ResidualPoint& p : rep.points) {
    rep.worst_normalized = std::max(rep.worst_normalized, std::abs(p.normalized));
    rep.worst_z_score = std::max(rep.worst_z_score, p.z_score);
  }
  return rep;
}

nlohmann::json ResidualReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const ResidualPoint& p : points) {
    pts.push_back({{"equation", p.equation},
                   {"z0", p.z0},
                   {"zi", p.zi},
                   {"log_density_slope", p.log_density_slope},
                   {"conditional_mean", p.conditional_mean},
                   {"residual", p.residual},
                   {"std_error", p.std_error},
                   {"normalized", p.normalized},
                   {"z_score", std::isfinite(p.z_score) ? nlohmann::json(p.z_score) : nlohmann::json(nullptr)},
                   {"stochastic", p.stochastic}});
  }
  return {{"worst_normalized", worst_normalized},
          {"worst_z_score", std::isfinite(worst_z_score) ? nlohmann::json(worst_z_score) : nlohmann::json(nullptr)},
          {"root_mean", root_mean},
          {"root_sd", root_sd},
          {"points", pts}};
}

// ------------------------------------------------------------------- bound

namespace {

BoundCertificate bound_from_draws(const RowMatrix& z, const TargetPotential& target, const RegularityConstants& c) {
  BoundCertificate cert;
  const int d = target.dimension();
  if (!c.ell || !c.big_l_root || !c.ell_root) {
    cert.status = "constants incomplete";
    return cert;
  }
  if (!(*c.ell_root > 0) || !(*c.ell > 0)) {
    cert.status = "assumptions unverified: root-domination constant is not positive";
    return cert;
  }
  cert.assumptions_verified = true;
  cert.status = "ok";
  cert.constant = *c.big_l_root / (2 * *c.ell_root * *c.ell * *c.ell);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 1; i < d; ++i)
    for (int j = i + 1; j < d; ++j) pairs.emplace_back(i, j);
  // Column 0 holds the per-draw pair sum, then one column per pair.
  Matrix values(z.rows(), static_cast<Eigen::Index>(pairs.size()) + 1);
  parallel_for(chunk_count(static_cast<std::size_t>(z.rows())), [&](std::size_t ch) {
    const Eigen::Index e = std::min<Eigen::Index>(z.rows(), static_cast<Eigen::Index>((ch + 1) * kReductionChunk));
    for (Eigen::Index k = static_cast<Eigen::Index>(ch * kReductionChunk); k < e; ++k) {
      const double* zk = z.row(k).data();
      double s = 0;
      for (std::size_t a = 0; a < pairs.size(); ++a) {
        const double h = target.hessian_at(zk, pairs[a].first, pairs[a].second);
        values(k, static_cast<Eigen::Index>(a) + 1) = h * h;
        s += h * h;
      }
      values(k, 0) = s;
    }
  });
  const ColumnStats stats = column_stats(values);
  cert.pair_sum = {stats.mean[0], stats.std_error[0]};
  for (std::size_t a = 0; a < pairs.size(); ++a) {
    const Eigen::Index c = static_cast<Eigen::Index>(a) + 1;
    cert.terms.push_back({pairs[a].first, pairs[a].second, {stats.mean[c], stats.std_error[c]}});
  }
  cert.rhs = cert.constant * cert.pair_sum.value;
  cert.rhs_std_error = cert.constant * cert.pair_sum.std_error;
  return cert;
}

}  // namespace

BoundCertificate approximation_bound(const StarMapParams& params, const DictionarySpec& spec,
                                     const TargetPotential& target, const RegularityConstants& constants,
                                     std::size_t mc_n, std::uint64_t seed) {
  check_mc(mc_n);
  if (target.dimension() != spec.dimension()) throw InputError("target and dictionary dimensions disagree");
  const StarMap map(spec, params);
  RowMatrix z = reference_draws(seed, kBoundStream, mc_n, spec.dimension());
  std::vector<double> out(static_cast<std::size_t>(spec.dimension()));
  for (Eigen::Index k = 0; k < z.rows(); ++k) {
    map.eval(z.row(k).data(), out.data());
    for (int i = 0; i < spec.dimension(); ++i) z(k, i) = out[static_cast<std::size_t>(i)];
  }
  return bound_from_draws(z, target, constants);
}

BoundCertificate approximation_bound(const GaussianTarget& target, const RegularityConstants& constants,
                                     std::size_t mc_n, std::uint64_t seed) {
  check_mc(mc_n);
  const int d = target.dimension();
  const SsviGaussian star = ssvi_gaussian(target.mean(), target.cov());
  const Matrix chol = star.dist.cov.llt().matrixL();
  RowMatrix z = reference_draws(seed, kBoundStream, mc_n, d);
  for (Eigen::Index k = 0; k < z.rows(); ++k)
    z.row(k) = (star.dist.mean + chol * z.row(k).transpose()).transpose();
  BoundCertificate cert = bound_from_draws(z, target, constants);
  cert.kl = kl_gaussians(star.dist, GaussianDist{target.mean(), target.cov()});
  if (cert.rhs) cert.slack = *cert.rhs - *cert.kl;
  return cert;
}

nlohmann::json BoundCertificate::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json pairs = nlohmann::json::array();
  for (const PairTerm& t : terms)
    pairs.push_back({{"i", t.i}, {"j", t.j}, {"mean_square", t.mean_square.value}, {"std_error", t.mean_square.std_error}});
  return {{"assumptions_verified", assumptions_verified},
          {"status", status},
          {"constant", constant},
          {"pair_sum", pair_sum.value},
          {"pair_sum_std_error", pair_sum.std_error},
          {"rhs", opt(rhs)},
          {"rhs_std_error", rhs_std_error},
          {"kl", opt(kl)},
          {"slack", opt(slack)},
          {"terms", pairs}};
}

// ------------------------------------------------------- distances, moments

Estimate l2_map_distance(const StarSeparableMap& a, const StarSeparableMap& b, std::size_t mc_n, std::uint64_t seed) {
  check_mc(mc_n);
  if (a.dimension() != b.dimension()) throw InputError("maps have different dimensions");
  const int d = a.dimension();
  const RowMatrix x = reference_draws(seed, kDistanceStream, mc_n, d);
  std::vector<double> sq(mc_n);
  parallel_for(chunk_count(mc_n), [&](std::size_t ch) {
    const std::size_t e = std::min(mc_n, (ch + 1) * kReductionChunk);
    for (std::size_t k = ch * kReductionChunk; k < e; ++k) {
      const Vector xk = x.row(static_cast<Eigen::Index>(k)).transpose();
      sq[k] = (a.apply(xk) - b.apply(xk)).squaredNorm();
    }
  });
  double se = 0;
  const double m = pairwise_mean(sq, &se);
  Estimate out;
  out.value = std::sqrt(m);
  out.std_error = out.value > 0 ? se / (2 * out.value) : 0.0;
  return out;
}

PushforwardMoments pushforward_moments(const StarSeparableMap& map, std::size_t mc_n, std::uint64_t seed) {
  check_mc(mc_n);
  const int d = map.dimension();
  RowMatrix z = reference_draws(seed, kMomentStream, mc_n, d);
  parallel_for(chunk_count(mc_n), [&](std::size_t ch) {
    const std::size_t e = std::min(mc_n, (ch + 1) * kReductionChunk);
    for (std::size_t k = ch * kReductionChunk; k < e; ++k) {
      const Eigen::Index r = static_cast<Eigen::Index>(k);
      z.row(r) = map.apply(z.row(r).transpose()).transpose();
    }
  });
  PushforwardMoments out;
  const ColumnStats first = column_stats(Matrix(z));
  out.mean = first.mean;
  out.mean_se = first.std_error;
  const int pairs = d * (d + 1) / 2;
  Matrix prods(static_cast<Eigen::Index>(mc_n), pairs);
  for (Eigen::Index k = 0; k < z.rows(); ++k) {
    int c = 0;
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) prods(k, c++) = (z(k, i) - out.mean[i]) * (z(k, j) - out.mean[j]);
  }
  const ColumnStats second = column_stats(prods);
  const double bessel = mc_n > 1 ? static_cast<double>(mc_n) / static_cast<double>(mc_n - 1) : 1.0;
  out.cov.resize(d, d);
  out.cov_se.resize(d, d);
  int c = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j, ++c) {
      out.cov(i, j) = out.cov(j, i) = second.mean[c] * bessel;
      out.cov_se(i, j) = out.cov_se(j, i) = second.std_error[c];
    }
  return out;
}

nlohmann::json PushforwardMoments::to_json() const {
  auto mat = [](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      nlohmann::json r = nlohmann::json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
      rows.push_back(r);
    }
    return rows;
  };
  auto vec = [](const Vector& v) { return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size())); };
  return {{"mean", vec(mean)}, {"mean_std_error", vec(mean_se)}, {"cov", mat(cov)}, {"cov_std_error", mat(cov_se)}};
}

}  // namespace ssvi
