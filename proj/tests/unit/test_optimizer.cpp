#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "ssvi/diagnostics.hpp"
#include "ssvi/error.hpp"
#include "ssvi/optimizer.hpp"

using namespace ssvi;

namespace {

RegularityConstants unit_constants() {
  RegularityConstants c;
  c.ell = c.big_l = c.ell_root = c.big_l_root = 1.0;
  return c;
}

/// Enumerates every active set of the box QP and keeps the KKT point.
Vector brute_force_projection(const Matrix& q, const Vector& z, const std::vector<char>& constrained) {
  const int n = static_cast<int>(z.size());
  const Vector c = q * z;
  Vector best;
  double best_val = INFINITY;
  for (int mask = 0; mask < (1 << n); ++mask) {
    bool ok = true;
    for (int i = 0; i < n; ++i)
      if ((mask >> i & 1) && !constrained[i]) ok = false;
    if (!ok) continue;
    std::vector<int> free;
    for (int i = 0; i < n; ++i)
      if (!(mask >> i & 1)) free.push_back(i);
    Vector theta = Vector::Zero(n);
    if (!free.empty()) {
      Matrix qf(free.size(), free.size());
      Vector cf(free.size());
      for (std::size_t a = 0; a < free.size(); ++a) {
        cf[a] = c[free[a]];
        for (std::size_t b = 0; b < free.size(); ++b) qf(a, b) = q(free[a], free[b]);
      }
      const Vector tf = qf.llt().solve(cf);
      for (std::size_t a = 0; a < free.size(); ++a) theta[free[a]] = tf[a];
    }
    bool feasible = true;
    for (int i = 0; i < n; ++i)
      if (constrained[i] && theta[i] < -1e-14) feasible = false;
    if (!feasible) continue;
    const double val = 0.5 * (theta - z).dot(q * (theta - z));
    if (val < best_val) {
      best_val = val;
      best = theta;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("smoothness constant of the parameterization") {
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  RegularityConstants c = unit_constants();
  CHECK(compute_upsilon(c, s, 2.0) == doctest::Approx(648.0).epsilon(1e-15));
  CHECK(compute_upsilon(c, s, 4.0) == doctest::Approx(2 * compute_upsilon(c, s, 2.0)).epsilon(1e-15));
  DictionarySpec s2 = build_dictionary(2, 1.0, 0.5);
  c.big_l_root = 4.0;
  c.big_l = 9.0;
  CHECK(compute_upsilon(c, s2, 1.0) == doctest::Approx(36.0 * 25.0).epsilon(1e-15));
  c.big_l.reset();
  CHECK_THROWS_AS(compute_upsilon(c, s2, 1.0), InputError);

  GramMatrix q = gram_matrix(s, GramOptions{""});
  StepConstants sc = step_constants(unit_constants(), s, q);
  CHECK(std::isfinite(sc.step));
  CHECK(sc.step > 0);
  CHECK(sc.kappa > 1);
  CHECK(sc.step == doctest::Approx(1 / (sc.smoothness + sc.upsilon)));
}

TEST_CASE("updatable cholesky follows appends and removals") {
  std::mt19937_64 rng(1);
  const int n = 40;
  auto q = std::make_shared<const Matrix>(testing::random_spd(rng, n));
  UpdatableCholesky f(q);
  std::vector<int> free{0, 3, 5, 9};
  f.reset(free);
  CHECK(f.ok());
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int step = 0; step < 300; ++step) {
    const int i = pick(rng);
    auto it = std::find(free.begin(), free.end(), i);
    if (it == free.end()) {
      CHECK(f.append(i));
      free.push_back(i);
    } else if (free.size() > 1) {
      f.remove(i);
      free.erase(it);
    }
    Vector rhs = testing::normal_vector(rng, n);
    const Vector got = f.solve(rhs);
    Matrix qf(free.size(), free.size());
    Vector rf(free.size());
    for (std::size_t a = 0; a < free.size(); ++a) {
      rf[a] = rhs[f.order()[a]];
      for (std::size_t b = 0; b < free.size(); ++b) qf(a, b) = (*q)(f.order()[a], f.order()[b]);
    }
    const Vector want = qf.llt().solve(rf);
    for (std::size_t a = 0; a < free.size(); ++a) CHECK(got[f.order()[a]] == doctest::Approx(want[a]).epsilon(1e-9));
    for (int k = 0; k < n; ++k)
      if (std::find(free.begin(), free.end(), k) == free.end()) CHECK(got[k] == 0.0);
  }
}

TEST_CASE("cone projection in the gram norm") {
  SUBCASE("feasible points are returned unchanged") {
    std::mt19937_64 rng(2);
    Matrix q = testing::random_spd(rng, 6);
    Vector z = testing::normal_vector(rng, 8).cwiseAbs();
    z[6] = -3.0;  // the trailing block passes through
    std::vector<char> mask(6, 1);
    CHECK(project_cone_q(z, q, mask) == z);
  }
  SUBCASE("identity metric clips") {
    Vector z(2);
    z << -1, 2;
    const Vector p = project_cone_q(z, Matrix::Identity(2, 2), {1, 1});
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 2.0);
  }
  SUBCASE("agrees with active-set enumeration") {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.7);
    for (int rep = 0; rep < 200; ++rep) {
      const int n = rep < 100 ? 2 : 8;
      Matrix q = testing::random_spd(rng, n);
      Vector z = testing::normal_vector(rng, n);
      z[0] = -std::abs(z[0]);
      std::vector<char> mask(n);
      for (int i = 0; i < n; ++i) mask[i] = i == 0 || coin(rng);
      const Vector got = project_cone_q(z, q, mask);
      const Vector want = brute_force_projection(q, z, mask);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("warm-started solver stays exact over a sequence") {
    std::mt19937_64 rng(4);
    const int n = 60;
    auto q = std::make_shared<const Matrix>(testing::random_spd(rng, n));
    std::vector<char> mask(n, 1);
    for (int i = 50; i < n; ++i) mask[i] = 0;
    BoxQpSolver solver(q, mask, 1e-11);
    Vector z = testing::normal_vector(rng, n);
    for (int rep = 0; rep < 50; ++rep) {
      z += 0.2 * testing::normal_vector(rng, n);
      ProjectionResult r = solver.project(z);
      CHECK(r.kkt_residual <= 1e-11);
      CHECK((r.q_point - (*q) * r.point).cwiseAbs().maxCoeff() < 1e-9);
      for (int i = 0; i < 50; ++i) CHECK(r.point[i] >= 0.0);
      // optimality: moving toward any feasible point does not decrease the objective
      const Vector g = (*q) * (r.point - z);
      for (int i = 0; i < n; ++i) {
        if (mask[i] && r.point[i] == 0)
          CHECK(g[i] >= -1e-8);
        else
          CHECK(std::abs(g[i]) < 1e-8);
      }
    }
  }
  SUBCASE("block projector matches the dense projection") {
    DictionarySpec s = build_dictionary(3, 1.0, 0.5);
    GramMatrix q = gram_matrix(s, GramOptions{""});
    std::vector<char> mask(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) mask[k] = s.constrained(k);
    ConeProjector proj(s, q);
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 10; ++rep) {
      Vector z = testing::normal_vector(rng, static_cast<int>(s.size()), 0.1);
      const Vector a = proj.project(z).point, b = project_cone_q(z, q.dense(), mask);
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("mode finder and default start") {
  Vector m(3);
  m << 1, -2, 0.5;
  std::mt19937_64 rng(6);
  GaussianTarget g(m, testing::random_spd(rng, 3));
  CHECK((map_point(g, Vector::Zero(3)) - m).cwiseAbs().maxCoeff() < 1e-10);

  GlmData data;
  data.design = gaussian_ensemble_design(Matrix::Identity(3, 3), 30, 7);
  data.response = testing::normal_vector(rng, 30);
  SpikeSlabGlmTarget ss(data, 0.3, 9.0, 1.0, 1.0);
  const Vector mode = map_point(ss, Vector::Zero(3));
  CHECK(grad_potential(ss, mode).norm() < 1e-8);

  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  Vector alpha = Vector::Constant(3, 0.5);
  StarMapParams init = default_init(g, s, alpha);
  CHECK(init.lambda.isZero());
  CHECK((init.v - m).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(init.alpha == alpha);
}

TEST_CASE("parameter distance equals the mean squared map difference") {
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  GramMatrix q = gram_matrix(s, GramOptions{""});
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 5; ++rep) {
    StarMapParams a = testing::random_params(rng, s), b = testing::random_params(rng, s);
    b.alpha = a.alpha;
    StarMap ma(s, a), mb(s, b);
    testing::Moments m;
    std::mt19937_64 draw(9 + rep);
    for (int k = 0; k < 100000; ++k) {
      const Vector x = testing::normal_vector(draw, 3);
      m.add((ma.apply(x) - mb.apply(x)).squaredNorm());
    }
    CHECK(std::abs(theta_distance_squared(a, b, q) - m.mean()) < 4 * m.se());
    const Estimate l2 = l2_map_distance(ma, mb, 100000, 10 + rep);
    CHECK(std::abs(l2.value * l2.value - theta_distance_squared(a, b, q)) < 8 * l2.value * l2.std_error);
  }
}

TEST_CASE("projected gradient on the standard gaussian stays at the spike") {
  DictionarySpec s = build_dictionary(2, 4.0, 0.5);
  GramMatrix q = gram_matrix(s, GramOptions{""});
  GaussianTarget t(Vector::Zero(2), Matrix::Identity(2, 2));
  PgdConfig cfg;
  cfg.step_size = 1e-3;
  cfg.max_iterations = 300;
  cfg.n_samples = 20000;
  cfg.seed = 11;
  SaaSample sample = make_saa_sample(cfg.seed, cfg.n_samples, 2);
  const StarMapParams init = identity_params(s);
  FitResult r = run_pgd(t, s, q, cfg, regularity_constants(t), init, sample);
  const FreeEnergyReport at_identity = free_energy(init, s, t, sample);
  const FreeEnergyReport fitted = free_energy(r.params, s, t, sample);
  CHECK(std::abs(fitted.value - at_identity.value) <= 2 * at_identity.std_error);
  CHECK(admissible(r.params, s));
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.constrained(k)) CHECK(r.params.lambda[k] >= 0.0);
  double prev = r.initial_free_energy;
  for (double f : r.free_energy) {
    CHECK(f <= prev + 1e-10);
    prev = f;
  }
}

TEST_CASE("projected gradient trace, fixed point and rejects bad starts") {
  Matrix cov(2, 2);
  cov << 1, 0.5, 0.5, 1;
  GaussianTarget t(Vector::Zero(2), cov);
  DictionarySpec s = build_dictionary(2, 2.0, 1.0);
  GramMatrix q = gram_matrix(s, GramOptions{""});
  PgdConfig cfg;
  cfg.step_size = 0.05;
  cfg.max_iterations = 20000;
  cfg.tolerance = 1e-5;
  cfg.n_samples = 4000;
  cfg.seed = 12;
  const RegularityConstants c = regularity_constants(t);
  const StarMapParams init = default_init(t, s, Vector::Constant(2, 0.6));
  FitResult r = run_pgd(t, s, q, cfg, c, init);
  CHECK(r.termination == "tolerance");
  CHECK(r.free_energy.size() == static_cast<std::size_t>(r.iterations));
  CHECK(r.grad_theta_norm.size() == r.free_energy.size());
  CHECK(r.step_halvings.size() == r.free_energy.size());
  CHECK(r.free_energy.back() < r.initial_free_energy);
  double prev = r.initial_free_energy;
  for (double f : r.free_energy) {
    CHECK(f <= prev + 1e-10);
    prev = f;
  }

  PgdConfig again = cfg;
  again.step_size = r.final_step;
  FitResult restart = run_pgd(t, s, q, again, c, r.params);
  CHECK(restart.iterations <= 1);

  StarMapParams bad = init;
  bad.lambda[0] = -1;
  CHECK_THROWS_AS(run_pgd(t, s, q, cfg, c, bad), InputError);

  // identical config, identical result
  FitResult twin = run_pgd(t, s, q, cfg, c, init);
  CHECK(twin.params.lambda == r.params.lambda);
  CHECK(twin.free_energy == r.free_energy);
}
