#include <doctest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "ssvi/error.hpp"
#include "ssvi/objective.hpp"
#include "ssvi/parallel.hpp"

using namespace ssvi;

namespace {

/// Standard Gaussian potential that overflows once the root leaves (-inf, 3].
class Overflowing final : public TargetPotential {
 public:
  int dimension() const override { return 2; }
  std::string family() const override { return "test"; }
  double value_at(const double* z) const override { return z[0] > 3 ? INFINITY : 0.5 * (z[0] * z[0] + z[1] * z[1]); }
  void gradient_at(const double* z, double* out) const override {
    out[0] = z[0];
    out[1] = z[1];
  }
  double hessian_at(const double*, int i, int j) const override { return i == j; }
  RegularityConstants analytic_constants() const override { return {}; }
};

SaaSample permuted(const SaaSample& s, std::uint64_t seed) {
  std::vector<int> perm(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  SaaSample out;
  out.seed = s.seed;
  out.x.resize(s.x.rows(), s.x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.x.row(i) = s.x.row(perm[i]);
  return out;
}

Vector flatten(const StarMapParams& p) {
  Vector t(p.lambda.size() + p.v.size());
  t << p.lambda, p.v;
  return t;
}

StarMapParams unflatten(const Vector& t, const StarMapParams& like) {
  StarMapParams p = like;
  p.lambda = t.head(like.lambda.size());
  p.v = t.tail(like.v.size());
  return p;
}

}  // namespace

TEST_CASE("frozen samples") {
  SaaSample a = make_saa_sample(17, 5000, 3), b = make_saa_sample(17, 5000, 3);
  CHECK(a.x == b.x);
  CHECK(a.order == b.order);
  CHECK(a.order.size() == 5000u);
  CHECK(a.x != make_saa_sample(18, 5000, 3).x);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(a.x.col(c).mean()) < 4 / std::sqrt(5000.0));
  for (std::size_t k = 1; k < a.order.size(); ++k) {
    const auto r0 = a.x.row(a.order[k - 1]), r1 = a.x.row(a.order[k]);
    CHECK(std::lexicographical_compare(r0.data(), r0.data() + 3, r1.data(), r1.data() + 3));
  }
}

TEST_CASE("identity map on the standard gaussian") {
  const int d = 3;
  const std::size_t n = 100000;
  DictionarySpec s = build_dictionary(d, 1.0, 0.5);
  GaussianTarget t(Vector::Zero(d), Matrix::Identity(d, d));
  SaaSample sample = make_saa_sample(3, n, d);
  StarMapParams id = identity_params(s);

  ObjectiveEvaluation e = evaluate_objective(id, s, t, sample, true);
  CHECK(e.energy.value == e.energy.potential + e.energy.entropy);
  CHECK(e.energy.entropy == 0.0);
  const double direct = 0.5 * sample.x.rowwise().squaredNorm().mean();
  CHECK(e.energy.value == doctest::Approx(direct).epsilon(1e-12));
  CHECK(std::abs(e.energy.value - d / 2.0) < 4 * std::sqrt(d / 2.0 / n));
  CHECK(e.energy.std_error == doctest::Approx(std::sqrt(d / 2.0 / n)).epsilon(0.02));

  const Vector mean = sample.x.colwise().mean().transpose();
  CHECK((e.grad.v - mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(e.grad.v.cwiseAbs().maxCoeff() < 4 / std::sqrt(double(n)));

  Vector c(d);
  c << 0.3, -0.5, 0.2;
  StarMapParams shifted = id;
  shifted.v = c;
  const double diff = free_energy(shifted, s, t, sample).value - e.energy.value;
  CHECK(std::abs(diff - c.squaredNorm() / 2) < 4 * c.norm() / std::sqrt(double(n)));
}

TEST_CASE("free energy does not depend on row order or thread count") {
  std::mt19937_64 rng(4);
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  Matrix cov = testing::random_spd(rng, 3);
  GaussianTarget t(Vector::Zero(3), cov);
  StarMapParams p = testing::random_params(rng, s);
  SaaSample sample = make_saa_sample(5, 5000, 3);
  ObjectiveEvaluation base = evaluate_objective(p, s, t, sample, true);

  SaaSample shuffled = permuted(sample, 6);
  ObjectiveEvaluation lazy = evaluate_objective(p, s, t, shuffled, true);
  canonicalize(shuffled);
  ObjectiveEvaluation canon = evaluate_objective(p, s, t, shuffled, true);
  for (const ObjectiveEvaluation* e : {&lazy, &canon}) {
    CHECK(e->energy.value == base.energy.value);
    CHECK(e->energy.std_error == base.energy.std_error);
    CHECK(e->grad.lambda == base.grad.lambda);
    CHECK(e->grad.v == base.grad.v);
  }

  const int threads = thread_count();
  set_thread_count(4);
  ObjectiveEvaluation four = evaluate_objective(p, s, t, sample, true);
  set_thread_count(threads);
  CHECK(four.energy.value == base.energy.value);
  CHECK(four.grad.lambda == base.grad.lambda);

  ObjectiveEvaluation again = evaluate_objective(p, s, t, make_saa_sample(5, 5000, 3), true);
  CHECK(again.energy.value == base.energy.value);
  CHECK(again.grad.v == base.grad.v);
}

TEST_CASE("gradient matches finite differences of the frozen free energy") {
  std::mt19937_64 rng(7);
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  Matrix cov = testing::random_spd(rng, 3);
  GaussianTarget gauss(testing::normal_vector(rng, 3), cov);
  GlmData g;
  g.design = gaussian_ensemble_design(Matrix::Identity(3, 3), 20, 8);
  g.response = testing::normal_vector(rng, 20);
  SpikeSlabGlmTarget slab(g, 0.3, 9.0, 1.0, 1.0);
  SaaSample sample = make_saa_sample(9, 2000, 3);

  for (const TargetPotential* t : {static_cast<const TargetPotential*>(&gauss), static_cast<const TargetPotential*>(&slab)}) {
    for (int rep = 0; rep < 20; ++rep) {
      StarMapParams p = testing::random_params(rng, s, 0.2);
      p.lambda.array() += 0.01;  // constrained entries stay clear of zero under the difference step
      ObjectiveGradient grad = gradient(p, s, *t, sample);
      Vector analytic(grad.lambda.size() + grad.v.size());
      analytic << grad.lambda, grad.v;
      const Vector theta = flatten(p);
      auto f = [&](const Vector& th) { return free_energy(unflatten(th, p), s, *t, sample).value; };
      const double scale = analytic.cwiseAbs().maxCoeff();
      for (Eigen::Index k = 0; k < theta.size(); ++k) {
        const double fd = testing::central_diff(f, theta, static_cast<int>(k), 1e-6);
        CHECK_MESSAGE(std::abs(analytic[k] - fd) <= 1e-6 * std::max(std::abs(analytic[k]), 1e-2 * scale),
                      t->family() << " coord " << k << " " << analytic[k] << " vs " << fd);
      }
    }
  }
}

TEST_CASE("root-slope coefficients carry no entropy term") {
  std::mt19937_64 rng(10);
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  GaussianTarget t(Vector::Zero(3), testing::random_spd(rng, 3));
  StarMapParams p = testing::random_params(rng, s);
  SaaSample sample = make_saa_sample(11, 3000, 3);
  ObjectiveGradient grad = gradient(p, s, t, sample);
  for (std::size_t k = s.class_start(BasisClass::M5); k < s.size(); k += 3) {
    const BasisId id = s.basis(k);
    testing::Moments m;
    for (std::size_t r = 0; r < sample.size(); ++r) {
      const Vector x = sample.x.row(r).transpose();
      const Vector z = map_eval(p, s, x);
      m.add(basis_eval(s, id, x).value * grad_potential(t, z)[id.leaf]);
    }
    CHECK(grad.lambda[k] == doctest::Approx(m.mean()).epsilon(1e-10));
  }
}

TEST_CASE("free energy is convex along segments for a log-concave target") {
  std::mt19937_64 rng(12);
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  GaussianTarget t(Vector::Zero(3), testing::random_spd(rng, 3));
  SaaSample sample = make_saa_sample(13, 2000, 3);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector a = flatten(testing::random_params(rng, s, 0.5)), b = flatten(testing::random_params(rng, s, 0.5));
    StarMapParams like = testing::random_params(rng, s);
    like.alpha = Vector::Constant(3, 0.7);
    std::vector<double> f;
    for (int k = 0; k <= 10; ++k) f.push_back(free_energy(unflatten(a + (b - a) * (k / 10.0), like), s, t, sample).value);
    for (int k = 1; k < 10; ++k) CHECK(f[k - 1] - 2 * f[k] + f[k + 1] >= -1e-8);
  }
}

TEST_CASE("non-finite potential names the sample") {
  DictionarySpec s = build_dictionary(2, 1.0, 0.5);
  SaaSample sample = make_saa_sample(14, 1000, 2);
  StarMapParams p = identity_params(s);
  p.v[0] = 2.5;
  Overflowing t;
  try {
    free_energy(p, s, t, sample);
    FAIL("expected an overflow error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("sample") != std::string::npos);
  }
  p.v[0] = -10;
  CHECK(std::isfinite(free_energy(p, s, t, sample).value));
}
