#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "ssvi/dictionary.hpp"
#include "ssvi/error.hpp"
#include "ssvi/numeric.hpp"

using namespace ssvi;
using testing::Moments;

namespace {

std::size_t size_formula(int d, int n) { return n + 2 * (d - 1) * n * n + 3 * (d - 1) * n; }

Vector point(double x1, double xi, int d = 2, int leaf = 1) {
  Vector x = Vector::Zero(d);
  x[0] = x1;
  x[leaf] = xi;
  return x;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ssvi_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("dictionary size and ordering") {
  DictionarySpec s = build_dictionary(2, 1.0, 1.0);
  CHECK(s.cells() == 2);
  CHECK(s.size() == 16u);

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dd(2, 6), kk(1, 4), mm(1, 3);
  for (int rep = 0; rep < 10; ++rep) {
    const int d = dd(rng);
    const double width = 1.0 / mm(rng);
    const double radius = kk(rng) * width * mm(rng);
    DictionarySpec t = build_dictionary(d, radius, width);
    const int n = static_cast<int>(std::lround(2 * radius / width));
    CHECK(t.cells() == n);
    CHECK(t.size() == size_formula(d, n));
    CHECK(t.leaf_block_size() == static_cast<std::size_t>(2 * n * n + 3 * n));
  }

  DictionarySpec u = build_dictionary(3, 1.0, 0.5);
  int last_class = 0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const BasisId id = u.basis(k);
    CHECK(u.index(id) == k);
    CHECK(static_cast<int>(id.cls) >= last_class);
    last_class = static_cast<int>(id.cls);
    CHECK(u.constrained(k) == (id.cls != BasisClass::M5));
    CHECK(u.coordinate(k) == (id.cls == BasisClass::M0 ? 0 : id.leaf));
  }
  CHECK(u.class_start(BasisClass::M0) == 0u);
  CHECK(u.class_start(BasisClass::M1) == 4u);
  // M1 ordered by leaf, then b', then b
  CHECK(u.basis(4) == BasisId{BasisClass::M1, 1, 0, 0});
  CHECK(u.basis(5) == BasisId{BasisClass::M1, 1, 1, 0});
  CHECK(u.basis(8) == BasisId{BasisClass::M1, 1, 0, 1});
  CHECK(u.basis(4 + 16) == BasisId{BasisClass::M1, 2, 0, 0});

  nlohmann::json j = u.to_json();
  CHECK(j.at("d") == 3);
  CHECK(j.at("R") == 1.0);
  CHECK(j.at("delta") == 0.5);
  CHECK(j.at("ordering_version") == kOrderingVersion);
}

TEST_CASE("dictionary rejects bad grids") {
  CHECK_THROWS_AS(build_dictionary(2, 1.0, 0.3), InputError);
  CHECK_THROWS_AS(build_dictionary(1, 1.0, 0.5), InputError);
  CHECK_THROWS_AS(build_dictionary(2, -1.0, 0.5), InputError);
  CHECK_THROWS_AS(build_dictionary(2, 1.0, 0.0), InputError);
}

TEST_CASE("grid location uses half-open cells") {
  DictionarySpec s = build_dictionary(2, 1.0, 0.5);
  CHECK(s.locate(-1.5).index == -1);
  CHECK(s.locate(-1.0).index == 0);
  CHECK(s.locate(-1.0).frac == 0.0);
  CHECK(s.locate(0.0).index == 2);
  CHECK(s.locate(0.25).frac == doctest::Approx(0.5));
  CHECK(s.locate(0.9999).index == 3);
  CHECK(s.locate(1.0).index == 4);
}

TEST_CASE("ramp and centering offsets") {
  CHECK(ramp(-1.0) == 0.0);
  CHECK(ramp(0.5) == 0.5);
  CHECK(ramp(2.0) == 1.0);
  CHECK(ramp_mean(0.0, 1.0) == doctest::Approx(0.3156268098137464).epsilon(1e-13));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  Moments m;
  for (int k = 0; k < 1000000; ++k) m.add(ramp(nd(rng)));
  CHECK(std::abs(m.mean() - ramp_mean(0.0, 1.0)) < 4 * m.se());

  DictionarySpec s = build_dictionary(2, 1.0, 1.0);
  const std::size_t m0 = s.index({BasisClass::M0, 0, 1, 0});
  CHECK(s.offset(m0) == doctest::Approx(0.3156268098137464).epsilon(1e-13));
  CHECK(s.offset(s.index({BasisClass::M2, 1, 1, 1})) == doctest::Approx(0.058193121833670355).epsilon(1e-12));
}

TEST_CASE("basis values and partials at hand-checked points") {
  DictionarySpec s = build_dictionary(2, 1.0, 1.0);
  const BasisId m0{BasisClass::M0, 0, 1, 0};  // breakpoint 0
  const double c0 = s.offset(s.index(m0));
  Contribution c = basis_eval(s, m0, point(0.5, 0.0));
  CHECK(c.coordinate == 0);
  CHECK(c.value == doctest::Approx(0.5 - c0).epsilon(1e-15));
  CHECK(basis_partials(s, m0, point(0.5, 0.0)).diag == 1.0);
  CHECK(basis_partials(s, m0, point(0.5, 0.0)).root == 0.0);

  const BasisId m1{BasisClass::M1, 1, 1, 1};
  c = basis_eval(s, m1, point(-0.3, 0.7));
  CHECK(c.coordinate == 1);
  CHECK(c.value == -s.offset(s.index(m1)));
  BasisPartials bp = basis_partials(s, m1, point(-0.3, 0.7));
  CHECK(bp.diag == 0.0);
  CHECK(bp.root == 0.0);

  const BasisId m2{BasisClass::M2, 1, 1, 1};
  c = basis_eval(s, m2, point(0.25, 0.5));
  CHECK(c.value + s.offset(s.index(m2)) == doctest::Approx(0.375).epsilon(1e-15));

  const BasisId m5{BasisClass::M5, 1, 1, 0};
  bp = basis_partials(s, m5, point(0.5, 0.2));
  CHECK(bp.root == 1.0);
  CHECK(bp.diag == 0.0);

  // gates outside the grid
  const BasisId m3{BasisClass::M3, 1, 1, 0}, m4{BasisClass::M4, 1, 1, 0};
  CHECK(basis_eval(s, m3, point(1.0, 0.5)).value + s.offset(s.index(m3)) == 0.5);
  CHECK(basis_eval(s, m3, point(0.99, 0.5)).value + s.offset(s.index(m3)) == 0.0);
  CHECK(basis_eval(s, m4, point(-1.01, 0.5)).value + s.offset(s.index(m4)) == 0.5);
  CHECK(basis_eval(s, m4, point(-1.0, 0.5)).value + s.offset(s.index(m4)) == 0.0);
}

TEST_CASE("partials agree with finite differences away from breakpoints") {
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const double h = 1e-7;
  int checked = 0;
  while (checked < 2000) {
    Vector x(3);
    for (int i = 0; i < 3; ++i) x[i] = 1.2 * nd(rng);
    bool near = false;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k <= s.cells(); ++k) near |= std::abs(x[i] - s.breakpoint(k)) < 1e-5;
    if (near) continue;
    const BasisId id = s.basis(rng() % s.size());
    const int coord = id.cls == BasisClass::M0 ? 0 : id.leaf;
    auto f = [&](const Vector& p) { return basis_eval(s, id, p).value; };
    BasisPartials bp = basis_partials(s, id, x);
    CHECK(bp.diag == doctest::Approx(testing::central_diff(f, x, coord, h)).epsilon(1e-6));
    if (coord != 0) CHECK(bp.root == doctest::Approx(testing::central_diff(f, x, 0, h)).epsilon(1e-6));
    ++checked;
  }
}

TEST_CASE("bases are nondecreasing in their own argument") {
  DictionarySpec s = build_dictionary(3, 1.5, 0.5);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 1000; ++rep) {
    const BasisId id = s.basis(rng() % s.size());
    const int coord = id.cls == BasisClass::M0 ? 0 : id.leaf;
    Vector x(3);
    for (int i = 0; i < 3; ++i) x[i] = 1.5 * nd(rng);
    Vector y = x;
    y[coord] += std::abs(nd(rng));
    CHECK(basis_eval(s, id, y).value >= basis_eval(s, id, x).value);
  }
}

TEST_CASE("centered bases have zero mean under the reference") {
  DictionarySpec s = build_dictionary(2, 1.0, 0.5);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<Moments> m(s.size());
  for (int k = 0; k < 100000; ++k) {
    Vector x(2);
    x << nd(rng), nd(rng);
    for (std::size_t j = 0; j < s.size(); ++j) m[j].add(basis_eval(s, s.basis(j), x).value);
  }
  for (std::size_t j = 0; j < s.size(); ++j) CHECK_MESSAGE(std::abs(m[j].mean()) < 4 * m[j].se() + 1e-15, j);
}

TEST_CASE("cone differential norm bound") {
  // For unit nonnegative weights on M0..M4 the Jacobian sum has spectral norm <= 3/width.
  for (double width : {1.0, 0.5}) {
    DictionarySpec s = build_dictionary(3, 1.0, width);
    const std::size_t nc = s.class_start(BasisClass::M5);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 1000; ++rep) {
      Vector lambda(nc);
      for (std::size_t k = 0; k < nc; ++k) lambda[k] = u(rng) < 0.1 ? u(rng) : 0.0;
      if (lambda.norm() == 0) lambda[rng() % nc] = 1;
      lambda /= lambda.norm();
      Vector x(3);
      for (int i = 0; i < 3; ++i) x[i] = 1.2 * nd(rng);
      Matrix m = Matrix::Zero(3, 3);
      for (std::size_t k = 0; k < nc; ++k) {
        if (lambda[k] == 0) continue;
        const int c = s.coordinate(k);
        const BasisPartials bp = basis_partials(s, s.basis(k), x);
        m(c, c) += lambda[k] * bp.diag;
        if (c != 0) m(c, 0) += lambda[k] * bp.root;
      }
      Eigen::JacobiSVD<Matrix> svd(m);
      CHECK(svd.singularValues()[0] <= 3 / width + 1e-12);
    }
  }
}

TEST_CASE("gram matrix structure and values") {
  GramOptions no_cache{""};
  DictionarySpec s1 = build_dictionary(2, 1.0, 1.0);
  GramMatrix q1 = gram_matrix(s1, no_cache);
  const std::size_t m0 = s1.index({BasisClass::M0, 0, 1, 0});
  CHECK(q1.entry(m0, m0) == doctest::Approx(0.15840899240765377).epsilon(1e-12));

  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  GramMatrix q = gram_matrix(s, no_cache);
  const Matrix dense = q.dense();
  CHECK(dense.rows() == static_cast<Eigen::Index>(s.size()));
  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  for (std::size_t k = 0; k < s.size(); k += 7)
    for (std::size_t l = 0; l < s.size(); l += 5) {
      CHECK(dense(k, l) == q.entry(k, l));
      if (s.coordinate(k) != s.coordinate(l)) CHECK(dense(k, l) == 0.0);
    }

  // disjoint root cells: only the product of the centering offsets survives
  const std::size_t a = s.index({BasisClass::M1, 1, 2, 0}), b = s.index({BasisClass::M1, 1, 1, 3});
  CHECK(q.entry(a, b) == doctest::Approx(-s.offset(a) * s.offset(b)).epsilon(1e-12));

  Eigen::SelfAdjointEigenSolver<Matrix> es(dense);
  CHECK(es.eigenvalues().minCoeff() > 0);
  CHECK(q.inverse_norm() == doctest::Approx(1 / es.eigenvalues().minCoeff()).epsilon(1e-5));

  std::mt19937_64 rng(7);
  Vector lambda = testing::normal_vector(rng, static_cast<int>(s.size()));
  CHECK((q.apply(lambda) - dense * lambda).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((q.solve(q.apply(lambda)) - lambda).norm() < 1e-6 * lambda.norm());
  CHECK(q.quadratic(lambda) == doctest::Approx(lambda.dot(dense * lambda)).epsilon(1e-12));
}

TEST_CASE("gram entries and quadratic forms match Monte Carlo") {
  DictionarySpec s = build_dictionary(3, 1.0, 0.5);
  GramMatrix q = gram_matrix(s, GramOptions{""});
  const int n = 100000;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  Matrix vals(n, s.size());
  for (int r = 0; r < n; ++r) {
    Vector x(3);
    for (int i = 0; i < 3; ++i) x[i] = nd(rng);
    for (std::size_t k = 0; k < s.size(); ++k) vals(r, k) = basis_eval(s, s.basis(k), x).value;
  }

  SUBCASE("diagonal of a root basis") {
    const std::size_t m0 = s.index({BasisClass::M0, 0, 2, 0});
    Moments m;
    for (int r = 0; r < n; ++r) m.add(vals(r, m0) * vals(r, m0));
    CHECK(std::abs(m.mean() - q.entry(m0, m0)) < 4 * m.se());
  }
  SUBCASE("fifty random entries") {
    std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
    int done = 0;
    while (done < 50) {
      const std::size_t k = pick(rng), l = pick(rng);
      if (s.coordinate(k) != s.coordinate(l)) continue;
      Moments m;
      for (int r = 0; r < n; ++r) m.add(vals(r, k) * vals(r, l));
      CHECK_MESSAGE(std::abs(m.mean() - q.entry(k, l)) < 4 * m.se() + 1e-12, k << "," << l);
      ++done;
    }
  }
  SUBCASE("quadratic form is the squared norm of the combination") {
    for (int rep = 0; rep < 20; ++rep) {
      Vector u = testing::normal_vector(rng, static_cast<int>(s.size()));
      Moments m;
      for (int r = 0; r < n; ++r) {
        Vector t = Vector::Zero(3);
        for (std::size_t k = 0; k < s.size(); ++k) t[s.coordinate(k)] += u[k] * vals(r, k);
        m.add(t.squaredNorm());
      }
      const double quad = q.quadratic(u);
      CHECK(quad >= 0);
      CHECK(std::abs(m.mean() - quad) < 4 * m.se());
    }
  }
}

TEST_CASE("gram cache round trip") {
  const auto dir = scratch_dir("gram_cache");
  DictionarySpec s = build_dictionary(2, 1.0, 0.5);
  GramMatrix fresh = gram_matrix(s, GramOptions{""});
  CHECK(std::filesystem::is_empty(dir));

  GramMatrix cached = gram_matrix(s, GramOptions{dir.string()});
  const std::string path = gram_cache_path(dir.string(), s);
  CHECK(std::filesystem::exists(path));
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "SSVIGRAM");
  CHECK(std::filesystem::file_size(path) == 16 + 8 * s.size() * s.size());

  GramMatrix again = gram_matrix(s, GramOptions{dir.string()});
  CHECK(again.dense() == fresh.dense());
  CHECK(again.inverse_norm() == cached.inverse_norm());

  Matrix root, leaf;
  double inv = 0;
  CHECK(read_gram_cache(path, s, root, leaf, inv));
  CHECK_FALSE(read_gram_cache(path, build_dictionary(2, 1.0, 0.25), root, leaf, inv));
  CHECK_FALSE(read_gram_cache((dir / "missing.bin").string(), s, root, leaf, inv));
  std::filesystem::remove_all(dir);
}
