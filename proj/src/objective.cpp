#include "ssvi/objective.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "ssvi/error.hpp"
#include "ssvi/parallel.hpp"

namespace ssvi {

SaaSample make_saa_sample(std::uint64_t seed, std::size_t n, int d) {
  if (n == 0 || d < 1) throw InputError("sample needs n >= 1 and d >= 1");
  SaaSample s;
  s.seed = seed;
  s.x.resize(static_cast<Eigen::Index>(n), d);
  auto rng = make_stream(seed, 0x5aa);
  std::normal_distribution<double> normal;
  for (Eigen::Index r = 0; r < s.x.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) s.x(r, c) = normal(rng);
  canonicalize(s);
  return s;
}

namespace {

std::vector<std::uint32_t> row_order(const RowMatrix& x) {
  std::vector<std::uint32_t> order(static_cast<std::size_t>(x.rows()));
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<std::uint32_t>(k);
  const Eigen::Index d = x.cols();
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double* ra = x.row(a).data();
    const double* rb = x.row(b).data();
    return std::lexicographical_compare(ra, ra + d, rb, rb + d);
  });
  return order;
}

}  // namespace

void canonicalize(SaaSample& sample) {
  if (sample.x.rows() > static_cast<Eigen::Index>(UINT32_MAX)) throw InputError("sample too large");
  sample.order = row_order(sample.x);
}

namespace {

/// Ramp families share one coefficient per breakpoint and are laid out
/// contiguously in the canonical order: family 0 is M0; each leaf then has
/// N rising-gate families (M1), N falling-gate families (M2), M3, M4, M5.
struct FamilyLayout {
  std::size_t n, per_leaf;
  std::vector<std::size_t> start;

  explicit FamilyLayout(const DictionarySpec& spec)
      : n(static_cast<std::size_t>(spec.cells())), per_leaf(2 * n + 3) {
    const int d = spec.dimension();
    start.push_back(0);
    const std::size_t nn = n * n;
    for (int i = 1; i < d; ++i) {
      const std::size_t l = static_cast<std::size_t>(i - 1);
      for (std::size_t j = 0; j < n; ++j) start.push_back(spec.class_start(BasisClass::M1) + l * nn + j * n);
      for (std::size_t j = 0; j < n; ++j) start.push_back(spec.class_start(BasisClass::M2) + l * nn + j * n);
      start.push_back(spec.class_start(BasisClass::M3) + l * n);
      start.push_back(spec.class_start(BasisClass::M4) + l * n);
      start.push_back(spec.class_start(BasisClass::M5) + l * n);
    }
  }
  std::size_t count() const { return start.size(); }
  std::size_t leaf(int i, std::size_t slot) const { return 1 + static_cast<std::size_t>(i - 1) * per_leaf + slot; }
};

struct ChunkSums {
  Vector grad_v;           // sum of grad V
  Vector direct;           // per-basis terms from the active cell
  Vector saturated;        // per-family suffix increments: entry k covers breakpoints m < k
};

void add_ramp(const FamilyLayout& fl, ChunkSums& acc, std::size_t family, Cell c, double weight, double g,
              double trace) {
  if (c.index < 0) return;
  if (c.index >= static_cast<int>(fl.n)) {
    acc.saturated[static_cast<Eigen::Index>(family * (fl.n + 1) + fl.n)] += weight * g;
    return;
  }
  acc.saturated[static_cast<Eigen::Index>(family * (fl.n + 1) + static_cast<std::size_t>(c.index))] += weight * g;
  acc.direct[static_cast<Eigen::Index>(fl.start[family] + static_cast<std::size_t>(c.index))] +=
      weight * (c.frac * g - trace);
}

double chunked_sum(const std::vector<double>& v) {
  // Chunked then pairwise, matching the reduction order used for the gradient.
  std::vector<double> parts(chunk_count(v.size()), 0.0);
  for (std::size_t c = 0; c < parts.size(); ++c) {
    const std::size_t e = std::min(v.size(), (c + 1) * kReductionChunk);
    double s = 0;
    for (std::size_t k = c * kReductionChunk; k < e; ++k) s += v[k];
    parts[c] = s;
  }
  return pairwise_reduce(parts, [](double& a, double b) { a += b; });
}

}  // namespace

ObjectiveEvaluation evaluate_objective(const StarMapParams& params, const DictionarySpec& spec,
                                       const TargetPotential& target, const SaaSample& sample, bool with_gradient) {
  const int d = spec.dimension();
  if (target.dimension() != d || sample.dimension() != d)
    throw InputError("target, dictionary and sample dimensions disagree");
  const StarMap map(spec, params);
  const FamilyLayout fl(spec);
  const std::size_t n = sample.size();
  const std::size_t chunks = chunk_count(n);
  const double inv_width = 1.0 / spec.width();

  std::vector<std::uint32_t> local_order;
  if (sample.order.size() != n) local_order = row_order(sample.x);
  const std::vector<std::uint32_t>& order = local_order.empty() ? sample.order : local_order;

  // pot/ent are stored by summation position, not by row.
  std::vector<double> pot(n), ent(n);
  std::vector<ChunkSums> sums(with_gradient ? chunks : 0);

  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t b = c * kReductionChunk, e = std::min(n, b + kReductionChunk);
    std::vector<double> z(d), diag(d), root_col(std::max(1, d - 1)), g(d);
    ChunkSums* acc = nullptr;
    if (with_gradient) {
      acc = &sums[c];
      acc->grad_v = Vector::Zero(d);
      acc->direct = Vector::Zero(static_cast<Eigen::Index>(spec.size()));
      acc->saturated = Vector::Zero(static_cast<Eigen::Index>(fl.count() * (fl.n + 1)));
    }
    for (std::size_t k = b; k < e; ++k) {
      const std::uint32_t row = order[k];
      const double* x = sample.x.row(static_cast<Eigen::Index>(row)).data();
      map.eval(x, z.data(), diag.data(), root_col.data());
      const double v = target.value_at(z.data());
      if (!std::isfinite(v)) throw NumericalError("target overflow at sample " + std::to_string(row));
      double ld = 0;
      for (int i = 0; i < d; ++i) {
        if (!(diag[i] > 0)) throw NumericalError("cone violation at sample " + std::to_string(row));
        ld += std::log(diag[i]);
      }
      pot[k] = v;
      ent[k] = -ld;
      if (!acc) continue;

      target.gradient_at(z.data(), g.data());
      for (int i = 0; i < d; ++i) {
        if (!std::isfinite(g[i])) throw NumericalError("target overflow at sample " + std::to_string(row));
        acc->grad_v[i] += g[i];
      }
      const Cell c0 = spec.locate(x[0]);
      add_ramp(fl, *acc, 0, c0, 1.0, g[0], inv_width / diag[0]);
      const bool inside = c0.index >= 0 && c0.index < static_cast<int>(fl.n);
      for (int i = 1; i < d; ++i) {
        const Cell ci = spec.locate(x[i]);
        const double tr = inv_width / diag[i];
        if (inside) {
          const std::size_t j = static_cast<std::size_t>(c0.index);
          add_ramp(fl, *acc, fl.leaf(i, j), ci, c0.frac, g[i], tr);
          add_ramp(fl, *acc, fl.leaf(i, fl.n + j), ci, 1.0 - c0.frac, g[i], tr);
        } else {
          add_ramp(fl, *acc, fl.leaf(i, c0.index < 0 ? 2 * fl.n + 1 : 2 * fl.n), ci, 1.0, g[i], tr);
        }
        add_ramp(fl, *acc, fl.leaf(i, 2 * fl.n + 2), c0, 1.0, g[i], 0.0);
      }
    }
  });

  ObjectiveEvaluation out;
  out.energy.potential = chunked_sum(pot) / static_cast<double>(n);
  out.energy.entropy = chunked_sum(ent) / static_cast<double>(n);
  out.energy.value = out.energy.potential + out.energy.entropy;
  {
    std::vector<double> terms(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = pot[k] + ent[k] - out.energy.value;
      terms[k] = t * t;
    }
    const double var = n > 1 ? chunked_sum(terms) / static_cast<double>(n - 1) : 0.0;
    out.energy.std_error = std::sqrt(var / static_cast<double>(n));
  }
  if (!with_gradient) return out;

  ChunkSums total = pairwise_reduce(sums, [](ChunkSums& a, const ChunkSums& b) {
    a.grad_v += b.grad_v;
    a.direct += b.direct;
    a.saturated += b.saturated;
  });
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector glam = total.direct;
  for (std::size_t f = 0; f < fl.count(); ++f) {
    double suffix = 0;
    for (std::size_t m = fl.n; m-- > 0;) {
      suffix += total.saturated[static_cast<Eigen::Index>(f * (fl.n + 1) + m + 1)];
      glam[static_cast<Eigen::Index>(fl.start[f] + m)] += suffix;
    }
  }
  out.grad.v = total.grad_v * inv_n;
  glam *= inv_n;
  for (std::size_t k = 0; k < spec.size(); ++k)
    glam[static_cast<Eigen::Index>(k)] -= spec.offset(k) * out.grad.v[spec.coordinate(k)];
  out.grad.lambda = std::move(glam);
  return out;
}

FreeEnergyReport free_energy(const StarMapParams& params, const DictionarySpec& spec, const TargetPotential& target,
                             const SaaSample& sample) {
  return evaluate_objective(params, spec, target, sample, false).energy;
}

ObjectiveGradient gradient(const StarMapParams& params, const DictionarySpec& spec, const TargetPotential& target,
                           const SaaSample& sample) {
  return evaluate_objective(params, spec, target, sample, true).grad;
}

}  // namespace ssvi
