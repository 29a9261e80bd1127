#include "ssvi/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssvi/error.hpp"

namespace ssvi {

double compute_upsilon(const RegularityConstants& c, const DictionarySpec& spec, double q_inverse_norm) {
  if (!c.big_l || !c.big_l_root) throw InputError("Upsilon needs L_V and L'_V");
  if (!(q_inverse_norm > 0)) throw InputError("Upsilon needs a positive ||Q^{-1}||");
  const double delta = spec.width();
  const double s = std::sqrt(*c.big_l_root) + (spec.dimension() - 1) * std::sqrt(*c.big_l);
  return 9.0 / (delta * delta) * s * s * q_inverse_norm;
}

double compute_upsilon(const RegularityConstants& c, const DictionarySpec& spec, const GramMatrix& q) {
  return compute_upsilon(c, spec, q.inverse_norm());
}

StepConstants step_constants(const RegularityConstants& c, const DictionarySpec& spec, const GramMatrix& q) {
  if (!c.complete()) throw InputError("step size needs all four curvature constants");
  StepConstants s;
  s.smoothness = std::max(*c.big_l, 0.5 * *c.big_l_root);
  s.upsilon = compute_upsilon(c, spec, q);
  s.step = 1.0 / (s.smoothness + s.upsilon);
  const double strong = std::min(*c.ell, *c.ell_root);
  s.kappa = strong > 0 ? (s.smoothness + s.upsilon) / strong : std::numeric_limits<double>::infinity();
  return s;
}

// ------------------------------------------------------ updatable factor

void UpdatableCholesky::reset(const std::vector<int>& free) {
  const Eigen::Index n = q_->rows();
  position_.assign(static_cast<std::size_t>(n), -1);
  order_ = free;
  const Eigen::Index m = static_cast<Eigen::Index>(free.size());
  Matrix sub(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    position_[static_cast<std::size_t>(free[a])] = static_cast<int>(a);
    for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = (*q_)(free[a], free[b]);
  }
  Eigen::LLT<Matrix> llt(sub);
  ok_ = llt.info() == Eigen::Success;
  l_ = llt.matrixL();
  updates_ = 0;
}

bool UpdatableCholesky::append(int index) {
  const Eigen::Index m = static_cast<Eigen::Index>(order_.size());
  Vector col(m);
  for (Eigen::Index a = 0; a < m; ++a) col[a] = (*q_)(order_[a], index);
  Vector row = m ? Vector(l_.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(col)) : Vector();
  const double s2 = (*q_)(index, index) - row.squaredNorm();
  if (!(s2 > 0)) return ok_ = false;
  if (l_.rows() < m + 1) {
    Matrix grown = Matrix::Zero(std::max<Eigen::Index>(2 * m, m + 8), std::max<Eigen::Index>(2 * m, m + 8));
    grown.topLeftCorner(m, m) = l_.topLeftCorner(m, m);
    l_.swap(grown);
  }
  l_.row(m).head(m) = row.transpose();
  l_(m, m) = std::sqrt(s2);
  l_.col(m).tail(l_.rows() - m - 1).setZero();
  order_.push_back(index);
  position_[static_cast<std::size_t>(index)] = static_cast<int>(m);
  ++updates_;
  return true;
}

void UpdatableCholesky::remove(int index) {
  const int k = position_[static_cast<std::size_t>(index)];
  if (k < 0) return;
  const Eigen::Index m = static_cast<Eigen::Index>(order_.size());
  // Drop row/column k, then fold the removed column into the trailing block
  // with a rank-one Cholesky update.
  Vector x = l_.col(k).segment(k + 1, m - k - 1);
  for (Eigen::Index c = 0; c + 1 < m; ++c) {
    const Eigen::Index sc = c + (c >= k);
    for (Eigen::Index r = std::max<Eigen::Index>(c, k); r + 1 < m; ++r) l_(r, c) = l_(r + 1, sc);
  }
  // After the shifts the trailing block occupies [k, m-1) and needs L L' += x x'.
  for (Eigen::Index t = 0; t < m - k - 1; ++t) {
    const Eigen::Index c = k + t;
    const double lcc = l_(c, c);
    const double r = std::hypot(lcc, x[t]);
    const double cs = r / lcc, sn = x[t] / lcc;
    l_(c, c) = r;
    for (Eigen::Index i = t + 1; i < m - k - 1; ++i) {
      const Eigen::Index row = k + i;
      l_(row, c) = (l_(row, c) + sn * x[i]) / cs;
      x[i] = cs * x[i] - sn * l_(row, c);
    }
  }
  order_.erase(order_.begin() + k);
  position_[static_cast<std::size_t>(index)] = -1;
  for (std::size_t a = static_cast<std::size_t>(k); a < order_.size(); ++a)
    position_[static_cast<std::size_t>(order_[a])] = static_cast<int>(a);
  ++updates_;
}

Vector UpdatableCholesky::solve(const Vector& rhs) const {
  const Eigen::Index m = static_cast<Eigen::Index>(order_.size());
  Vector out = Vector::Zero(q_->rows());
  if (m == 0) return out;
  Vector b(m);
  for (Eigen::Index a = 0; a < m; ++a) b[a] = rhs[order_[a]];
  l_.topLeftCorner(m, m).triangularView<Eigen::Lower>().solveInPlace(b);
  l_.topLeftCorner(m, m).transpose().triangularView<Eigen::Upper>().solveInPlace(b);
  for (Eigen::Index a = 0; a < m; ++a) out[order_[a]] = b[a];
  return out;
}

// ------------------------------------------------------------- box QP

BoxQpSolver::BoxQpSolver(std::shared_ptr<const Matrix> q, std::vector<char> constrained, double tolerance)
    : q_(std::move(q)), constrained_(std::move(constrained)), tol_(tolerance), factor_(q_) {
  if (!q_ || q_->rows() != q_->cols()) throw InputError("QP matrix must be square");
  if (static_cast<Eigen::Index>(constrained_.size()) != q_->rows()) throw InputError("constraint mask size mismatch");
  active_ = constrained_;  // matches the usual start at lambda = 0
}

bool BoxQpSolver::sync_factor(const std::vector<char>& active) {
  const Eigen::Index n = q_->rows();
  std::vector<int> leave, enter;
  if (factor_.ok()) {
    std::vector<char> in_factor(static_cast<std::size_t>(n), 0);
    for (int i : factor_.order()) in_factor[static_cast<std::size_t>(i)] = 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t u = static_cast<std::size_t>(i);
      if (in_factor[u] && active[u]) leave.push_back(static_cast<int>(i));
      if (!in_factor[u] && !active[u]) enter.push_back(static_cast<int>(i));
    }
  }
  const std::size_t changes = leave.size() + enter.size();
  const bool rebuild = !factor_.ok() || factor_.updates() > 400 || changes > 64 ||
                       changes * 4 > factor_.order().size() + 16;
  if (!rebuild) {
    for (int i : leave) factor_.remove(i);
    for (int i : enter)
      if (!factor_.append(i)) break;
    if (factor_.ok()) return true;
  }
  std::vector<int> free;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!active[static_cast<std::size_t>(i)]) free.push_back(static_cast<int>(i));
  factor_.reset(free);
  return factor_.ok();
}

double BoxQpSolver::kkt(const Vector& theta, const Vector& linear) const {
  return kkt(theta, linear, (*q_) * theta);
}

double BoxQpSolver::kkt(const Vector& theta, const Vector& linear, const Vector& q_theta) const {
  const Vector g = q_theta - linear;
  double worst = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    double r;
    if (!constrained_[static_cast<std::size_t>(i)] || theta[i] > 0)
      r = std::abs(g[i]);
    else if (theta[i] == 0)
      r = std::max(0.0, -g[i]);
    else
      r = std::max(-theta[i], std::abs(g[i]));
    worst = std::max(worst, r);
  }
  return worst / (1.0 + linear.cwiseAbs().maxCoeff());
}

ProjectionResult BoxQpSolver::solve(const Vector& linear) {
  const Eigen::Index n = q_->rows();
  if (linear.size() != n) throw InputError("QP vector size mismatch");
  ProjectionResult res;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) factor_.reset({});  // drift guard: refactor from scratch once
    for (int it = 1; it <= 100; ++it) {
      res.iterations = it;
      if (!sync_factor(active_)) break;
      Vector theta = factor_.solve(linear);
      // Q theta through the free columns only.
      Vector q_theta = Vector::Zero(n);
      for (int j : factor_.order()) q_theta.noalias() += theta[j] * q_->col(j);
      bool changed = false;
      std::vector<char> next(active_.size(), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t u = static_cast<std::size_t>(i);
        if (!constrained_[u]) continue;
        next[u] = active_[u] ? q_theta[i] - linear[i] > 0 : theta[i] < 0;
        changed |= next[u] != active_[u];
      }
      if (!changed) {
        res.kkt_residual = kkt(theta, linear, q_theta);
        res.point = std::move(theta);
        res.q_point = std::move(q_theta);
        if (res.kkt_residual <= tol_) return res;
        break;
      }
      active_ = std::move(next);
    }
  }
  res = primal_active_set(linear);
  res.used_fallback = true;
  return res;
}

ProjectionResult BoxQpSolver::primal_active_set(const Vector& linear) {
  const Eigen::Index n = q_->rows();
  std::vector<char> working(constrained_.begin(), constrained_.end());
  auto solve_on = [&](const std::vector<char>& w) {
    std::vector<int> free;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!w[static_cast<std::size_t>(i)]) free.push_back(static_cast<int>(i));
    factor_.reset(free);
    if (!factor_.ok()) throw NumericalError("projection: free block is not positive definite");
    return factor_.solve(linear);
  };
  Vector theta = solve_on(working);
  const double scale = 1.0 + linear.cwiseAbs().maxCoeff();
  ProjectionResult res;
  const int cap = static_cast<int>(10 * n + 100);
  for (int it = 1; it <= cap; ++it) {
    res.iterations = it;
    const Vector cand = solve_on(working);
    double step = 1.0;
    int block = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t u = static_cast<std::size_t>(i);
      if (!working[u] && constrained_[u] && cand[i] < 0) {
        const double t = theta[i] / (theta[i] - cand[i]);
        if (t < step) {
          step = t;
          block = static_cast<int>(i);
        }
      }
    }
    if (block < 0) {
      theta = cand;
      const Vector g = (*q_) * theta - linear;
      int release = -1;
      double worst = -tol_ * scale;
      for (Eigen::Index i = 0; i < n; ++i)
        if (working[static_cast<std::size_t>(i)] && g[i] < worst) {
          worst = g[i];
          release = static_cast<int>(i);
        }
      if (release < 0) {
        active_ = working;
        res.point = theta;
        res.q_point = (*q_) * theta;
        res.kkt_residual = kkt(theta, linear);
        if (res.kkt_residual > tol_)
          throw NumericalError("projection did not reach KKT tolerance (residual " + std::to_string(res.kkt_residual) + ")");
        return res;
      }
      working[static_cast<std::size_t>(release)] = 0;
    } else {
      theta += step * (cand - theta);
      theta[block] = 0;
      working[static_cast<std::size_t>(block)] = 1;
    }
  }
  throw NumericalError("projection active-set iteration cap reached (KKT residual " +
                       std::to_string(kkt(theta, linear)) + ")");
}

ProjectionResult BoxQpSolver::project(const Vector& z) {
  if (z.size() != q_->rows()) throw InputError("QP vector size mismatch");
  bool feasible = true;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (constrained_[static_cast<std::size_t>(i)] && z[i] < 0) feasible = false;
  if (feasible) {
    ProjectionResult r;
    r.point = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) active_[static_cast<std::size_t>(i)] = constrained_[static_cast<std::size_t>(i)] && z[i] == 0;
    return r;
  }
  return solve((*q_) * z);
}

Vector project_cone_q(const Vector& zpoint, const Matrix& q, const std::vector<char>& constrained, double tolerance) {
  const Eigen::Index p = q.rows();
  if (zpoint.size() < p) throw InputError("point shorter than the Gram matrix");
  BoxQpSolver solver(std::make_shared<const Matrix>(q), constrained, tolerance);
  Vector out = zpoint;
  out.head(p) = solver.project(zpoint.head(p)).point;
  return out;
}

ConeProjector::ConeProjector(const DictionarySpec& spec, const GramMatrix& q, double tolerance) : spec_(spec), q_(q) {
  const int n = spec.cells();
  root_ = std::make_unique<BoxQpSolver>(std::make_shared<const Matrix>(q.root_block()), std::vector<char>(n, 1), tolerance);
  auto leaf = std::make_shared<const Matrix>(q.leaf_block());
  std::vector<char> mask(spec.leaf_block_size(), 1);
  std::fill(mask.end() - n, mask.end(), 0);  // M5 coefficients are sign free
  for (int i = 1; i < spec.dimension(); ++i) leaves_.push_back(std::make_unique<BoxQpSolver>(leaf, mask, tolerance));
}

ProjectionResult ConeProjector::project_linear(const Vector& q_z) {
  const int n = spec_.cells();
  ProjectionResult out;
  out.point.resize(q_z.size());
  out.q_point.resize(q_z.size());
  auto merge = [&](const ProjectionResult& r) {
    out.kkt_residual = std::max(out.kkt_residual, r.kkt_residual);
    out.iterations = std::max(out.iterations, r.iterations);
    out.used_fallback |= r.used_fallback;
  };
  ProjectionResult r = root_->solve(q_z.head(n));
  out.point.head(n) = r.point;
  out.q_point.head(n) = r.q_point;
  merge(r);
  const Matrix cols = spec_.gather_leaves(q_z);
  Matrix sol(cols.rows(), cols.cols()), qsol(cols.rows(), cols.cols());
  for (int i = 1; i < spec_.dimension(); ++i) {
    ProjectionResult ri = leaves_[static_cast<std::size_t>(i - 1)]->solve(cols.col(i - 1));
    sol.col(i - 1) = ri.point;
    qsol.col(i - 1) = ri.q_point;
    merge(ri);
  }
  spec_.scatter_leaves(sol, out.point);
  spec_.scatter_leaves(qsol, out.q_point);
  // Exact feasibility for the constrained classes.
  const auto m5 = static_cast<Eigen::Index>(spec_.class_start(BasisClass::M5));
  out.point.head(m5) = out.point.head(m5).cwiseMax(0.0);
  return out;
}

// ------------------------------------------------------------------ PGD

Vector map_point(const TargetPotential& target, const Vector& start, int max_iter) {
  const int d = target.dimension();
  if (start.size() != d) throw InputError("start point has wrong length");
  Vector x = start;
  double f = target.value(x);
  if (!std::isfinite(f)) throw NumericalError("potential is not finite at the Newton start");
  for (int it = 0; it < max_iter; ++it) {
    const Vector g = target.gradient(x);
    if (g.cwiseAbs().maxCoeff() < 1e-12) break;
    Matrix h(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) h(i, j) = h(j, i) = target.hessian_at(x.data(), i, j);
    Vector dir;
    Eigen::LLT<Matrix> llt(h);
    for (double damp = 1e-10; llt.info() != Eigen::Success && damp < 1e12; damp *= 10)
      llt.compute(h + damp * std::max(1.0, h.cwiseAbs().maxCoeff()) * Matrix::Identity(d, d));
    dir = llt.info() == Eigen::Success ? Vector(-llt.solve(g)) : Vector(-g);
    const double slope = g.dot(dir);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      const Vector trial = x + t * dir;
      const double ft = target.value(trial);
      if (std::isfinite(ft) && ft <= f + 1e-4 * t * slope) {
        x = trial;
        f = ft;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return x;
}

StarMapParams default_init(const TargetPotential& target, const DictionarySpec& spec, const Vector& alpha) {
  return spike_params(spec, alpha, map_point(target, Vector::Zero(target.dimension())));
}

double theta_distance_squared(const StarMapParams& a, const StarMapParams& b, const GramMatrix& q) {
  const Vector dl = a.lambda - b.lambda;
  return q.quadratic(dl) + (a.v - b.v).squaredNorm();
}

FitResult run_pgd(const TargetPotential& target, const DictionarySpec& spec, const GramMatrix& q,
                  const PgdConfig& config, const RegularityConstants& constants, const StarMapParams& init) {
  const SaaSample sample = make_saa_sample(config.seed, config.n_samples, spec.dimension());
  return run_pgd(target, spec, q, config, constants, init, sample);
}

FitResult run_pgd(const TargetPotential& target, const DictionarySpec& spec, const GramMatrix& q,
                  const PgdConfig& config, const RegularityConstants& constants, const StarMapParams& init,
                  const SaaSample& frozen) {
  if (!admissible(init, spec)) throw InputError("initial parameters are not admissible");
  if (q.size() != spec.size()) throw InputError("Gram matrix does not match the dictionary");
  if (config.max_iterations < 0 || !(config.tolerance >= 0)) throw InputError("invalid optimizer limits");
  double h = config.step_size ? *config.step_size : step_constants(constants, spec, q).step;
  if (!(h > 0) || !std::isfinite(h)) throw InputError("step size must be positive");

  FitResult res;
  res.params = init;
  res.initial_step = h;
  ConeProjector projector(spec, q, config.projection_tolerance);

  SaaSample fresh;
  const SaaSample* sample = &frozen;
  ObjectiveEvaluation cur = evaluate_objective(res.params, spec, target, *sample, true);
  res.initial_free_energy = cur.energy.value;
  Vector q_lambda = q.apply(res.params.lambda);
  res.termination = "max_iterations";

  for (int t = 1; t <= config.max_iterations; ++t) {
    if (config.fresh_batches) {
      fresh = make_saa_sample(config.seed + static_cast<std::uint64_t>(t), config.n_samples, spec.dimension());
      sample = &fresh;
      cur = evaluate_objective(res.params, spec, target, *sample, true);
    }
    int halvings = 0;
    StarMapParams next = res.params;
    ObjectiveEvaluation trial;
    Vector q_next;
    while (true) {
      ProjectionResult pr = projector.project_linear(q_lambda - h * cur.grad.lambda);
      if (pr.kkt_residual > config.projection_tolerance)
        throw NumericalError("projection KKT residual " + std::to_string(pr.kkt_residual) + " above tolerance");
      next.lambda = std::move(pr.point);
      q_next = std::move(pr.q_point);
      next.v = res.params.v - h * cur.grad.v;
      try {
        trial = evaluate_objective(next, spec, target, *sample, true);
      } catch (const NumericalError& e) {
        res.termination = "target_overflow";
        res.message = e.what();
        res.final_step = h;
        res.std_error = cur.energy.std_error;
        return res;
      }
      if (config.fresh_batches ||
          trial.energy.value <= cur.energy.value + config.descent_slack)
        break;
      if (halvings == config.max_halvings) {
        res.termination = "stalled";
        res.message = "no descent after " + std::to_string(halvings) + " step halvings";
        res.final_step = h;
        res.std_error = cur.energy.std_error;
        return res;
      }
      h *= 0.5;
      ++halvings;
    }
    const Vector dl = next.lambda - res.params.lambda;
    const double sq = std::max(0.0, dl.dot(q_next - q_lambda)) + (next.v - res.params.v).squaredNorm();
    const double gnorm = std::sqrt(sq) / h;

    res.params = std::move(next);
    cur = std::move(trial);
    q_lambda = q_next;
    res.iterations = t;
    res.free_energy.push_back(cur.energy.value);
    res.grad_theta_norm.push_back(gnorm);
    res.step_halvings.push_back(halvings);
    if (gnorm <= config.tolerance) {
      res.termination = "tolerance";
      break;
    }
  }
  res.final_step = h;
  res.std_error = cur.energy.std_error;
  return res;
}

}  // namespace ssvi
