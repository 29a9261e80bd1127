#include "ssvi/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json_util.hpp"
#include "ssvi/error.hpp"
#include "ssvi/oracle.hpp"
#include "ssvi/version.hpp"

namespace ssvi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json stamp(json j) {
  j["tool_version"] = kToolVersion;
  j["ordering_version"] = kOrderingVersion;
  return j;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + file.string());
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

/// CSV with a version comment line, then a header row.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& columns) {
    text_ << "# tool_version=" << kToolVersion << " ordering_version=" << kOrderingVersion << "\n";
    row(columns);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) text_ << (k ? "," : "") << cells[k];
    text_ << "\n";
  }
  void save(const fs::path& file) const { write_text(file, text_.str()); }

 private:
  std::ostringstream text_;
};

fs::path prepare_output(const ExperimentConfig& cfg) {
  fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

const GaussianTarget& require_gaussian(const ExperimentConfig& cfg, const char* command) {
  const auto* g = dynamic_cast<const GaussianTarget*>(cfg.target.get());
  if (!g) throw ConfigError("target.family", std::string(command) + " needs a gaussian target");
  return *g;
}

DictionarySpec make_spec(int d, double radius, double width, const std::string& path) {
  try {
    return build_dictionary(d, radius, width);
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
}

DictionarySpec config_spec(const ExperimentConfig& cfg) {
  if (!cfg.radius || !cfg.width) throw ConfigError("dictionary", "missing R or delta");
  return make_spec(cfg.target->dimension(), *cfg.radius, *cfg.width, "dictionary.delta");
}

RegularityConstants config_constants(const ExperimentConfig& cfg, const TargetPotential& target) {
  return regularity_constants(target, cfg.constant_overrides);
}

Vector config_alpha(const ExperimentConfig& cfg, const RegularityConstants& c, int d) {
  if (cfg.alpha) {
    if (cfg.alpha->size() != d) throw ConfigError("optimizer.alpha", "length must equal the target dimension");
    return *cfg.alpha;
  }
  try {
    return spike_vector(d, c);
  } catch (const InputError& e) {
    throw ConfigError("target.constants", std::string(e.what()) + " (supply overrides or optimizer.alpha)");
  }
}

struct FitRun {
  DictionarySpec spec;
  FitResult result;
  RegularityConstants constants;
  double runtime_ms = 0;
  double gram_ms = 0;
};

FitRun fit_target(const ExperimentConfig& cfg, const TargetPotential& target, const DictionarySpec& spec,
                  const GramOptions& gram_options) {
  const auto start = Clock::now();
  FitRun run{spec, {}, config_constants(cfg, target)};
  const Vector alpha = config_alpha(cfg, run.constants, spec.dimension());
  const GramMatrix q = gram_matrix(spec, gram_options);
  run.gram_ms = elapsed_ms(start);
  const StarMapParams init = default_init(target, spec, alpha);
  run.result = run_pgd(target, spec, q, cfg.pgd, run.constants, init);
  run.runtime_ms = elapsed_ms(start);
  return run;
}

void write_trace(const fs::path& file, const FitResult& r) {
  CsvWriter csv({"iter", "free_energy", "grad_theta_norm", "step_halvings"});
  for (std::size_t t = 0; t < r.free_energy.size(); ++t)
    csv.row({std::to_string(t + 1), num(r.free_energy[t]), num(r.grad_theta_norm[t]), std::to_string(r.step_halvings[t])});
  csv.save(file);
}

StarMapParams load_params(const ExperimentConfig& cfg, const DictionarySpec& spec) {
  fs::path file(cfg.params_path);
  if (file.is_relative()) file = fs::path(cfg.base_dir) / file;
  std::ifstream in(file);
  if (!in) throw ConfigError("diagnostics.params", "cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("diagnostics.params", e.what());
  }
  SavedMap saved = params_from_json(j);
  if (saved.spec.dimension() != spec.dimension() || saved.spec.radius() != spec.radius() ||
      saved.spec.width() != spec.width())
    throw ConfigError("diagnostics.params", "saved dictionary differs from the config dictionary");
  return saved.params;
}

/// Equicorrelated covariance for the bench sweep.
Matrix equicorrelation(int d, double rho) {
  Matrix s = Matrix::Constant(d, d, rho);
  s.diagonal().setOnes();
  return s;
}

}  // namespace

// ------------------------------------------------------------------ config

ExperimentConfig parse_config(const json& j, const std::string& base_dir, const CliOverrides& ov) {
  using namespace detail;
  require_keys(j, {"target", "dictionary", "optimizer", "diagnostics", "bench", "output_dir", "seed"}, "");
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;

  cfg.target_json = require(j, "target", "");
  cfg.target = target_from_json(cfg.target_json, base_dir);
  if (cfg.target_json.contains("constants")) cfg.constant_overrides = overrides_from_json(cfg.target_json.at("constants"));
  const int d = cfg.target->dimension();

  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      throw ConfigError("seed", "expected a nonnegative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  if (ov.seed) cfg.seed = *ov.seed;
  if (j.contains("output_dir")) cfg.output_dir = get_string(j, "output_dir", "");
  if (ov.out) cfg.output_dir = *ov.out;

  if (j.contains("dictionary")) {
    const json& dj = j.at("dictionary");
    require_keys(dj, {"R", "delta"}, "dictionary");
    cfg.radius = get_double(dj, "R", "dictionary");
    cfg.width = get_double(dj, "delta", "dictionary");
    make_spec(d, *cfg.radius, *cfg.width, "dictionary.delta");
  }

  cfg.pgd.seed = cfg.seed;
  if (j.contains("optimizer")) {
    const json& oj = j.at("optimizer");
    const std::string p = "optimizer";
    require_keys(oj, {"step_size", "max_iterations", "tolerance", "projection_tolerance", "max_halvings",
                      "descent_slack", "n_samples", "fresh_batches", "alpha"},
                 p);
    cfg.pgd.step_size = get_optional_double(oj, "step_size", p);
    if (cfg.pgd.step_size && !(*cfg.pgd.step_size > 0)) throw ConfigError("optimizer.step_size", "must be positive");
    auto positive_int = [&](const char* key, long long fallback) {
      if (!oj.contains(key)) return fallback;
      const long long v = get_int(oj, key, p);
      if (v < 0) throw ConfigError(join_path(p, key), "must be nonnegative");
      return v;
    };
    cfg.pgd.max_iterations = static_cast<int>(positive_int("max_iterations", cfg.pgd.max_iterations));
    cfg.pgd.max_halvings = static_cast<int>(positive_int("max_halvings", cfg.pgd.max_halvings));
    cfg.pgd.n_samples = static_cast<std::size_t>(positive_int("n_samples", static_cast<long long>(cfg.pgd.n_samples)));
    if (cfg.pgd.n_samples == 0) throw ConfigError("optimizer.n_samples", "must be positive");
    if (auto v = get_optional_double(oj, "tolerance", p)) cfg.pgd.tolerance = *v;
    if (auto v = get_optional_double(oj, "projection_tolerance", p)) cfg.pgd.projection_tolerance = *v;
    if (auto v = get_optional_double(oj, "descent_slack", p)) cfg.pgd.descent_slack = *v;
    if (!(cfg.pgd.tolerance >= 0)) throw ConfigError("optimizer.tolerance", "must be nonnegative");
    if (!(cfg.pgd.projection_tolerance > 0)) throw ConfigError("optimizer.projection_tolerance", "must be positive");
    cfg.pgd.fresh_batches = get_bool(oj, "fresh_batches", p, false);
    if (oj.contains("alpha")) {
      cfg.alpha = to_vector(oj.at("alpha"), "optimizer.alpha");
      if (cfg.alpha->size() != d || !(cfg.alpha->array() > 0).all())
        throw ConfigError("optimizer.alpha", "needs d positive entries");
    }
  }

  cfg.residual.seed = cfg.seed;
  if (j.contains("diagnostics")) {
    const json& gj = j.at("diagnostics");
    const std::string p = "diagnostics";
    require_keys(gj, {"root_points", "leaf_points", "mc_n", "fd_step", "source", "params"}, p);
    if (gj.contains("root_points")) cfg.residual.root_points = static_cast<int>(get_int(gj, "root_points", p));
    if (gj.contains("leaf_points")) cfg.residual.leaf_points = static_cast<int>(get_int(gj, "leaf_points", p));
    if (cfg.residual.root_points < 1) throw ConfigError("diagnostics.root_points", "must be positive");
    if (cfg.residual.leaf_points < 1) throw ConfigError("diagnostics.leaf_points", "must be positive");
    if (gj.contains("mc_n")) {
      const long long n = get_int(gj, "mc_n", p);
      if (n < 100) throw ConfigError("diagnostics.mc_n", "must be at least 100");
      cfg.mc_n = static_cast<std::size_t>(n);
    }
    if (auto v = get_optional_double(gj, "fd_step", p)) {
      if (!(*v > 0)) throw ConfigError("diagnostics.fd_step", "must be positive");
      cfg.residual.fd_step = *v;
    }
    if (gj.contains("source")) {
      cfg.source = get_string(gj, "source", p);
      if (cfg.source != "fit" && cfg.source != "oracle" && cfg.source != "params")
        throw ConfigError("diagnostics.source", "expected fit, oracle or params");
    }
    if (gj.contains("params")) cfg.params_path = get_string(gj, "params", p);
    if (cfg.source == "oracle" && !dynamic_cast<const GaussianTarget*>(cfg.target.get()))
      throw ConfigError("diagnostics.source", "oracle needs a gaussian target");
    if (cfg.source == "params" && cfg.params_path.empty())
      throw ConfigError("diagnostics.params", "required when source is params");
  }
  if (ov.mc_samples) {
    if (*ov.mc_samples < 100) throw ConfigError("--mc-samples", "must be at least 100");
    cfg.mc_n = *ov.mc_samples;
  }
  cfg.residual.mc_n = cfg.mc_n;

  if (j.contains("bench")) {
    const json& bj = j.at("bench");
    require_keys(bj, {"dims", "deltas", "rho"}, "bench");
    if (bj.contains("dims")) {
      const json& dims = bj.at("dims");
      if (!dims.is_array() || dims.empty()) throw ConfigError("bench.dims", "expected a nonempty array");
      cfg.bench.dims.clear();
      for (std::size_t k = 0; k < dims.size(); ++k) {
        if (!dims[k].is_number_integer() || dims[k].get<int>() < 2)
          throw ConfigError("bench.dims[" + std::to_string(k) + "]", "expected an integer >= 2");
        cfg.bench.dims.push_back(dims[k].get<int>());
      }
    }
    if (bj.contains("deltas")) {
      const Vector dv = to_vector(bj.at("deltas"), "bench.deltas");
      if (dv.size() == 0) throw ConfigError("bench.deltas", "expected a nonempty array");
      cfg.bench.deltas.assign(dv.data(), dv.data() + dv.size());
    }
    if (auto v = get_optional_double(bj, "rho", "bench")) cfg.bench.rho = *v;
    if (!cfg.radius) throw ConfigError("dictionary.R", "bench needs dictionary.R");
    for (std::size_t k = 0; k < cfg.bench.deltas.size(); ++k)
      make_spec(2, *cfg.radius, cfg.bench.deltas[k], "bench.deltas[" + std::to_string(k) + "]");
    for (int dd : cfg.bench.dims)
      if (!(cfg.bench.rho > -1.0 / (dd - 1) && cfg.bench.rho < 1)) throw ConfigError("bench.rho", "covariance not positive definite");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const CliOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  // A bare target block is accepted for oracle-gaussian.
  if (j.is_object() && j.contains("family")) j = json{{"target", j}};
  const fs::path base = fs::path(path).parent_path();
  return parse_config(j, base.empty() ? "." : base.string(), overrides);
}

// ---------------------------------------------------------------- commands

int cmd_fit(const ExperimentConfig& cfg, std::ostream& err) {
  const DictionarySpec spec = config_spec(cfg);
  const FitRun run = fit_target(cfg, *cfg.target, spec, GramOptions{});
  const fs::path dir = prepare_output(cfg);
  const FitResult& r = run.result;
  write_json(dir / "params.json", params_to_json(r.params, spec));
  write_trace(dir / "trace.csv", r);
  json summary = {{"final_free_energy", r.free_energy.empty() ? r.initial_free_energy : r.free_energy.back()},
                  {"initial_free_energy", r.initial_free_energy},
                  {"free_energy_std_error", r.std_error},
                  {"iters", r.iterations},
                  {"termination", r.termination},
                  {"message", r.message},
                  {"initial_step", r.initial_step},
                  {"final_step", r.final_step},
                  {"runtime_ms", run.runtime_ms},
                  {"dict_size", spec.size()},
                  {"n_samples", cfg.pgd.n_samples},
                  {"seed", cfg.seed}};
  write_json(dir / "summary.json", stamp(summary));
  if (r.termination == "target_overflow") {
    err << "fit aborted: " << r.message << " (last good iterate written)\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_oracle_gaussian(const ExperimentConfig& cfg, std::ostream&) {
  const GaussianTarget& g = require_gaussian(cfg, "oracle-gaussian");
  const SsviGaussian star = ssvi_gaussian(g.mean(), g.cov());
  const GaussianDist mf = mfvi_gaussian(g.mean(), g.cov());
  const GaussianDist tgt{g.mean(), g.cov()};
  json out = {{"ssvi_mean", detail::from_vector(star.dist.mean)},
              {"ssvi_cov", detail::from_matrix(star.dist.cov)},
              {"ssvi_cov_min_eigenvalue", star.min_eigenvalue},
              {"mfvi_cov", detail::from_matrix(mf.cov)},
              {"kl_ssvi", kl_gaussians(star.dist, tgt)},
              {"kl_mfvi", kl_gaussians(mf, tgt)},
              {"gap", ssvi_mfvi_gap(g.cov())}};
  write_json(prepare_output(cfg) / "oracle.json", stamp(out));
  return kExitOk;
}

int cmd_diagnose(const ExperimentConfig& cfg, std::ostream&) {
  const DictionarySpec spec = config_spec(cfg);
  const TargetPotential& target = *cfg.target;
  const RegularityConstants constants = config_constants(cfg, target);
  StarMapParams params;
  if (cfg.source == "fit") {
    params = fit_target(cfg, target, spec, GramOptions{}).result.params;
  } else if (cfg.source == "oracle") {
    const GaussianTarget& g = require_gaussian(cfg, "diagnostics.source = oracle");
    params = build_oracle_approximator(closed_form_star_map(g.mean(), g.cov()), spec,
                                       config_alpha(cfg, constants, spec.dimension()));
  } else {
    params = load_params(cfg, spec);
  }
  const fs::path dir = prepare_output(cfg);

  const ResidualReport res = self_consistency_residual(params, spec, target, cfg.residual);
  write_json(dir / "residuals.json", stamp(res.to_json()));
  CsvWriter rcsv({"equation", "z0", "zi", "log_density_slope", "conditional_mean", "residual", "std_error",
                  "normalized", "z_score", "stochastic"});
  for (const ResidualPoint& p : res.points)
    rcsv.row({std::to_string(p.equation), num(p.z0), num(p.zi), num(p.log_density_slope), num(p.conditional_mean),
              num(p.residual), num(p.std_error), num(p.normalized), num(p.z_score), p.stochastic ? "1" : "0"});
  rcsv.save(dir / "residuals.csv");

  const auto* gauss = dynamic_cast<const GaussianTarget*>(&target);
  const BoundCertificate fitted = approximation_bound(params, spec, target, constants, cfg.mc_n, cfg.seed);
  json bound = {{"fitted_map", fitted.to_json()}};
  std::optional<BoundCertificate> exact;
  if (gauss) {
    exact = approximation_bound(*gauss, constants, cfg.mc_n, cfg.seed);
    bound["closed_form"] = exact->to_json();
  }
  write_json(dir / "bound.json", stamp(bound));
  CsvWriter bcsv({"source", "i", "j", "mean_square", "std_error"});
  for (const PairTerm& t : fitted.terms)
    bcsv.row({"fitted_map", std::to_string(t.i), std::to_string(t.j), num(t.mean_square.value), num(t.mean_square.std_error)});
  if (exact)
    for (const PairTerm& t : exact->terms)
      bcsv.row({"closed_form", std::to_string(t.i), std::to_string(t.j), num(t.mean_square.value),
                num(t.mean_square.std_error)});
  bcsv.save(dir / "bound_terms.csv");

  const StarMap map(spec, params);
  json moments = pushforward_moments(map, cfg.mc_n, cfg.seed).to_json();
  if (gauss) {
    const Estimate dist = l2_map_distance(map, closed_form_star_map(gauss->mean(), gauss->cov()), cfg.mc_n, cfg.seed);
    moments["l2_distance_to_closed_form"] = dist.value;
    moments["l2_distance_std_error"] = dist.std_error;
    moments["ssvi_cov"] = detail::from_matrix(ssvi_gaussian(gauss->mean(), gauss->cov()).dist.cov);
  }
  write_json(dir / "moments.json", stamp(moments));
  return kExitOk;
}

int cmd_compare(const ExperimentConfig& cfg, std::ostream& err) {
  const GaussianTarget& g = require_gaussian(cfg, "compare");
  const DictionarySpec spec = config_spec(cfg);
  const FitRun run = fit_target(cfg, g, spec, GramOptions{});
  const GaussianDist tgt{g.mean(), g.cov()};
  const double kl_ssvi = kl_gaussians(ssvi_gaussian(g.mean(), g.cov()).dist, tgt);
  const double kl_mfvi = kl_gaussians(mfvi_gaussian(g.mean(), g.cov()), tgt);
  const double gap = ssvi_mfvi_gap(g.cov());
  // KL(T#rho || pi) = F + log Z - d(1 + log 2 pi)/2 with log Z = d log(2 pi)/2 + log det(cov)/2.
  const int d = g.dimension();
  const double log_det_cov = 2 * Matrix(g.cov().llt().matrixL()).diagonal().array().log().sum();
  const FitResult& r = run.result;
  const double fitted_f = r.free_energy.empty() ? r.initial_free_energy : r.free_energy.back();
  const double kl_fit = fitted_f + 0.5 * log_det_cov - 0.5 * d;
  json out = {{"kl_ssvi_fit_free_energy_gap", kl_fit - kl_ssvi},
              {"kl_ssvi_fit", kl_fit},
              {"kl_ssvi_exact", kl_ssvi},
              {"kl_mfvi_exact", kl_mfvi},
              {"gap_exact", gap},
              {"gap_identity_residual", std::abs(gap - (kl_ssvi - kl_mfvi))},
              {"fit_free_energy", fitted_f},
              {"fit_free_energy_std_error", r.std_error},
              {"fit_iters", r.iterations},
              {"fit_termination", r.termination}};
  write_json(prepare_output(cfg) / "compare.json", stamp(out));
  if (r.termination == "target_overflow") {
    err << "fit aborted: " << r.message << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_bench(const ExperimentConfig& cfg, std::ostream&) {
  if (!cfg.radius) throw ConfigError("dictionary.R", "bench needs dictionary.R");
  CsvWriter csv({"d", "R", "delta", "p", "gram_build_ms", "iter_ms", "l2_error_vs_oracle"});
  for (int d : cfg.bench.dims) {
    const Vector mean = Vector::Zero(d);
    const Matrix cov = equicorrelation(d, cfg.bench.rho);
    const GaussianTarget target(mean, cov);
    const GaussianStarMap oracle = closed_form_star_map(mean, cov);
    for (double delta : cfg.bench.deltas) {
      const DictionarySpec spec = make_spec(d, *cfg.radius, delta, "bench.deltas");
      GramOptions uncached;
      uncached.cache_dir.clear();
      const FitRun run = fit_target(cfg, target, spec, uncached);
      const int iters = std::max(1, run.result.iterations);
      const double iter_ms = (run.runtime_ms - run.gram_ms) / iters;
      const Estimate err = l2_map_distance(StarMap(spec, run.result.params), oracle, cfg.mc_n, cfg.seed);
      csv.row({std::to_string(d), num(*cfg.radius), num(delta), std::to_string(spec.size()), num(run.gram_ms),
               num(iter_ms), num(err.value)});
    }
  }
  csv.save(prepare_output(cfg) / "bench.csv");
  return kExitOk;
}

int run_command(const std::string& command, const std::string& config_path, const CliOverrides& overrides,
                std::ostream& err) {
  try {
    const ExperimentConfig cfg = load_config(config_path, overrides);
    if (command == "fit") return cmd_fit(cfg, err);
    if (command == "oracle-gaussian") return cmd_oracle_gaussian(cfg, err);
    if (command == "diagnose") return cmd_diagnose(cfg, err);
    if (command == "compare") return cmd_compare(cfg, err);
    if (command == "bench") return cmd_bench(cfg, err);
    err << "unknown command: " << command << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace ssvi
