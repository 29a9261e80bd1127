#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <optional>

#include "ssvi/diagnostics.hpp"
#include "ssvi/error.hpp"
#include "ssvi/experiment.hpp"
#include "ssvi/optimizer.hpp"
#include "ssvi/oracle.hpp"
#include "ssvi/parallel.hpp"
#include "ssvi/version.hpp"

namespace py = pybind11;
using namespace ssvi;

namespace {

// Fitted map kept together with its dictionary so it can be evaluated from Python.
struct PyFit {
  DictionarySpec spec;
  FitResult result;

  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& x) const {
    if (x.cols() != spec.dimension()) throw std::invalid_argument("x must have one column per coordinate");
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = map_eval(result.params, spec, x.row(r).transpose());
    return out;
  }
};

PyFit fit_gaussian(const Vector& mean, const Matrix& cov, double radius, double width, std::optional<double> step,
                   int max_iterations, double tolerance, std::size_t n_samples, std::uint64_t seed) {
  GaussianTarget target(mean, cov);
  PyFit fit{build_dictionary(static_cast<int>(mean.size()), radius, width), {}};
  const GramMatrix q = gram_matrix(fit.spec);
  PgdConfig cfg;
  cfg.step_size = step;
  cfg.max_iterations = max_iterations;
  cfg.tolerance = tolerance;
  cfg.n_samples = n_samples;
  cfg.seed = seed;
  const RegularityConstants c = regularity_constants(target);
  {
    py::gil_scoped_release release;
    fit.result = run_pgd(target, fit.spec, q, cfg, c, default_init(target, fit.spec, spike_vector(fit.spec.dimension(), c)));
  }
  return fit;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Star-structured variational inference core";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

  m.def("set_thread_count", &set_thread_count, py::arg("n"));

  m.def(
      "ssvi_gaussian", [](const Vector& mean, const Matrix& cov) { return ssvi_gaussian(mean, cov).dist.cov; },
      py::arg("mean"), py::arg("cov"), "Covariance of the star-structured minimizer for N(mean, cov).");
  m.def(
      "mfvi_gaussian", [](const Vector& mean, const Matrix& cov) { return mfvi_gaussian(mean, cov).cov; },
      py::arg("mean"), py::arg("cov"));
  m.def(
      "kl_gaussians",
      [](const Vector& m0, const Matrix& c0, const Vector& m1, const Matrix& c1) {
        return kl_gaussians({m0, c0}, {m1, c1});
      },
      py::arg("mean0"), py::arg("cov0"), py::arg("mean1"), py::arg("cov1"), "KL(N(mean0, cov0) || N(mean1, cov1)).");
  m.def("ssvi_mfvi_gap", &ssvi_mfvi_gap, py::arg("cov"));
  m.def("mixture_log_concavity_bound", &mixture_log_concavity_bound, py::arg("eta"), py::arg("tau0"), py::arg("tau1"));
  m.def(
      "dictionary_size", [](int d, double radius, double width) { return build_dictionary(d, radius, width).size(); },
      py::arg("d"), py::arg("radius"), py::arg("width"));

  py::class_<PyFit>(m, "FitResult")
      .def_property_readonly("coefficients", [](const PyFit& f) { return f.result.params.lambda; })
      .def_property_readonly("offsets", [](const PyFit& f) { return f.result.params.v; })
      .def_property_readonly("alpha", [](const PyFit& f) { return f.result.params.alpha; })
      .def_property_readonly("free_energy", [](const PyFit& f) { return f.result.free_energy; })
      .def_property_readonly("iterations", [](const PyFit& f) { return f.result.iterations; })
      .def_property_readonly("termination", [](const PyFit& f) { return f.result.termination; })
      .def("evaluate", &PyFit::evaluate, py::arg("x"), "Apply the fitted map to each row of x.")
      .def(
          "l2_distance_to_oracle",
          [](const PyFit& f, const Vector& mean, const Matrix& cov, std::size_t mc_n, std::uint64_t seed) {
            const Estimate e = l2_map_distance(StarMap(f.spec, f.result.params), closed_form_star_map(mean, cov),
                                               mc_n, seed);
            return py::make_tuple(e.value, e.std_error);
          },
          py::arg("mean"), py::arg("cov"), py::arg("mc_n") = 100000, py::arg("seed") = 0);

  m.def("fit_gaussian", &fit_gaussian, py::arg("mean"), py::arg("cov"), py::arg("radius") = 4.0,
        py::arg("width") = 0.5, py::arg("step") = py::none(), py::arg("max_iterations") = 5000,
        py::arg("tolerance") = 1e-6, py::arg("n_samples") = 20000, py::arg("seed") = 0,
        "Fit the star map to a Gaussian target by projected gradient descent.");

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config, std::optional<std::string> out,
         std::optional<std::uint64_t> seed, std::optional<std::size_t> mc_samples) {
        CliOverrides ov{out, seed, mc_samples};
        py::gil_scoped_release release;
        return run_command(command, config, ov, std::cerr);
      },
      py::arg("command"), py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
      py::arg("mc_samples") = py::none(), "Run a command-line subcommand in-process; returns its exit code.");
}
