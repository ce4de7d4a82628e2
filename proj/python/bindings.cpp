#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ncca/cca_core.hpp"
#include "ncca/error.hpp"
#include "ncca/harness.hpp"
#include "ncca/latent_model.hpp"
#include "ncca/metrics.hpp"
#include "ncca/mixing.hpp"
#include "ncca/population_oracle.hpp"

namespace py = pybind11;
using namespace ncca;

namespace {

LatentSpec spec_from(const std::string& family, const std::vector<double>& rho, int hyper_population,
                     int hyper_successes) {
  FamilyParams fp;
  fp.hyper_population = hyper_population;
  fp.hyper_successes = hyper_successes;
  return make_latent_spec(family_from_string(family), static_cast<int>(rho.size()), rho, fp);
}

py::dict row_to_dict(const ReportRow& r) {
  py::dict d;
  d["experiment"] = r.experiment;
  d["family"] = r.family;
  d["d_S"] = r.d_s;
  d["d_Z"] = r.d_z;
  d["seed"] = r.seed;
  d["sweep_value"] = r.sweep_value;
  d["r2_f"] = r.r2_f;
  d["r2_fprime"] = r.r2_fprime;
  d["pa_mean_f"] = r.pa_mean_f;
  d["pa_max_f"] = r.pa_max_f;
  d["pa_mean_fprime"] = r.pa_mean_fprime;
  d["pa_max_fprime"] = r.pa_max_fprime;
  d["orbit_distance"] = r.orbit_distance;
  d["sigma_gap_linf"] = r.sigma_gap_linf;
  d["J_hat_final"] = r.j_hat_final;
  d["steps"] = r.steps;
  d["wall_clock_s"] = r.wall_clock_s;
  d["failed"] = r.failed;
  d["error"] = r.error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ncca, m) {
  m.doc() = "Nonlinear CCA identifiability toolkit";

  static PyObject* exc_type = py::exception<Error>(m, "NccaError", PyExc_RuntimeError).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // The error kind is exposed as .code so callers can branch on it.
      PyObject* value = PyObject_CallFunction(exc_type, "s", e.what());
      if (value == nullptr) return;
      py::str code(std::string(to_string(e.code())));
      PyObject_SetAttrString(value, "code", code.ptr());
      PyErr_SetObject(exc_type, value);
      Py_DECREF(value);
    }
  });

  m.def(
      "sample_sources",
      [](const std::string& family, const std::vector<double>& rho, Eigen::Index n, std::uint64_t seed,
         int hyper_population, int hyper_successes) {
        const SourceBatch b = sample_source_pair(spec_from(family, rho, hyper_population, hyper_successes), n, seed);
        return py::make_tuple(b.s, b.s_prime);
      },
      py::arg("family"), py::arg("rho"), py::arg("n"), py::arg("seed") = 0, py::arg("hyper_population") = 200,
      py::arg("hyper_successes") = 100, "Standardized source pairs (S, S') with canonical correlations rho.");
  m.def(
      "realized_correlations",
      [](const std::string& family, const std::vector<double>& rho, int hyper_population, int hyper_successes) {
        const LatentSpec spec = spec_from(family, rho, hyper_population, hyper_successes);
        std::vector<double> out;
        for (int i = 0; i < spec.d_s; ++i) out.push_back(realized_correlation(spec, i));
        return out;
      },
      py::arg("family"), py::arg("rho"), py::arg("hyper_population") = 200, py::arg("hyper_successes") = 100);
  m.def(
      "check_dominance",
      [](const std::vector<double>& rho) {
        const DominanceCheck d = check_dominance(rho);
        return py::make_tuple(d.holds, d.ratio);
      },
      py::arg("rho"));
  m.def("equally_spaced_rho", &equally_spaced_rho, py::arg("d"), py::arg("lo"), py::arg("hi"));

  py::class_<DecoderParams>(m, "Decoder")
      .def_readonly("layers", &DecoderParams::layers)
      .def_readonly("d_S", &DecoderParams::d_s)
      .def_readonly("d_X", &DecoderParams::d_x)
      .def("__call__", [](const DecoderParams& d, const Matrix& s) { return decode(d, s); }, py::arg("s"));
  m.def("make_decoder", &make_decoder, py::arg("d_S"), py::arg("d_X"), py::arg("depth"), py::arg("seed"),
        py::arg("cond_limit"), py::arg("slope") = kLeakySlope);

  m.def(
      "cca_objective",
      [](const Matrix& z, const Matrix& zp, double eps) { return cca_objective(empirical_cross_stats(z, zp, eps)); },
      py::arg("z"), py::arg("z_prime"), py::arg("epsilon"));
  m.def(
      "cca_singulars",
      [](const Matrix& z, const Matrix& zp, double eps) { return Vector(empirical_cross_stats(z, zp, eps).singulars); },
      py::arg("z"), py::arg("z_prime"), py::arg("epsilon"));
  m.def(
      "cca_gradient",
      [](const Matrix& z, const Matrix& zp, double eps) {
        const CcaGradient g = cca_gradient(z, zp, eps);
        return py::make_tuple(g.g, g.gp, g.non_unique);
      },
      py::arg("z"), py::arg("z_prime"), py::arg("epsilon"));
  m.def(
      "linear_cca",
      [](const Matrix& x, const Matrix& xp, int d_z, double eps) {
        const LinearCca c = linear_cca_fit(x, xp, d_z, eps);
        return py::dict(py::arg("A") = c.a, py::arg("A_prime") = c.a_prime, py::arg("bias") = Matrix(c.bias),
                        py::arg("bias_prime") = Matrix(c.bias_prime), py::arg("correlations") = c.correlations);
      },
      py::arg("x"), py::arg("x_prime"), py::arg("d_Z"), py::arg("epsilon"));

  m.def(
      "r_squared", [](const Matrix& s, const Matrix& z) { return r_squared(s, z).per_dim; }, py::arg("s_true"),
      py::arg("z"));
  m.def(
      "principal_angles", [](const Matrix& z, const Matrix& s) { return principal_angles(z, s).degrees; },
      py::arg("z"), py::arg("s"));
  m.def("orbit_distance", &orbit_distance, py::arg("z"), py::arg("z_hat"), py::arg("z_prime"),
        py::arg("z_prime_hat"));
  m.def("singular_gap_linf", &singular_gap_linf, py::arg("sigma_hat"), py::arg("sigma_ref"));

  m.def("hermite_eval", &hermite_eval, py::arg("n"), py::arg("x"));
  m.def("mehler_cross_moment", &mehler_cross_moment, py::arg("m"), py::arg("n"), py::arg("rho"));
  m.def(
      "hermite_spectrum",
      [](const std::vector<double>& rho, int max_degree) {
        py::list out;
        for (const SpectrumEntry& e : enumerate_hermite_spectrum(rho, max_degree).entries) {
          out.append(py::make_tuple(py::tuple(py::cast(e.alpha)), e.value));
        }
        return out;
      },
      py::arg("rho"), py::arg("max_degree"));
  m.def(
      "verify_affine_optimality",
      [](const std::vector<double>& rho, int d_z, int max_degree) {
        const AffineOptimality a = verify_affine_optimality(rho, d_z, max_degree);
        return py::make_tuple(a.affine_optimal, a.top_indices);
      },
      py::arg("rho"), py::arg("d_Z"), py::arg("max_degree") = 4);
  m.def("source_space_objective", &source_space_objective, py::arg("rho"), py::arg("d_Z"));

  m.def(
      "run_experiment_json",
      [](const std::string& config_json, const std::string& out_dir) {
        const ExperimentConfig cfg = experiment_config_from_json(nlohmann::json::parse(config_json));
        validate(cfg);
        ReportBundle b;
        {
          py::gil_scoped_release release;
          b = cfg.experiment == Experiment::AblateDimMismatch ? run_dim_mismatch(cfg) : run_experiment(cfg);
        }
        if (!out_dir.empty()) emit_report(b, out_dir);
        py::list rows, checks;
        for (const ReportRow& r : b.rows) rows.append(row_to_dict(r));
        for (const OracleCheckResult& c : b.checks) {
          checks.append(py::dict(py::arg("name") = c.name, py::arg("passed") = c.passed, py::arg("detail") = c.detail));
        }
        return py::dict(py::arg("experiment") = b.experiment, py::arg("config_hash") = b.config_hash,
                        py::arg("rows") = rows, py::arg("checks") = checks,
                        py::arg("all_checks_pass") = b.all_checks_pass());
      },
      py::arg("config_json"), py::arg("out_dir") = "");
}
