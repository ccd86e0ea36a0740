#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "freesde/cli.hpp"
#include "freesde/error.hpp"
#include "freesde/matrixmc.hpp"
#include "freesde/spectral.hpp"

namespace py = pybind11;
using namespace freesde;

namespace {

nlohmann::json to_json(const py::handle& obj) {
  const auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(obj).cast<std::string>());
}

py::object from_json(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::tuple density_arrays(const SpectralDensity& p) {
  return py::make_tuple(py::array_t<double>(py::cast(p.grid().points())), py::array_t<double>(py::cast(p.values())));
}

}  // namespace

PYBIND11_MODULE(_freesde, m) {
  m.doc() = "Free stochastic calculus: moment hierarchies, spectral flows and random-matrix Monte Carlo";

  // later registrations are tried first, so the derived type goes last
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "run",
      [](const py::dict& config) {
        const auto c = parse_run_config(to_json(config));
        CommandResult r;
        {
          py::gil_scoped_release release;
          r = run_command(c);
        }
        py::dict out;
        out["exit_code"] = r.exit_code;
        out["primary"] = r.primary;
        out["files"] = r.files;
        out["report"] = from_json(r.report);
        return out;
      },
      py::arg("config"), "Run a command from a config dict; returns exit code, files and report.");

  m.def(
      "config_hash", [](const py::dict& config) { return config_hash(parse_run_config(to_json(config))); },
      py::arg("config"));

  m.def(
      "free_heat_flow",
      [](const py::dict& law, double t, std::size_t n) {
        FlowOptions opt;
        opt.n = n;
        return density_arrays(free_heat_flow(law_from_json(to_json(law)), t, opt));
      },
      py::arg("law"), py::arg("t"), py::arg("n") = 4001, "Grid and density of law ⊞ semicircle(t).");

  m.def(
      "fisher_info",
      [](const py::dict& law, double t, std::size_t n) {
        FlowOptions opt;
        opt.n = n;
        const auto p = free_heat_flow(law_from_json(to_json(law)), t, opt);
        const auto xi = score(p);
        return py::make_tuple(fisher_info(p, xi), dirichlet_norm(p, xi));
      },
      py::arg("law"), py::arg("t"), py::arg("n") = 4001, "(Φ*, ‖∂ξ‖²) of law ⊞ semicircle(t).");

  m.def(
      "score",
      [](const py::dict& law, double t, std::size_t n) {
        FlowOptions opt;
        opt.n = n;
        const auto p = free_heat_flow(law_from_json(to_json(law)), t, opt);
        return py::make_tuple(py::array_t<double>(py::cast(p.grid().points())),
                              py::array_t<double>(py::cast(score(p).values())));
      },
      py::arg("law"), py::arg("t"), py::arg("n") = 4001, "Grid and conjugate variable ξ_t.");

  m.def(
      "chi_star", [](const py::dict& law) { return chi_star(law_from_json(to_json(law))); }, py::arg("law"));

  m.def(
      "gue",
      [](std::size_t N, double variance, std::uint64_t seed) {
        auto rng = trial_rng(seed, 0);
        return Mat(gue_increment(N, variance, rng));
      },
      py::arg("N"), py::arg("variance") = 1.0, py::arg("seed") = 0, "GUE matrix with tr_N(X²) → variance.");

  m.def(
      "wedge_projection",
      [](const Mat& a, const Mat& b, double tol) {
        auto r = wedge_projection(a, b, tol);
        return py::make_tuple(r.p, r.rank);
      },
      py::arg("a"), py::arg("b"), py::arg("tol") = 1e-8, "Projection onto range(a) ∩ range(b) and its rank.");

  m.def("liberation_correction_terms", [] {
    py::list out;
    for (const auto& t : liberation_correction_terms()) out.append(py::make_tuple(t.term, t.normal_form, t.zero));
    return out;
  });

  m.attr("__version__") = "0.1.0";
  m.attr("git_revision") = git_revision();
}
