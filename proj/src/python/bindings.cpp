#include "obsmhe/cli.hpp"
#include "obsmhe/config.hpp"
#include "obsmhe/harness.hpp"
#include "obsmhe/lyapcert.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

namespace py = pybind11;
using namespace obsmhe;

namespace {

Matrix stack(const std::vector<Vector>& rows) {
    if (rows.empty()) return Matrix(0, 0);
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t t = 0; t < rows.size(); ++t) m.row(static_cast<Eigen::Index>(t)) = rows[t].transpose();
    return m;
}

GammaParams params_from(const ExperimentConfig& cfg, std::optional<double> a) {
    return GammaParams::from(cfg.certificate(), a.value_or(cfg.estimator.a) * cfg.P);
}

EstimatorForm form_from(const ExperimentConfig& cfg, const std::optional<std::string>& form) {
    return form ? parse_form(*form) : cfg.estimator.form;
}

py::dict simulate(const std::string& config, std::optional<std::uint64_t> seed, std::optional<int> iterations) {
    Scenario sc = load_config(config).build_scenario();
    if (seed) sc.seed = *seed;
    if (iterations) sc.cfg.iterations = *iterations;
    SimTrace tr;
    {
        py::gil_scoped_release release;
        tr = run_closed_loop(sc);
    }
    const TraceVerification v = verify_trace(tr, make_verification_context(sc));
    py::dict d;
    d["x"] = stack(tr.x);
    d["xhat"] = stack(tr.xhat);
    d["observer"] = stack(tr.observer);
    d["y"] = stack(tr.y);
    d["cost"] = tr.cost;
    d["candidate_cost"] = tr.candidate_cost;
    d["horizon"] = tr.horizon;
    d["sse"] = sse(tr);
    d["observer_sse"] = observer_sse(tr);
    d["theorem1_violations"] = v.theorem1.violations;
    d["lemma1_violations"] = v.lemma1.violations;
    d["cost_decrease_violations"] = v.cost_decrease.violations;
    return d;
}

}  // namespace

PYBIND11_MODULE(_obsmhe, m) {
    m.doc() = "Suboptimal moving horizon estimation over an auxiliary observer";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CertificationError>(m, "CertificationError", PyExc_RuntimeError);

    m.def(
        "min_horizon",
        [](const std::string& config, std::optional<std::string> form, std::optional<double> a, int cap) {
            const ExperimentConfig cfg = load_config(config);
            return min_horizon(params_from(cfg, a), form_from(cfg, form), cap).value;
        },
        py::arg("config"), py::arg("form") = py::none(), py::arg("a") = py::none(),
        py::arg("cap") = kDefaultScanCap, "Smallest window length with gamma1 < 1.");

    m.def(
        "min_T",
        [](const std::string& config, int M, std::optional<std::string> form, std::optional<double> a, int cap) {
            const ExperimentConfig cfg = load_config(config);
            return min_T(params_from(cfg, a), M, form_from(cfg, form), cap).value;
        },
        py::arg("config"), py::arg("M"), py::arg("form") = py::none(), py::arg("a") = py::none(),
        py::arg("cap") = kDefaultScanCap, "Smallest restart depth T >= M for the re-initialized candidate.");

    m.def("simulate", &simulate, py::arg("config"), py::arg("seed") = py::none(),
          py::arg("iterations") = py::none(),
          "Closed-loop run. Returns the trace as arrays plus SSE and violation counts.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = run_cli(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");

    m.attr("CONVERGED") = kConverged;
}
