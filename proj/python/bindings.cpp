#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "cate_forge/aggregation.hpp"
#include "cate_forge/errors.hpp"
#include "cate_forge/grid_oracle.hpp"
#include "cate_forge/learners.hpp"
#include "cate_forge/qp_core.hpp"
#include "cate_forge/simulation.hpp"

namespace py = pybind11;
using namespace cate_forge;
using namespace pybind11::literals;

namespace {

SolverOptions solver_options(double tol, std::size_t max_iter, double ridge, bool polish) {
  SolverOptions o;
  o.tol = tol;
  o.max_iter = max_iter;
  o.ridge = ridge;
  o.polish = polish;
  return o;
}

// Vertices arrive as an N x S array, one vertex per row.
std::optional<PolytopeSpec> polytope(const std::optional<Matrix>& vertices) {
  if (!vertices) return std::nullopt;
  std::vector<Vector> v;
  for (Eigen::Index i = 0; i < vertices->rows(); ++i) v.emplace_back(vertices->row(i).transpose());
  return PolytopeSpec(std::move(v));
}

CatePredictionMatrix predictions(const Matrix& values, std::vector<std::string> site_ids) {
  CatePredictionMatrix p(values, std::move(site_ids));
  p.validate();
  return p;
}

SiteDataset site_dataset(const CovariateMatrix& x, const Vector& y, const std::vector<int>& a) {
  SiteDataset d;
  d.covariates = x;
  d.outcomes = y;
  d.treatments = a;
  d.validate();
  return d;
}

// Holder for the const predictors the library hands out.
struct FittedModel {
  PredictorPtr model;
};

py::dict summary_dict(const StudyTable& table) {
  py::dict methods;
  for (const MethodSummary& m : table.methods) {
    methods[py::str(to_string(m.method))] =
        py::dict("mean_worst_case"_a = m.mean_worst_case, "stderr_worst_case"_a = m.stderr_worst_case,
                 "mean_site_regret"_a = m.mean_site_regret, "stderr_site_regret"_a = m.stderr_site_regret);
  }
  return py::dict("methods"_a = methods, "mean_site_rmse"_a = table.mean_site_rmse, "n_reps"_a = table.n_reps,
                  "seed"_a = table.seed);
}

}  // namespace

PYBIND11_MODULE(_cate_forge, m) {
  m.doc() = "Minimax-regret aggregation of site-level CATE estimators";

  // InvalidInputError derives from both CateForgeError and ValueError.
  static py::exception<Error> base_error(m, "CateForgeError");
  static py::exception<NumericalError> numerical_error(m, "NumericalError", base_error.ptr());
  static py::object invalid_input = py::module_::import("builtins").attr("type")(
      "InvalidInputError", py::make_tuple(base_error, py::handle(PyExc_ValueError)),
      py::dict("__module__"_a = "cate_forge"));
  m.attr("InvalidInputError") = invalid_input;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidInput& e) {
      PyErr_SetString(invalid_input.ptr(), e.what());
    } catch (const NumericalError& e) {
      py::set_error(numerical_error, e.what());
    } catch (const Error& e) {
      py::set_error(base_error, e.what());
    }
  });

  py::class_<WeightSolution>(m, "WeightSolution")
      .def_readonly("weights", &WeightSolution::weights)
      .def_readonly("objective", &WeightSolution::objective)
      .def_readonly("worst_case_regret", &WeightSolution::worst_case_regret)
      .def_readonly("kkt_residual", &WeightSolution::kkt_residual)
      .def_readonly("iterations", &WeightSolution::iterations)
      .def_readonly("converged", &WeightSolution::converged)
      .def("__repr__", [](const WeightSolution& s) {
        return "<WeightSolution worst_case_regret=" + std::to_string(s.worst_case_regret) +
               " converged=" + (s.converged ? "True" : "False") + ">";
      });

  py::class_<Diagnostics>(m, "Diagnostics")
      .def_readonly("lambda_min", &Diagnostics::lambda_min)
      .def_readonly("kkt_residual", &Diagnostics::kkt_residual)
      .def_readonly("worst_case_regret", &Diagnostics::worst_case_regret)
      .def_readonly("per_site_regret", &Diagnostics::per_site_regret)
      .def_property_readonly("degenerate", &Diagnostics::degenerate);

  py::class_<AggregationResult>(m, "AggregationResult")
      .def_readonly("solution", &AggregationResult::solution)
      .def_readonly("diagnostics", &AggregationResult::diagnostics)
      .def_property_readonly("weights", [](const AggregationResult& r) { return r.solution.weights; });

  py::class_<FittedModel>(m, "Predictor")
      .def("predict", [](const FittedModel& f, const CovariateMatrix& x) { return f.model->predict_rows(x); }, "x"_a);

  m.def("project_to_simplex", &project_to_simplex, "v"_a);

  m.def(
      "solve_regret_qp",
      [](const Matrix& gamma, const std::optional<Matrix>& vertices, double tol, std::size_t max_iter, double ridge,
         bool polish) {
        const GammaSystem system(gamma);
        const SolverOptions o = solver_options(tol, max_iter, ridge, polish);
        if (auto poly = polytope(vertices)) return solve_regret_qp_polytope(system, *poly, o);
        return solve_regret_qp(system, o);
      },
      "gamma"_a, "vertices"_a = py::none(), "tol"_a = 1e-12, "max_iter"_a = 20000, "ridge"_a = 0.0,
      "polish"_a = true);

  m.def(
      "solve_relative_risk_qp",
      [](const Matrix& gamma, const Vector& b, const std::optional<Matrix>& vertices, double tol,
         std::size_t max_iter, double ridge, bool polish) {
        return solve_relative_risk_qp(GammaSystem(gamma), b, polytope(vertices),
                                      solver_options(tol, max_iter, ridge, polish));
      },
      "gamma"_a, "b"_a, "vertices"_a = py::none(), "tol"_a = 1e-12, "max_iter"_a = 20000, "ridge"_a = 0.0,
      "polish"_a = true);

  m.def(
      "kkt_residual", [](const Matrix& gamma, const Vector& q) { return kkt_residual(GammaSystem(gamma), q); },
      "gamma"_a, "q"_a);
  m.def("per_site_regret", &per_site_regret, "gamma"_a, "q"_a);

  m.def(
      "grid_oracle",
      [](const Matrix& a, const Vector& c, std::size_t divisions, std::optional<double> cap) {
        const GridOracleResult r = grid_oracle(a, c, divisions, cap);
        return py::make_tuple(r.weights, r.objective);
      },
      "a"_a, "c"_a, "divisions"_a = 1000, "cap"_a = py::none());

  m.def(
      "estimate_gamma",
      [](const Matrix& preds) { return estimate_gamma(predictions(preds, {})).gamma(); }, "preds"_a);

  m.def(
      "regret_weights",
      [](const Matrix& preds, const std::optional<Matrix>& vertices, double tol, std::size_t max_iter, double ridge,
         bool polish) {
        return regret_weights(predictions(preds, {}), polytope(vertices), solver_options(tol, max_iter, ridge, polish));
      },
      "preds"_a, "vertices"_a = py::none(), "tol"_a = 1e-12, "max_iter"_a = 20000, "ridge"_a = 0.0,
      "polish"_a = true);

  m.def(
      "relative_risk_weights",
      [](const Matrix& preds, const Vector& baseline, const std::optional<Matrix>& vertices, double tol,
         std::size_t max_iter, double ridge, bool polish) {
        return relative_risk_weights(predictions(preds, {}), baseline, polytope(vertices),
                                     solver_options(tol, max_iter, ridge, polish));
      },
      "preds"_a, "baseline"_a, "vertices"_a = py::none(), "tol"_a = 1e-12, "max_iter"_a = 20000, "ridge"_a = 0.0,
      "polish"_a = true);

  m.def(
      "risk_2site_weights",
      [](const Matrix& preds, double sigma1_sq, double sigma2_sq) {
        return risk_2site_weights(predictions(preds, {}), sigma1_sq, sigma2_sq);
      },
      "preds"_a, "sigma1_sq"_a, "sigma2_sq"_a);

  m.def(
      "ensemble_predictions",
      [](const Matrix& preds, const Vector& weights) { return ensemble_predictions(predictions(preds, {}), weights); },
      "preds"_a, "weights"_a);

  m.def(
      "fit_cate",
      [](const CovariateMatrix& x, const Vector& y, const std::vector<int>& a, const std::string& learner,
         const std::string& base, double ridge_lambda, std::size_t knn_k, std::size_t folds,
         std::optional<double> propensity, std::uint64_t seed) {
        MetaLearnerConfig meta;
        meta.kind = parse_meta_learner(learner);
        meta.base.kind = parse_base_learner(base);
        meta.base.ridge_lambda = ridge_lambda;
        meta.base.knn_k = knn_k;
        meta.folds = folds;
        meta.propensity.known_constant = propensity;
        meta.seed = seed;
        const SiteDataset data = site_dataset(x, y, a);
        py::gil_scoped_release release;
        return FittedModel{fit_cate(data, meta)};
      },
      "x"_a, "y"_a, "a"_a, "learner"_a = "t", "base"_a = "ridge_poly", "ridge_lambda"_a = 1e-3, "knn_k"_a = 10,
      "folds"_a = 2, "propensity"_a = py::none(), "seed"_a = 0);

  m.def(
      "run_study",
      [](const std::string& setting, std::size_t n_sites, std::size_t n_total, std::size_t n_target,
         const std::string& allocation, std::uint64_t seed, std::size_t n_reps, const std::vector<std::string>& methods,
         bool oracle_sites, std::size_t threads) {
        DgpConfig cfg;
        cfg.setting = parse_setting(setting);
        cfg.n_sites = n_sites;
        cfg.n_total = n_total;
        cfg.n_target = n_target;
        cfg.seed = seed;
        cfg.allocation = make_allocation(AllocationScenario::parse(allocation), n_sites);
        std::vector<EnsembleMethod> ms;
        for (const std::string& name : methods) ms.push_back(parse_method(name));
        SimulationLearnerConfig learner;
        learner.oracle_sites = oracle_sites;
        StudyOptions opts;
        opts.n_reps = n_reps;
        opts.threads = threads;
        StudyTable table;
        {
          py::gil_scoped_release release;
          table = run_study(cfg, ms, learner, opts);
        }
        return summary_dict(table);
      },
      "setting"_a = "A", "n_sites"_a = 10, "n_total"_a = 5000, "n_target"_a = 10000, "allocation"_a = "balanced",
      "seed"_a = 0, "n_reps"_a = 50, "methods"_a = std::vector<std::string>{"regret", "relative_risk", "pooled"},
      "oracle_sites"_a = false, "threads"_a = 0);
}
