#include "cate_forge/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cate_forge/aggregation.hpp"
#include "cate_forge/errors.hpp"
#include "cate_forge/grid_oracle.hpp"
#include "cate_forge/io.hpp"
#include "cate_forge/rng.hpp"
#include "cate_forge/simulation.hpp"

namespace cate_forge {
namespace {

struct LearnerOptions {
  std::string learner = "t";
  std::string base = "ridge";
  double ridge_lambda = 1e-3;
  std::size_t knn_k = 10;
  std::size_t folds = 2;
  std::optional<double> propensity;
};

void add_learner_options(CLI::App* cmd, LearnerOptions& o) {
  cmd->add_option("--learner", o.learner, "Meta-learner: t, x or dr")->capture_default_str();
  cmd->add_option("--base", o.base, "Base regressor: ridge or knn")->capture_default_str();
  cmd->add_option("--ridge-lambda", o.ridge_lambda, "Ridge penalty for ridge_poly")->capture_default_str();
  cmd->add_option("--knn-k", o.knn_k, "Neighbours for knn")->capture_default_str();
  cmd->add_option("--folds", o.folds, "Cross-fitting folds for the DR-learner")->capture_default_str();
  cmd->add_option("--propensity", o.propensity, "Known constant propensity (omit to fit a logistic model)");
}

MetaLearnerConfig to_meta(const LearnerOptions& o) {
  MetaLearnerConfig meta;
  meta.kind = parse_meta_learner(o.learner);
  meta.base.kind = parse_base_learner(o.base);
  meta.base.ridge_lambda = o.ridge_lambda;
  meta.base.knn_k = o.knn_k;
  meta.folds = o.folds;
  meta.propensity.known_constant = o.propensity;
  return meta;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v < 0) throw std::invalid_argument(item);
      sizes.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw InvalidInput("sample sizes must be comma-separated nonnegative integers, got '" + item + "'");
    }
  }
  return sizes;
}

struct WeightingOptions {
  std::string method = "regret";
  std::string baseline = "zero";
  std::string polytope;
  std::optional<double> sigma1_sq;
  std::optional<double> sigma2_sq;
  std::string sample_sizes;
  bool oracle_check = false;
  SolverOptions solver;
};

void add_weighting_options(CLI::App* cmd, WeightingOptions& o, bool with_sample_sizes) {
  cmd->add_option("--method", o.method, "regret, relative-risk, risk-2site or pooled")->capture_default_str();
  cmd->add_option("--baseline", o.baseline, "Baseline predictions CSV for relative-risk, or 'zero'")
      ->capture_default_str();
  cmd->add_option("--polytope", o.polytope, "Vertex CSV restricting the weights to a polytope");
  cmd->add_option("--sigma1-sq", o.sigma1_sq, "Noise variance of site 1 (risk-2site)");
  cmd->add_option("--sigma2-sq", o.sigma2_sq, "Noise variance of site 2 (risk-2site)");
  if (with_sample_sizes) {
    cmd->add_option("--sample-sizes", o.sample_sizes, "Comma-separated site sample sizes (pooled)");
  }
  cmd->add_flag("--oracle-check", o.oracle_check, "Compare the solver objective with a brute-force grid");
  cmd->add_option("--tol", o.solver.tol, "Solver stopping tolerance")->capture_default_str();
  cmd->add_option("--max-iter", o.solver.max_iter, "Solver iteration cap")->capture_default_str();
  cmd->add_option("--ridge", o.solver.ridge, "Explicit ridge added to Gamma")->capture_default_str();
  cmd->add_flag("--no-polish{false}", o.solver.polish, "Skip the active-set refinement after gradient descent");
}

constexpr double kOracleGapTol = 1e-6;

// Computes weights from a prediction matrix; returns the exit status.
int compute_weights(const CatePredictionMatrix& preds, const WeightingOptions& o,
                    const std::vector<std::size_t>& pooled_sizes, WeightsReport& report, std::ostream& err) {
  const EnsembleMethod method = parse_method(o.method);
  std::optional<PolytopeSpec> poly;
  if (!o.polytope.empty()) {
    if (method != EnsembleMethod::kRegret && method != EnsembleMethod::kRelativeRisk) {
      throw InvalidInput("--polytope applies to regret and relative-risk only");
    }
    poly = load_polytope_csv(o.polytope);
    if (poly->dimension() != preds.n_sites()) {
      throw InvalidInput("polytope has " + std::to_string(poly->dimension()) + " columns, predictions have " +
                         std::to_string(preds.n_sites()) + " sites");
    }
  }
  const GammaSystem gamma = estimate_gamma(preds);
  report.method = to_string(method);
  report.site_ids = preds.site_ids;
  report.lambda_min = gamma.lambda_min();
  if (gamma.lambda_min() < 1e-8) {
    err << "warning: lambda_min(Gamma) = " << format_double(gamma.lambda_min())
        << " < 1e-8; site CATEs are (nearly) collinear and the weights are not unique\n";
  }

  int status = kExitOk;
  std::optional<Matrix> oracle_a;
  std::optional<Vector> oracle_c;
  switch (method) {
    case EnsembleMethod::kRegret:
    case EnsembleMethod::kRelativeRisk: {
      WeightSolution sol;
      Matrix g = poly ? poly->vertex_matrix() : Matrix::Identity(gamma.gamma().rows(), gamma.gamma().rows());
      Matrix a = g.transpose() * gamma.gamma() * g;
      if (method == EnsembleMethod::kRegret) {
        sol = poly ? solve_regret_qp_polytope(gamma, *poly, o.solver) : solve_regret_qp(gamma, o.solver);
        oracle_c = a.diagonal();
      } else {
        Vector baseline = o.baseline == "zero" ? Vector::Zero(preds.values.rows()) : load_vector_csv(o.baseline);
        const Vector b = estimate_baseline_moments(preds, baseline);
        sol = solve_relative_risk_qp(gamma, b, poly, o.solver);
        oracle_c = 2.0 * (g.transpose() * b);
      }
      oracle_a = std::move(a);
      report.weights = sol.weights;
      report.worst_case_regret = sol.worst_case_regret;
      report.kkt_residual = sol.kkt_residual;
      report.objective = sol.objective;
      report.converged = sol.converged;
      report.iterations = sol.iterations;
      if (!sol.converged) {
        err << "error: solver did not converge within " << sol.iterations << " iterations\n";
        status = kExitNumerical;
      }
      break;
    }
    case EnsembleMethod::kRisk2Site: {
      if (!o.sigma1_sq || !o.sigma2_sq) throw InvalidInput("risk-2site needs --sigma1-sq and --sigma2-sq");
      report.weights = risk_2site_weights(preds, *o.sigma1_sq, *o.sigma2_sq);
      report.worst_case_regret = per_site_regret(gamma.gamma(), report.weights).maxCoeff();
      report.kkt_residual = kkt_residual(gamma, report.weights);
      report.note = "kkt_residual measures the minimax-regret optimality violation of these weights";
      break;
    }
    case EnsembleMethod::kPooled: {
      if (pooled_sizes.empty()) throw InvalidInput("pooled weights need --sample-sizes");
      if (pooled_sizes.size() != preds.n_sites()) {
        throw InvalidInput("--sample-sizes has " + std::to_string(pooled_sizes.size()) + " entries for " +
                           std::to_string(preds.n_sites()) + " sites");
      }
      report.weights = sample_size_weights(pooled_sizes);
      report.worst_case_regret = per_site_regret(gamma.gamma(), report.weights).maxCoeff();
      report.kkt_residual = kkt_residual(gamma, report.weights);
      report.note =
          "pooled weights are sample-size ratios (reporting convention); the simulation-mode pooled model "
          "is a single learner on concatenated data";
      break;
    }
  }

  if (o.oracle_check) {
    if (!oracle_a) throw InvalidInput("--oracle-check applies to regret and relative-risk only");
    const std::size_t divisions = grid_divisions_for(static_cast<std::size_t>(oracle_a->rows()));
    const GridOracleResult oracle = grid_oracle(*oracle_a, *oracle_c, divisions);
    report.oracle_objective = oracle.objective;
    report.oracle_gap = *report.objective - oracle.objective;
    report.oracle_divisions = divisions;
    if (*report.oracle_gap > kOracleGapTol) {
      err << "error: solver objective exceeds the grid oracle by " << format_double(*report.oracle_gap) << "\n";
      status = kExitNumerical;
    }
  }
  return status;
}

void print_weights(const WeightsReport& report, std::ostream& out) {
  out << "method " << report.method << "\n";
  for (std::size_t s = 0; s < report.site_ids.size() && s < static_cast<std::size_t>(report.weights.size()); ++s) {
    out << "  " << report.site_ids[s] << " " << format_double(report.weights[static_cast<Eigen::Index>(s)]) << "\n";
  }
  if (report.worst_case_regret) out << "worst_case_regret " << format_double(*report.worst_case_regret) << "\n";
  if (report.oracle_gap) out << "oracle_gap " << format_double(*report.oracle_gap) << "\n";
}

int cmd_weights(const std::string& predictions, const WeightingOptions& o, const std::string& out_path,
                std::ostream& out, std::ostream& err) {
  const CatePredictionMatrix preds = load_predictions_csv(predictions);
  WeightsReport report;
  const int status = compute_weights(preds, o, parse_sizes(o.sample_sizes), report, err);
  write_weights_json(report, out_path);
  print_weights(report, out);
  return status;
}

struct SimulateOptions {
  std::string setting = "A";
  std::size_t reps = 50;
  std::string allocation = "balanced";
  std::uint64_t seed = 0;
  std::size_t n_sites = 10;
  std::size_t n_total = 5000;
  std::size_t n_target = 10000;
  double noise_sd = 1.0;
  std::vector<std::string> methods{"regret", "relative-risk", "pooled"};
  bool oracle_sites = false;
  bool resample_params = false;
  std::size_t threads = 0;
  std::string out = "study.csv";
  std::string plot_out;
  LearnerOptions learner{.learner = "t", .base = "ridge", .ridge_lambda = 1e-3, .knn_k = 10, .folds = 2,
                         .propensity = 0.5};
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  DgpConfig config;
  config.setting = parse_setting(o.setting);
  config.n_sites = o.n_sites;
  config.n_total = o.n_total;
  config.n_target = o.n_target;
  config.noise_sd = o.noise_sd;
  config.seed = o.seed;
  const AllocationScenario scenario = AllocationScenario::parse(o.allocation);
  config.allocation = make_allocation(scenario, o.n_sites);

  std::vector<EnsembleMethod> methods;
  for (const auto& m : o.methods) methods.push_back(parse_method(m));
  SimulationLearnerConfig learner;
  learner.meta = to_meta(o.learner);
  learner.oracle_sites = o.oracle_sites;
  StudyOptions options;
  options.n_reps = o.reps;
  options.resample_params = o.resample_params;
  options.threads = o.threads;

  const StudyTable table = run_study(config, methods, learner, options);
  write_study_csv(table, o.out);
  const std::filesystem::path plot =
      o.plot_out.empty() ? std::filesystem::path(o.out).replace_filename("plotdata.csv") : std::filesystem::path(o.plot_out);
  write_plotdata_csv(table, scenario.label(), plot);

  out << "setting " << to_string(config.setting) << ", " << table.n_reps << " replications, allocation "
      << scenario.label() << "\n";
  for (const auto& m : table.methods) {
    out << "  " << to_string(m.method) << " mean worst-case regret " << format_double(m.mean_worst_case)
        << " (se " << format_double(m.stderr_worst_case) << ")\n";
  }
  return kExitOk;
}

struct AggregateOptions {
  std::vector<std::string> sites;
  std::string target;
  std::uint64_t seed = 0;
  std::string out = "weights.json";
  std::string predictions_out;
  std::string model_out;
  WeightingOptions weighting;
  LearnerOptions learner;
};

int cmd_aggregate(const AggregateOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<SiteDataset> sites;
  for (const auto& path : o.sites) sites.push_back(load_site_csv(path));
  const CovariateMatrix target = load_covariates_csv(o.target);
  for (const auto& s : sites) {
    if (s.dimension() != static_cast<std::size_t>(target.cols())) {
      throw InvalidInput("site " + s.site_id + " has " + std::to_string(s.dimension()) +
                         " covariates, target has " + std::to_string(target.cols()));
    }
  }
  const std::vector<double> coverage = overlap_coverage(sites, target);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    if (coverage[s] < 0.99) {
      err << "warning: site " << sites[s].site_id << " covariate range covers only "
          << format_double(coverage[s]) << " of the target rows (overlap may fail)\n";
    }
  }

  MetaLearnerConfig meta = to_meta(o.learner);
  WeightsReport report;
  int status = kExitOk;
  Vector model;
  if (parse_method(o.weighting.method) == EnsembleMethod::kPooled) {
    meta.seed = derive_seed(o.seed, StreamTag::kCrossFit, {sites.size()});
    const EnsembleCateModel pooled = fit_pooled(sites, meta);
    model = pooled.predict_rows(target);
    report.method = to_string(EnsembleMethod::kPooled);
    report.site_ids = {"pooled"};
    report.weights = Vector::Ones(1);
    report.note = "single learner fit on the concatenated site data";
  } else {
    Matrix values(target.rows(), static_cast<Eigen::Index>(sites.size()));
    std::vector<std::string> ids;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      meta.seed = derive_seed(o.seed, StreamTag::kCrossFit, {s});
      values.col(static_cast<Eigen::Index>(s)) = fit_cate(sites[s], meta)->predict_rows(target);
      ids.push_back(sites[s].site_id);
    }
    const CatePredictionMatrix preds(values, ids);
    if (!o.predictions_out.empty()) write_predictions_csv(preds, o.predictions_out);
    std::vector<std::size_t> sizes;
    for (const auto& s : sites) sizes.push_back(s.size());
    status = compute_weights(preds, o.weighting, sizes, report, err);
    model = ensemble_predictions(preds, report.weights);
  }
  if (!o.model_out.empty()) write_vector_csv(model, "cate", o.model_out);
  write_weights_json(report, o.out);
  print_weights(report, out);
  return status;
}

struct EvaluateOptions {
  std::string model_preds;
  std::string truth_preds;
  std::string mixture;
  std::string out;
};

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  const Vector model = load_vector_csv(o.model_preds);
  const CatePredictionMatrix truth = load_predictions_csv(o.truth_preds);
  if (truth.n_target() != static_cast<std::size_t>(model.size())) {
    throw InvalidInput("model predictions have " + std::to_string(model.size()) + " rows, truth has " +
                       std::to_string(truth.n_target()));
  }
  std::ostringstream json;
  if (!o.mixture.empty() || truth.n_sites() == 1) {
    Vector target = truth.values.col(0);
    if (!o.mixture.empty()) {
      const Vector q = load_weights_json(o.mixture);
      if (static_cast<std::size_t>(q.size()) != truth.n_sites()) {
        throw InvalidInput("mixture has " + std::to_string(q.size()) + " weights for " +
                           std::to_string(truth.n_sites()) + " truth columns");
      }
      if (q.minCoeff() < 0.0 || std::fabs(q.sum() - 1.0) > 1e-9) {
        throw InvalidInput("mixture weights must lie on the simplex");
      }
      target = ensemble_predictions(truth, q);
    }
    const double mse = empirical_regret(model, target);
    out << "mse " << format_double(mse) << "\n";
    json << "{\n  \"mse\": " << format_double(mse) << "\n}\n";
  } else {
    Vector per_column(static_cast<Eigen::Index>(truth.n_sites()));
    for (Eigen::Index s = 0; s < per_column.size(); ++s) per_column[s] = empirical_regret(model, truth.values.col(s));
    json << "{\n  \"per_column\": {";
    for (Eigen::Index s = 0; s < per_column.size(); ++s) {
      out << "mse " << truth.site_ids[static_cast<std::size_t>(s)] << " " << format_double(per_column[s]) << "\n";
      json << (s ? ", " : "") << nlohmann::json(truth.site_ids[static_cast<std::size_t>(s)]).dump() << ": "
           << format_double(per_column[s]);
    }
    out << "worst_case " << format_double(per_column.maxCoeff()) << "\n";
    json << "},\n  \"worst_case\": " << format_double(per_column.maxCoeff()) << "\n}\n";
  }
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw InvalidInput("cannot write " + o.out);
    f << json.str();
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distributionally robust aggregation of multisite CATE models", "cate_forge"};
  app.require_subcommand(1);

  std::string predictions;
  std::string weights_out = "weights.json";
  WeightingOptions weighting;
  auto* weights = app.add_subcommand("weights", "Aggregation weights from a site prediction CSV");
  weights->add_option("--predictions", predictions, "CSV with one column per site")->required();
  weights->add_option("--out", weights_out, "Output JSON")->capture_default_str();
  add_weighting_options(weights, weighting, true);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo benchmark study");
  simulate->add_option("--setting", sim.setting, "Data-generating setting: A or B")->capture_default_str();
  simulate->add_option("--reps", sim.reps, "Monte Carlo replications")->capture_default_str();
  simulate->add_option("--allocation", sim.allocation, "balanced, half-first, half-second or one-large:<k>")
      ->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Study seed")->capture_default_str();
  simulate->add_option("--n-sites", sim.n_sites, "Number of source sites")->capture_default_str();
  simulate->add_option("--n-total", sim.n_total, "Total source sample size")->capture_default_str();
  simulate->add_option("--n-target", sim.n_target, "Target covariate draws")->capture_default_str();
  simulate->add_option("--noise-sd", sim.noise_sd, "Outcome noise standard deviation")->capture_default_str();
  simulate->add_option("--methods", sim.methods, "Methods to evaluate")->delimiter(',')->capture_default_str();
  simulate->add_flag("--oracle-sites", sim.oracle_sites, "Use the true site CATEs as site models");
  simulate->add_flag("--resample-params", sim.resample_params, "Redraw alpha/beta every replication");
  simulate->add_option("--threads", sim.threads, "Worker threads (default CATE_FORGE_THREADS or all cores)");
  simulate->add_option("--out", sim.out, "Study table CSV")->capture_default_str();
  simulate->add_option("--plot-out", sim.plot_out, "Plot data CSV (default: plotdata.csv next to --out)");
  add_learner_options(simulate, sim.learner);

  AggregateOptions agg;
  auto* aggregate = app.add_subcommand("aggregate", "Fit site learners from raw site CSVs, then weight");
  aggregate->add_option("--site", agg.sites, "Site CSV (y,a,x1..xd); repeat per site")->required();
  aggregate->add_option("--target", agg.target, "Target covariates CSV (x1..xd)")->required();
  aggregate->add_option("--seed", agg.seed, "Seed for cross-fitting")->capture_default_str();
  aggregate->add_option("--out", agg.out, "Output weights JSON")->capture_default_str();
  aggregate->add_option("--predictions-out", agg.predictions_out, "Write the site prediction matrix CSV");
  aggregate->add_option("--model-out", agg.model_out, "Write the ensemble predictions on the target");
  add_weighting_options(aggregate, agg.weighting, false);
  add_learner_options(aggregate, agg.learner);

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Empirical regret (MSE) of model predictions");
  evaluate->add_option("--model-preds", ev.model_preds, "Single-column model predictions CSV")->required();
  evaluate->add_option("--truth-preds", ev.truth_preds, "Truth CSV (one or more columns)")->required();
  evaluate->add_option("--mixture", ev.mixture, "Weights JSON composing the truth columns");
  evaluate->add_option("--out", ev.out, "Output JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*weights) return cmd_weights(predictions, weighting, weights_out, out, err);
    if (*simulate) return cmd_simulate(sim, out);
    if (*aggregate) return cmd_aggregate(agg, out, err);
    if (*evaluate) return cmd_evaluate(ev, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitInvalid;
}

}  // namespace cate_forge
