#include "cate_forge/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "cate_forge/errors.hpp"

namespace cate_forge {
namespace {

void check_predictors(const CatePredictionMatrix& preds, const std::vector<PredictorPtr>& predictors) {
  if (predictors.size() != preds.n_sites()) {
    throw InvalidInput("expected " + std::to_string(preds.n_sites()) + " site predictors, got " +
                       std::to_string(predictors.size()));
  }
  for (const auto& p : predictors) {
    if (!p) throw InvalidInput("null site predictor");
  }
}

Diagnostics make_diagnostics(const GammaSystem& gamma, const WeightSolution& solution) {
  Diagnostics diag;
  diag.lambda_min = gamma.lambda_min();
  diag.kkt_residual = solution.kkt_residual;
  diag.per_site_regret = per_site_regret(gamma.gamma(), solution.weights);
  diag.worst_case_regret = solution.worst_case_regret;
  return diag;
}

}  // namespace

CatePredictionMatrix::CatePredictionMatrix(Matrix v, std::vector<std::string> ids)
    : values(std::move(v)), site_ids(std::move(ids)) {
  if (site_ids.empty()) {
    for (Eigen::Index s = 0; s < values.cols(); ++s) site_ids.push_back("site_" + std::to_string(s + 1));
  }
  validate();
}

void CatePredictionMatrix::validate() const {
  if (values.rows() < 1 || values.cols() < 1) {
    throw InvalidInput("prediction matrix needs at least one row and one site");
  }
  if (site_ids.size() != n_sites()) throw InvalidInput("site id count does not match prediction columns");
  if (!values.allFinite()) throw InvalidInput("prediction matrix contains non-finite entries");
}

EnsembleMethod parse_method(const std::string& text) {
  if (text == "regret") return EnsembleMethod::kRegret;
  if (text == "relative-risk" || text == "relative_risk") return EnsembleMethod::kRelativeRisk;
  if (text == "risk-2site" || text == "risk_2site") return EnsembleMethod::kRisk2Site;
  if (text == "pooled") return EnsembleMethod::kPooled;
  throw InvalidInput("unknown method '" + text + "' (expected regret, relative-risk, risk-2site or pooled)");
}

std::string to_string(EnsembleMethod method) {
  switch (method) {
    case EnsembleMethod::kRegret:
      return "regret";
    case EnsembleMethod::kRelativeRisk:
      return "relative_risk";
    case EnsembleMethod::kRisk2Site:
      return "risk_2site";
    case EnsembleMethod::kPooled:
      return "pooled";
  }
  return "unknown";
}

EnsembleCateModel::EnsembleCateModel(Vector weights, std::vector<PredictorPtr> site_predictors,
                                     EnsembleMethod method)
    : weights_(std::move(weights)), predictors_(std::move(site_predictors)), method_(method) {
  if (static_cast<std::size_t>(weights_.size()) != predictors_.size() || predictors_.empty()) {
    throw InvalidInput("ensemble weights and predictors differ in length");
  }
}

double EnsembleCateModel::predict(std::span<const double> x) const {
  double acc = 0.0;
  for (std::size_t s = 0; s < predictors_.size(); ++s) {
    acc += weights_[static_cast<Eigen::Index>(s)] * predictors_[s]->predict(x);
  }
  return acc;
}

GammaSystem estimate_gamma(const CatePredictionMatrix& preds) {
  preds.validate();
  const Eigen::Index n = preds.values.rows();
  const Eigen::Index sites = preds.values.cols();
  Matrix gamma(sites, sites);
  for (Eigen::Index k = 0; k < sites; ++k) {
    const double* vk = preds.values.col(k).data();
    for (Eigen::Index l = k; l < sites; ++l) {
      const double* vl = preds.values.col(l).data();
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) acc += vk[i] * vl[i];
      gamma(k, l) = gamma(l, k) = acc / static_cast<double>(n);
    }
  }
  return GammaSystem(std::move(gamma));
}

Vector estimate_baseline_moments(const CatePredictionMatrix& preds, const Vector& baseline) {
  preds.validate();
  if (static_cast<std::size_t>(baseline.size()) != preds.n_target()) {
    throw InvalidInput("baseline has " + std::to_string(baseline.size()) + " rows, predictions have " +
                       std::to_string(preds.n_target()));
  }
  if (!baseline.allFinite()) throw InvalidInput("baseline contains non-finite entries");
  const Eigen::Index n = preds.values.rows();
  Vector b(preds.values.cols());
  for (Eigen::Index s = 0; s < preds.values.cols(); ++s) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) acc += preds.values(i, s) * baseline[i];
    b[s] = acc / static_cast<double>(n);
  }
  return b;
}

Vector ensemble_predictions(const CatePredictionMatrix& preds, const Vector& weights) {
  if (static_cast<std::size_t>(weights.size()) != preds.n_sites()) {
    throw InvalidInput("weight vector length does not match prediction columns");
  }
  Vector out = Vector::Zero(preds.values.rows());
  for (Eigen::Index i = 0; i < preds.values.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < preds.values.cols(); ++s) acc += weights[s] * preds.values(i, s);
    out[i] = acc;
  }
  return out;
}

AggregationResult regret_weights(const CatePredictionMatrix& preds, const std::optional<PolytopeSpec>& poly,
                                 const SolverOptions& options) {
  const GammaSystem gamma = estimate_gamma(preds);
  WeightSolution solution =
      poly ? solve_regret_qp_polytope(gamma, *poly, options) : solve_regret_qp(gamma, options);
  Diagnostics diag = make_diagnostics(gamma, solution);
  return {std::move(solution), std::move(diag)};
}

AggregationResult relative_risk_weights(const CatePredictionMatrix& preds, const Vector& baseline_preds,
                                        const std::optional<PolytopeSpec>& poly,
                                        const SolverOptions& options) {
  const GammaSystem gamma = estimate_gamma(preds);
  const Vector b = estimate_baseline_moments(preds, baseline_preds);
  WeightSolution solution = solve_relative_risk_qp(gamma, b, poly, options);
  Diagnostics diag = make_diagnostics(gamma, solution);
  return {std::move(solution), std::move(diag)};
}

double risk_2site_weight(double sigma1_sq, double sigma2_sq, double dist_sq) {
  if (!(sigma1_sq >= 0.0) || !(sigma2_sq >= 0.0) || !std::isfinite(sigma1_sq) || !std::isfinite(sigma2_sq)) {
    throw InvalidInput("noise variances must be finite and nonnegative");
  }
  if (!(dist_sq > 0.0) || !std::isfinite(dist_sq)) {
    throw DegenerateInput("two-site risk weights need distinct site CATEs (squared distance " +
                          std::to_string(dist_sq) + ")");
  }
  return std::clamp(0.5 + (sigma1_sq - sigma2_sq) / (2.0 * dist_sq), 0.0, 1.0);
}

Vector risk_2site_weights(const CatePredictionMatrix& preds, double sigma1_sq, double sigma2_sq) {
  preds.validate();
  if (preds.n_sites() != 2) {
    throw Unsupported("two-site minimax-risk weights need exactly 2 sites, got " +
                      std::to_string(preds.n_sites()));
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < preds.values.rows(); ++i) {
    const double diff = preds.values(i, 0) - preds.values(i, 1);
    acc += diff * diff;
  }
  const double q1 = risk_2site_weight(sigma1_sq, sigma2_sq, acc / static_cast<double>(preds.n_target()));
  Vector w(2);
  w << q1, 1.0 - q1;
  return w;
}

EnsembleFit fit_regret_ensemble(const CatePredictionMatrix& preds, std::vector<PredictorPtr> predictors,
                                const std::optional<PolytopeSpec>& poly, const SolverOptions& options) {
  check_predictors(preds, predictors);
  AggregationResult r = regret_weights(preds, poly, options);
  EnsembleCateModel model(r.solution.weights, std::move(predictors), EnsembleMethod::kRegret);
  return {std::move(model), std::move(r.diagnostics), std::move(r.solution)};
}

EnsembleFit fit_relative_risk_ensemble(const CatePredictionMatrix& preds, const Vector& baseline_preds,
                                       std::vector<PredictorPtr> predictors,
                                       const std::optional<PolytopeSpec>& poly,
                                       const SolverOptions& options) {
  check_predictors(preds, predictors);
  AggregationResult r = relative_risk_weights(preds, baseline_preds, poly, options);
  EnsembleCateModel model(r.solution.weights, std::move(predictors), EnsembleMethod::kRelativeRisk);
  return {std::move(model), std::move(r.diagnostics), std::move(r.solution)};
}

EnsembleCateModel fit_risk_2site_ensemble(const CatePredictionMatrix& preds, double sigma1_sq,
                                          double sigma2_sq, std::vector<PredictorPtr> predictors) {
  Vector w = risk_2site_weights(preds, sigma1_sq, sigma2_sq);
  check_predictors(preds, predictors);
  return EnsembleCateModel(std::move(w), std::move(predictors), EnsembleMethod::kRisk2Site);
}

EnsembleCateModel fit_pooled(std::span<const SiteDataset> sites, const MetaLearnerConfig& config) {
  if (sites.empty()) throw InvalidInput("pooled fit needs at least one site");
  const SiteDataset pooled = concatenate(sites);
  if (pooled.size() == 0) throw InvalidInput("pooled fit: no observations");
  return EnsembleCateModel(Vector::Ones(1), {fit_cate(pooled, config)}, EnsembleMethod::kPooled);
}

Vector sample_size_weights(std::span<const std::size_t> sample_sizes) {
  if (sample_sizes.empty()) throw InvalidInput("no sample sizes given");
  double total = 0.0;
  for (std::size_t n : sample_sizes) total += static_cast<double>(n);
  if (total <= 0.0) throw InvalidInput("sample sizes must not all be zero");
  Vector w(static_cast<Eigen::Index>(sample_sizes.size()));
  for (std::size_t s = 0; s < sample_sizes.size(); ++s) {
    w[static_cast<Eigen::Index>(s)] = static_cast<double>(sample_sizes[s]) / total;
  }
  return w;
}

double empirical_regret(const Vector& model_preds, const Vector& true_cate) {
  if (model_preds.size() != true_cate.size()) {
    throw InvalidInput("empirical_regret: length mismatch (" + std::to_string(model_preds.size()) +
                       " vs " + std::to_string(true_cate.size()) + ")");
  }
  if (model_preds.size() == 0) throw InvalidInput("empirical_regret: empty vectors");
  if (!model_preds.allFinite() || !true_cate.allFinite()) {
    throw InvalidInput("empirical_regret: non-finite entries");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < model_preds.size(); ++i) {
    const double diff = true_cate[i] - model_preds[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(model_preds.size());
}

std::vector<double> overlap_coverage(std::span<const SiteDataset> sites, const CovariateMatrix& target) {
  std::vector<double> coverage;
  coverage.reserve(sites.size());
  for (const auto& site : sites) {
    if (site.covariates.cols() != target.cols()) {
      throw InvalidInput("site " + site.site_id + ": covariate dimension differs from target");
    }
    const Eigen::RowVectorXd lo = site.covariates.colwise().minCoeff();
    const Eigen::RowVectorXd hi = site.covariates.colwise().maxCoeff();
    std::size_t inside = 0;
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      bool ok = true;
      for (Eigen::Index j = 0; j < target.cols() && ok; ++j) {
        ok = target(i, j) >= lo[j] && target(i, j) <= hi[j];
      }
      inside += ok ? 1 : 0;
    }
    coverage.push_back(target.rows() == 0 ? 1.0
                                          : static_cast<double>(inside) / static_cast<double>(target.rows()));
  }
  return coverage;
}

}  // namespace cate_forge
