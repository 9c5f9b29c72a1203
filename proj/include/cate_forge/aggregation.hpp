#pragma once

// Aggregation of site CATE predictions into ensemble CATE models.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cate_forge/learners.hpp"
#include "cate_forge/qp_core.hpp"

namespace cate_forge {

/// n_Q x S matrix of site CATE predictions on the shared target covariates.
/// This is all a site has to ship; raw observations never leave the site.
struct CatePredictionMatrix {
  Matrix values;
  std::vector<std::string> site_ids;

  CatePredictionMatrix() = default;
  /// Site ids default to site_1..site_S.
  explicit CatePredictionMatrix(Matrix v, std::vector<std::string> ids = {});

  std::size_t n_target() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_sites() const noexcept { return static_cast<std::size_t>(values.cols()); }
  /// Throws InvalidInput on empty/non-finite values or mismatched ids.
  void validate() const;
};

enum class EnsembleMethod { kRegret, kRelativeRisk, kRisk2Site, kPooled };

std::string to_string(EnsembleMethod method);
/// regret | relative-risk | risk-2site | pooled (underscores also accepted).
EnsembleMethod parse_method(const std::string& text);

/// Weighted combination of site predictors, summed in ascending site order.
class EnsembleCateModel final : public Predictor {
 public:
  EnsembleCateModel(Vector weights, std::vector<PredictorPtr> site_predictors, EnsembleMethod method);

  double predict(std::span<const double> x) const override;

  const Vector& weights() const noexcept { return weights_; }
  const std::vector<PredictorPtr>& site_predictors() const noexcept { return predictors_; }
  EnsembleMethod method() const noexcept { return method_; }

 private:
  Vector weights_;
  std::vector<PredictorPtr> predictors_;
  EnsembleMethod method_;
};

struct Diagnostics {
  double lambda_min = 0.0;
  double kkt_residual = 0.0;
  double worst_case_regret = 0.0;
  Vector per_site_regret;

  /// lambda_min(Gamma) below 1e-8: the weights are not unique.
  bool degenerate() const noexcept { return lambda_min < 1e-8; }
};

/// Weights plus diagnostics, without predictor objects (aggregation-only use).
struct AggregationResult {
  WeightSolution solution;
  Diagnostics diagnostics;
};

struct EnsembleFit {
  EnsembleCateModel model;
  Diagnostics diagnostics;
  WeightSolution solution;
};

/// Gamma = V'V / n_Q accumulated in ascending row order; d = diag(Gamma).
GammaSystem estimate_gamma(const CatePredictionMatrix& preds);

/// b_s = (1/n_Q) sum_i V(i, s) baseline(i).
Vector estimate_baseline_moments(const CatePredictionMatrix& preds, const Vector& baseline);

/// V q, summed in ascending site order.
Vector ensemble_predictions(const CatePredictionMatrix& preds, const Vector& weights);

AggregationResult regret_weights(const CatePredictionMatrix& preds,
                                 const std::optional<PolytopeSpec>& poly = std::nullopt,
                                 const SolverOptions& options = {});

/// baseline_preds has length n_Q; all zeros gives the zero-baseline model.
AggregationResult relative_risk_weights(const CatePredictionMatrix& preds, const Vector& baseline_preds,
                                        const std::optional<PolytopeSpec>& poly = std::nullopt,
                                        const SolverOptions& options = {});

/// Closed form q1 = 0 v (1/2 + (s1 - s2) / (2 dist_sq)) ^ 1.
double risk_2site_weight(double sigma1_sq, double sigma2_sq, double dist_sq);

/// Two-site minimax-risk weights with the CATE distance estimated from preds.
Vector risk_2site_weights(const CatePredictionMatrix& preds, double sigma1_sq, double sigma2_sq);

EnsembleFit fit_regret_ensemble(const CatePredictionMatrix& preds, std::vector<PredictorPtr> predictors,
                                const std::optional<PolytopeSpec>& poly = std::nullopt,
                                const SolverOptions& options = {});

EnsembleFit fit_relative_risk_ensemble(const CatePredictionMatrix& preds, const Vector& baseline_preds,
                                       std::vector<PredictorPtr> predictors,
                                       const std::optional<PolytopeSpec>& poly = std::nullopt,
                                       const SolverOptions& options = {});

EnsembleCateModel fit_risk_2site_ensemble(const CatePredictionMatrix& preds, double sigma1_sq,
                                          double sigma2_sq, std::vector<PredictorPtr> predictors);

/// Single meta-learner on the concatenated site data, wrapped as S = 1.
EnsembleCateModel fit_pooled(std::span<const SiteDataset> sites, const MetaLearnerConfig& config);

/// Sample-size ratios n_s / sum n: the reporting convention for pooled
/// weights when only predictions are available.
Vector sample_size_weights(std::span<const std::size_t> sample_sizes);

/// (1/n) sum (model - truth)^2.
double empirical_regret(const Vector& model_preds, const Vector& true_cate);

/// Fraction of target rows inside each site's covariate bounding box. A crude
/// overlap screen: values below 0.99 suggest the target leaves the support of
/// that site.
std::vector<double> overlap_coverage(std::span<const SiteDataset> sites, const CovariateMatrix& target);

}  // namespace cate_forge
