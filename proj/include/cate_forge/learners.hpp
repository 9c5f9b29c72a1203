#pragma once

// Site-level CATE estimation: deterministic base regressors, propensity
// models and the T-, X- and DR-meta-learners.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cate_forge {

/// Row-major so that each observation is a contiguous span.
using CovariateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A fitted regression or CATE function. Implementations are immutable and
/// deterministic: equal inputs give bit-identical outputs.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual double predict(std::span<const double> x) const = 0;
  virtual Eigen::VectorXd predict_rows(const CovariateMatrix& x) const;
};

using PredictorPtr = std::shared_ptr<const Predictor>;

/// One site's observations.
struct SiteDataset {
  Eigen::VectorXd outcomes;
  std::vector<int> treatments;
  CovariateMatrix covariates;
  std::string site_id;

  std::size_t size() const noexcept { return static_cast<std::size_t>(outcomes.size()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(covariates.cols()); }
  std::size_t treated_count() const noexcept;

  /// Checks shapes, finiteness, binary treatments and n >= 2. Throws InvalidInput.
  void validate() const;
  /// Rows selected by `rows`, in the given order.
  SiteDataset subset(std::span<const std::size_t> rows) const;
};

/// Concatenates sites in order. Covariate dimensions must agree.
SiteDataset concatenate(std::span<const SiteDataset> sites, std::string site_id = "pooled");

enum class BaseLearnerKind { kRidgePoly, kKnn };
/// ridge | ridge_poly | knn.
BaseLearnerKind parse_base_learner(const std::string& text);

struct BaseLearnerConfig {
  BaseLearnerKind kind = BaseLearnerKind::kRidgePoly;
  double ridge_lambda = 1e-3;
  std::size_t knn_k = 10;
};

struct PropensityConfig {
  std::optional<double> known_constant;  ///< in (0, 1) when the design is known
};

enum class MetaLearnerKind { kT, kX, kDr };
/// t | x | dr.
MetaLearnerKind parse_meta_learner(const std::string& text);

struct MetaLearnerConfig {
  MetaLearnerKind kind = MetaLearnerKind::kT;
  BaseLearnerConfig base;
  PropensityConfig propensity;
  std::size_t folds = 2;
  std::uint64_t seed = 0;
};

/// Number of degree-2 polynomial features (intercept, linear, products j <= k).
std::size_t poly_feature_count(std::size_t dimension);
/// Writes the degree-2 feature expansion of x into `out` (size poly_feature_count).
void poly_features(std::span<const double> x, std::span<double> out);

/// ridge_poly: penalized least squares on degree-2 features (intercept
/// unpenalized). knn: mean of the k nearest training outcomes, ties broken by
/// lowest row index.
PredictorPtr fit_base_regressor(const CovariateMatrix& x, const Eigen::VectorXd& y,
                                const BaseLearnerConfig& config);

/// Constant when known; otherwise logistic regression by Newton-Raphson with
/// predictions clipped to [0.01, 0.99].
PredictorPtr fit_propensity(const CovariateMatrix& x, std::span<const int> treatments,
                            const PropensityConfig& config);

inline constexpr double kPropensityFloor = 0.01;
inline constexpr double kPropensityCeiling = 0.99;

PredictorPtr fit_t_learner(const SiteDataset& data, const BaseLearnerConfig& base);
PredictorPtr fit_x_learner(const SiteDataset& data, const BaseLearnerConfig& base,
                           const PropensityConfig& propensity);
/// X-learner combination g(x) tau0(x) + (1 - g(x)) tau1(x).
PredictorPtr make_x_learner_predictor(PredictorPtr tau0, PredictorPtr tau1, PredictorPtr propensity);

PredictorPtr fit_dr_learner(const SiteDataset& data, const BaseLearnerConfig& base,
                            const PropensityConfig& propensity, std::size_t folds = 2,
                            std::uint64_t seed = 0);

/// Doubly robust pseudo-outcome for one observation.
double dr_pseudo_outcome(int treatment, double outcome, double propensity, double mu0, double mu1);

/// Dispatches on config.kind.
PredictorPtr fit_cate(const SiteDataset& data, const MetaLearnerConfig& config);

/// Wraps a callable as a Predictor.
class FunctionPredictor final : public Predictor {
 public:
  using Fn = std::function<double(std::span<const double>)>;
  explicit FunctionPredictor(Fn fn) : fn_(std::move(fn)) {}
  double predict(std::span<const double> x) const override { return fn_(x); }

 private:
  Fn fn_;
};

inline PredictorPtr make_predictor(FunctionPredictor::Fn fn) {
  return std::make_shared<FunctionPredictor>(std::move(fn));
}

}  // namespace cate_forge
