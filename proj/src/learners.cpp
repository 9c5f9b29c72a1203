#include "cate_forge/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cate_forge/errors.hpp"
#include "cate_forge/rng.hpp"

namespace cate_forge {
namespace {

std::span<const double> row_span(const CovariateMatrix& x, Eigen::Index i) {
  return {x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())};
}

class RidgePolyPredictor final : public Predictor {
 public:
  RidgePolyPredictor(Eigen::VectorXd coef, std::size_t dimension)
      : coef_(std::move(coef)), dimension_(dimension) {}

  double predict(std::span<const double> x) const override {
    if (x.size() != dimension_) throw InvalidInput("ridge_poly: covariate dimension mismatch");
    std::vector<double> phi(static_cast<std::size_t>(coef_.size()));
    poly_features(x, phi);
    double acc = 0.0;
    for (std::size_t j = 0; j < phi.size(); ++j) acc += coef_[static_cast<Eigen::Index>(j)] * phi[j];
    return acc;
  }

 private:
  Eigen::VectorXd coef_;
  std::size_t dimension_;
};

class KnnPredictor final : public Predictor {
 public:
  KnnPredictor(CovariateMatrix x, Eigen::VectorXd y, std::size_t k)
      : x_(std::move(x)), y_(std::move(y)), k_(k) {}

  double predict(std::span<const double> q) const override {
    if (q.size() != static_cast<std::size_t>(x_.cols())) {
      throw InvalidInput("knn: covariate dimension mismatch");
    }
    const auto n = static_cast<std::size_t>(x_.rows());
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      const double* row = x_.data() + static_cast<Eigen::Index>(i) * x_.cols();
      for (std::size_t j = 0; j < q.size(); ++j) {
        const double diff = row[j] - q[j];
        d2 += diff * diff;
      }
      dist[i] = {d2, i};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_ - 1), dist.end());
    std::vector<std::size_t> chosen(k_);
    for (std::size_t i = 0; i < k_; ++i) chosen[i] = dist[i].second;
    std::sort(chosen.begin(), chosen.end());
    double acc = 0.0;
    for (std::size_t i : chosen) acc += y_[static_cast<Eigen::Index>(i)];
    return acc / static_cast<double>(k_);
  }

 private:
  CovariateMatrix x_;
  Eigen::VectorXd y_;
  std::size_t k_;
};

class ConstantPredictor final : public Predictor {
 public:
  explicit ConstantPredictor(double value) : value_(value) {}
  double predict(std::span<const double>) const override { return value_; }

 private:
  double value_;
};

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double log1pexp(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

class LogisticPredictor final : public Predictor {
 public:
  explicit LogisticPredictor(Eigen::VectorXd w) : w_(std::move(w)) {}

  double predict(std::span<const double> x) const override {
    if (x.size() + 1 != static_cast<std::size_t>(w_.size())) {
      throw InvalidInput("propensity: covariate dimension mismatch");
    }
    double eta = w_[0];
    for (std::size_t j = 0; j < x.size(); ++j) eta += w_[static_cast<Eigen::Index>(j + 1)] * x[j];
    return std::clamp(sigmoid(eta), kPropensityFloor, kPropensityCeiling);
  }

 private:
  Eigen::VectorXd w_;
};

class DifferencePredictor final : public Predictor {
 public:
  DifferencePredictor(PredictorPtr treated, PredictorPtr control)
      : treated_(std::move(treated)), control_(std::move(control)) {}
  double predict(std::span<const double> x) const override {
    return treated_->predict(x) - control_->predict(x);
  }

 private:
  PredictorPtr treated_;
  PredictorPtr control_;
};

class XLearnerPredictor final : public Predictor {
 public:
  XLearnerPredictor(PredictorPtr tau0, PredictorPtr tau1, PredictorPtr propensity)
      : tau0_(std::move(tau0)), tau1_(std::move(tau1)), propensity_(std::move(propensity)) {}
  double predict(std::span<const double> x) const override {
    const double g = propensity_->predict(x);
    return g * tau0_->predict(x) + (1.0 - g) * tau1_->predict(x);
  }

 private:
  PredictorPtr tau0_;
  PredictorPtr tau1_;
  PredictorPtr propensity_;
};

struct ArmSplit {
  std::vector<std::size_t> treated;
  std::vector<std::size_t> control;
};

ArmSplit split_arms(const SiteDataset& data) {
  ArmSplit split;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.treatments[i] == 1 ? split.treated : split.control).push_back(i);
  }
  return split;
}

ArmSplit require_arms(const SiteDataset& data, std::size_t minimum) {
  data.validate();
  ArmSplit split = split_arms(data);
  if (split.treated.size() < minimum || split.control.size() < minimum) {
    throw InvalidInput("site " + data.site_id + ": each treatment arm needs at least " +
                       std::to_string(minimum) + " observations (treated " +
                       std::to_string(split.treated.size()) + ", control " +
                       std::to_string(split.control.size()) + ")");
  }
  return split;
}

PredictorPtr fit_on_rows(const SiteDataset& data, std::span<const std::size_t> rows,
                         const BaseLearnerConfig& base) {
  const SiteDataset part = data.subset(rows);
  return fit_base_regressor(part.covariates, part.outcomes, base);
}

// Fold index per row from a seeded Fisher-Yates permutation.
std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, StreamTag::kCrossFit);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::size_t> fold_of(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold_of[perm[pos]] = pos * folds / n;
  return fold_of;
}

bool folds_have_both_arms(const SiteDataset& data, const std::vector<std::size_t>& fold_of,
                          std::size_t folds) {
  for (std::size_t k = 0; k < folds; ++k) {
    std::size_t in_t = 0, in_c = 0, out_t = 0, out_c = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const bool treated = data.treatments[i] == 1;
      if (fold_of[i] == k) {
        (treated ? in_t : in_c)++;
      } else {
        (treated ? out_t : out_c)++;
      }
    }
    if (in_t == 0 || in_c == 0 || out_t == 0 || out_c == 0) return false;
  }
  return true;
}

}  // namespace

Eigen::VectorXd Predictor::predict_rows(const CovariateMatrix& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict(row_span(x, i));
  return out;
}

std::size_t SiteDataset::treated_count() const noexcept {
  return static_cast<std::size_t>(std::count(treatments.begin(), treatments.end(), 1));
}

void SiteDataset::validate() const {
  const auto n = static_cast<std::size_t>(outcomes.size());
  if (treatments.size() != n || static_cast<std::size_t>(covariates.rows()) != n) {
    throw InvalidInput("site " + site_id + ": outcomes, treatments and covariates disagree in length");
  }
  if (n < 2) throw InvalidInput("site " + site_id + ": at least two observations are required");
  if (!outcomes.allFinite() || !covariates.allFinite()) {
    throw InvalidInput("site " + site_id + ": non-finite values");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (treatments[i] != 0 && treatments[i] != 1) {
      throw InvalidInput("site " + site_id + ": treatment at row " + std::to_string(i + 1) +
                         " is not 0/1");
    }
  }
}

SiteDataset SiteDataset::subset(std::span<const std::size_t> rows) const {
  SiteDataset out;
  out.site_id = site_id;
  out.outcomes.resize(static_cast<Eigen::Index>(rows.size()));
  out.treatments.resize(rows.size());
  out.covariates.resize(static_cast<Eigen::Index>(rows.size()), covariates.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(rows[r]);
    const auto ri = static_cast<Eigen::Index>(r);
    out.outcomes[ri] = outcomes[i];
    out.treatments[r] = treatments[rows[r]];
    out.covariates.row(ri) = covariates.row(i);
  }
  return out;
}

SiteDataset concatenate(std::span<const SiteDataset> sites, std::string site_id) {
  if (sites.empty()) throw InvalidInput("no sites to concatenate");
  const Eigen::Index d = sites.front().covariates.cols();
  Eigen::Index n = 0;
  for (const auto& s : sites) {
    if (s.covariates.cols() != d) throw InvalidInput("sites have different covariate dimensions");
    n += s.outcomes.size();
  }
  SiteDataset out;
  out.site_id = std::move(site_id);
  out.outcomes.resize(n);
  out.covariates.resize(n, d);
  out.treatments.reserve(static_cast<std::size_t>(n));
  Eigen::Index offset = 0;
  for (const auto& s : sites) {
    const Eigen::Index m = s.outcomes.size();
    out.outcomes.segment(offset, m) = s.outcomes;
    out.covariates.middleRows(offset, m) = s.covariates;
    out.treatments.insert(out.treatments.end(), s.treatments.begin(), s.treatments.end());
    offset += m;
  }
  return out;
}

BaseLearnerKind parse_base_learner(const std::string& text) {
  if (text == "ridge" || text == "ridge_poly") return BaseLearnerKind::kRidgePoly;
  if (text == "knn") return BaseLearnerKind::kKnn;
  throw InvalidInput("unknown base learner '" + text + "' (expected ridge or knn)");
}

MetaLearnerKind parse_meta_learner(const std::string& text) {
  if (text == "t") return MetaLearnerKind::kT;
  if (text == "x") return MetaLearnerKind::kX;
  if (text == "dr") return MetaLearnerKind::kDr;
  throw InvalidInput("unknown learner '" + text + "' (expected t, x or dr)");
}

std::size_t poly_feature_count(std::size_t dimension) {
  return 1 + dimension + dimension * (dimension + 1) / 2;
}

void poly_features(std::span<const double> x, std::span<double> out) {
  const std::size_t d = x.size();
  std::size_t k = 0;
  out[k++] = 1.0;
  for (std::size_t j = 0; j < d; ++j) out[k++] = x[j];
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t l = j; l < d; ++l) out[k++] = x[j] * x[l];
  }
}

PredictorPtr fit_base_regressor(const CovariateMatrix& x, const Eigen::VectorXd& y,
                                const BaseLearnerConfig& config) {
  if (x.rows() != y.size() || y.size() < 1) {
    throw InvalidInput("base regressor: need rows(X) == len(y) >= 1");
  }
  if (!x.allFinite() || !y.allFinite()) throw InvalidInput("base regressor: non-finite data");
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());

  switch (config.kind) {
    case BaseLearnerKind::kRidgePoly: {
      if (!(config.ridge_lambda > 0.0) || !std::isfinite(config.ridge_lambda)) {
        throw InvalidInput("ridge_poly: lambda must be positive and finite");
      }
      const std::size_t p = poly_feature_count(d);
      Eigen::MatrixXd phi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
      std::vector<double> buf(p);
      for (std::size_t i = 0; i < n; ++i) {
        poly_features(row_span(x, static_cast<Eigen::Index>(i)), buf);
        for (std::size_t j = 0; j < p; ++j) {
          phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = buf[j];
        }
      }
      Eigen::MatrixXd normal = phi.transpose() * phi;
      for (std::size_t j = 1; j < p; ++j) {
        normal(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += config.ridge_lambda;
      }
      const Eigen::VectorXd rhs = phi.transpose() * y;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
      if (ldlt.info() != Eigen::Success) throw NumericalError("ridge_poly: factorization failed", 0);
      return std::make_shared<RidgePolyPredictor>(ldlt.solve(rhs), d);
    }
    case BaseLearnerKind::kKnn: {
      if (config.knn_k == 0) throw InvalidInput("knn: k must be positive");
      return std::make_shared<KnnPredictor>(x, y, std::min(config.knn_k, n));
    }
  }
  throw InvalidInput("unknown base learner kind");
}

PredictorPtr fit_propensity(const CovariateMatrix& x, std::span<const int> treatments,
                            const PropensityConfig& config) {
  if (config.known_constant) {
    const double c = *config.known_constant;
    if (!(c > 0.0 && c < 1.0)) throw InvalidInput("known propensity must lie in (0, 1)");
    return std::make_shared<ConstantPredictor>(c);
  }
  const auto n = static_cast<Eigen::Index>(treatments.size());
  if (x.rows() != n || n == 0) throw InvalidInput("propensity: rows(X) must equal len(A) > 0");
  std::size_t treated = 0;
  for (int a : treatments) {
    if (a != 0 && a != 1) throw InvalidInput("propensity: treatments must be 0/1");
    treated += static_cast<std::size_t>(a);
  }
  if (treated == 0 || treated == static_cast<std::size_t>(n)) {
    throw InvalidInput("propensity: both treatment classes must be present");
  }

  const Eigen::Index p = x.cols() + 1;
  Eigen::MatrixXd design(n, p);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = treatments[static_cast<std::size_t>(i)];

  const auto log_likelihood = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd eta = design * w;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += a[i] * eta[i] - log1pexp(eta[i]);
    return ll / static_cast<double>(n);
  };

  constexpr std::size_t kMaxIter = 100;
  constexpr double kGradTol = 1e-8;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  double ll = log_likelihood(w);
  for (std::size_t it = 0; it < kMaxIter; ++it) {
    const Eigen::VectorXd eta = design * w;
    Eigen::VectorXd prob(n), weight(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = sigmoid(eta[i]);
      weight[i] = prob[i] * (1.0 - prob[i]);
    }
    const Eigen::VectorXd grad = design.transpose() * (a - prob) / static_cast<double>(n);
    if (grad.norm() < kGradTol) return std::make_shared<LogisticPredictor>(w);
    Eigen::MatrixXd hess = design.transpose() * weight.asDiagonal() * design / static_cast<double>(n);
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) throw NumericalError("propensity: singular Newton system", it + 1);
    // Step halving keeps the likelihood monotone.
    double t = 1.0;
    Eigen::VectorXd candidate = w + step;
    double ll_new = log_likelihood(candidate);
    while (ll_new < ll && t > 1e-10) {
      t *= 0.5;
      candidate = w + t * step;
      ll_new = log_likelihood(candidate);
    }
    if (ll_new < ll) throw NumericalError("propensity: line search failed", it + 1);
    w = std::move(candidate);
    ll = ll_new;
  }
  throw NumericalError("propensity: Newton-Raphson did not converge", kMaxIter);
}

PredictorPtr fit_t_learner(const SiteDataset& data, const BaseLearnerConfig& base) {
  const ArmSplit arms = require_arms(data, 2);
  return std::make_shared<DifferencePredictor>(fit_on_rows(data, arms.treated, base),
                                               fit_on_rows(data, arms.control, base));
}

PredictorPtr make_x_learner_predictor(PredictorPtr tau0, PredictorPtr tau1, PredictorPtr propensity) {
  return std::make_shared<XLearnerPredictor>(std::move(tau0), std::move(tau1), std::move(propensity));
}

PredictorPtr fit_x_learner(const SiteDataset& data, const BaseLearnerConfig& base,
                           const PropensityConfig& propensity) {
  const ArmSplit arms = require_arms(data, 2);
  const PredictorPtr mu1 = fit_on_rows(data, arms.treated, base);
  const PredictorPtr mu0 = fit_on_rows(data, arms.control, base);

  SiteDataset treated = data.subset(arms.treated);
  SiteDataset control = data.subset(arms.control);
  Eigen::VectorXd imputed_treated = treated.outcomes - mu0->predict_rows(treated.covariates);
  Eigen::VectorXd imputed_control = mu1->predict_rows(control.covariates) - control.outcomes;
  PredictorPtr tau1 = fit_base_regressor(treated.covariates, imputed_treated, base);
  PredictorPtr tau0 = fit_base_regressor(control.covariates, imputed_control, base);
  PredictorPtr g = fit_propensity(data.covariates, data.treatments, propensity);
  return make_x_learner_predictor(std::move(tau0), std::move(tau1), std::move(g));
}

double dr_pseudo_outcome(int treatment, double outcome, double propensity, double mu0, double mu1) {
  const double mu_a = treatment == 1 ? mu1 : mu0;
  return (treatment - propensity) / (propensity * (1.0 - propensity)) * (outcome - mu_a) + mu1 - mu0;
}

PredictorPtr fit_dr_learner(const SiteDataset& data, const BaseLearnerConfig& base,
                            const PropensityConfig& propensity, std::size_t folds,
                            std::uint64_t seed) {
  require_arms(data, 2);
  if (folds < 2) throw InvalidInput("DR-learner: at least two folds are required");
  if (folds > data.size()) throw InvalidInput("DR-learner: more folds than observations");

  std::vector<std::size_t> fold_of = assign_folds(data.size(), folds, seed);
  if (!folds_have_both_arms(data, fold_of, folds)) {
    fold_of = assign_folds(data.size(), folds, seed + 1);
    if (!folds_have_both_arms(data, fold_of, folds)) {
      throw InvalidInput("DR-learner: site " + data.site_id +
                         ": cross-fitting folds lack a treatment arm after reshuffling");
    }
  }

  Eigen::VectorXd pseudo(static_cast<Eigen::Index>(data.size()));
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> held, train_t, train_c, train;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (fold_of[i] == k) {
        held.push_back(i);
      } else {
        train.push_back(i);
        (data.treatments[i] == 1 ? train_t : train_c).push_back(i);
      }
    }
    const PredictorPtr mu1 = fit_on_rows(data, train_t, base);
    const PredictorPtr mu0 = fit_on_rows(data, train_c, base);
    const SiteDataset train_data = data.subset(train);
    const PredictorPtr pi = fit_propensity(train_data.covariates, train_data.treatments, propensity);
    for (std::size_t i : held) {
      const auto x = row_span(data.covariates, static_cast<Eigen::Index>(i));
      const auto ii = static_cast<Eigen::Index>(i);
      pseudo[ii] = dr_pseudo_outcome(data.treatments[i], data.outcomes[ii], pi->predict(x),
                                     mu0->predict(x), mu1->predict(x));
    }
  }
  return fit_base_regressor(data.covariates, pseudo, base);
}

PredictorPtr fit_cate(const SiteDataset& data, const MetaLearnerConfig& config) {
  switch (config.kind) {
    case MetaLearnerKind::kT:
      return fit_t_learner(data, config.base);
    case MetaLearnerKind::kX:
      return fit_x_learner(data, config.base, config.propensity);
    case MetaLearnerKind::kDr:
      return fit_dr_learner(data, config.base, config.propensity, config.folds, config.seed);
  }
  throw InvalidInput("unknown meta-learner kind");
}

}  // namespace cate_forge
