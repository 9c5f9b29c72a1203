#pragma once

// Monte Carlo benchmark harness: multisite data generation (Settings A and B),
// site-parameter sampling, allocation scenarios and replicated evaluation of
// the ensemble methods against the known site CATEs.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cate_forge/aggregation.hpp"
#include "cate_forge/learners.hpp"
#include "cate_forge/rng.hpp"

namespace cate_forge {

inline constexpr std::size_t kCovariateDim = 5;

enum class Setting { kA, kB };

Setting parse_setting(const std::string& text);
std::string to_string(Setting setting);

struct DgpConfig {
  Setting setting = Setting::kA;
  std::size_t n_sites = 10;
  std::optional<std::vector<double>> site_alphas;  ///< sampled from the seed when absent
  std::optional<std::vector<double>> site_betas;
  Vector allocation;  ///< empty means balanced
  std::size_t n_total = 5000;
  std::size_t n_target = 10000;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;

  /// Throws InvalidInput on inconsistent sizes, an allocation off the simplex
  /// or a site with fewer than 20 observations.
  void validate() const;
  Vector allocation_or_balanced() const;
};

struct SiteParams {
  std::vector<double> alphas;
  std::vector<double> betas;
};

/// One draw from 0.7 N(0, 0.75^2) + 0.3 N(3, 0.75^2).
double sample_mixture_param(Rng& rng);

/// S i.i.d. mixture draws for alpha, then S for beta, from one stream.
SiteParams sample_site_params(std::size_t sites, std::uint64_t seed);

/// Explicit parameters from the config, or sample_site_params on a stream
/// derived from config.seed.
SiteParams resolve_site_params(const DgpConfig& config);

/// round(n_total * q_mix) with largest-remainder correction (ties to the
/// lower index), so the counts sum to n_total.
std::vector<std::size_t> site_sample_sizes(const DgpConfig& config);

/// Baseline outcome mean alpha x1 + x2 + x3 + x4 + x5.
double control_mean(double alpha, std::span<const double> x);

/// The true site CATE functions for a setting and a vector of betas.
class TrueCateBank {
 public:
  TrueCateBank(Setting setting, std::vector<double> betas);

  std::size_t size() const noexcept { return betas_.size(); }
  Setting setting() const noexcept { return setting_; }
  const std::vector<double>& betas() const noexcept { return betas_; }

  double tau(std::size_t site, std::span<const double> x) const;
  Vector tau_rows(std::size_t site, const CovariateMatrix& x) const;
  /// n x S matrix of tau_s at the rows of x.
  Matrix tau_matrix(const CovariateMatrix& x) const;
  /// sum_s q_s tau_s(x).
  double mixture(const Vector& weights, std::span<const double> x) const;
  PredictorPtr predictor(std::size_t site) const;

  /// Setting B functional family of a site: 0 logistic, 1 piecewise linear,
  /// 2 quadratic. With 10 sites the blocks are {1-3}, {4-6}, {7-10}.
  static int setting_b_family(std::size_t site, std::size_t sites);

 private:
  Setting setting_;
  std::vector<double> betas_;
};

/// Half-rectified x1: x1 1(x1 > 0).
inline double positive_part(double v) { return v > 0.0 ? v : 0.0; }

SiteDataset generate_site(const DgpConfig& config, std::size_t site, const SiteParams& params);
CovariateMatrix generate_target_covariates(const DgpConfig& config);

enum class AllocationKind { kBalanced, kHalfFirst, kHalfSecond, kOneLarge };

struct AllocationScenario {
  AllocationKind kind = AllocationKind::kBalanced;
  std::size_t large_site = 0;  ///< 0-based, for kOneLarge

  /// balanced | half-first | half-second | one-large:<k> (k is 1-based).
  static AllocationScenario parse(const std::string& text);
  std::string label() const;
};

/// Exact rational weights: balanced 1/S; half-and-half 3:1 between halves;
/// one-large 10:1.
Vector make_allocation(const AllocationScenario& scenario, std::size_t sites);

/// tau_Q = sum_s q_s tau_s as a predictor.
PredictorPtr make_mixture_target(const Vector& weights, const TrueCateBank& bank);

struct SimulationLearnerConfig {
  MetaLearnerConfig meta = default_meta();
  bool oracle_sites = false;  ///< use the true tau_s as site predictors

  static MetaLearnerConfig default_meta() {
    MetaLearnerConfig m;
    m.propensity.known_constant = 0.5;
    return m;
  }
};

struct ReplicationReport {
  std::vector<EnsembleMethod> methods;
  std::vector<Vector> per_site_regret;  ///< per method, length S
  std::vector<double> worst_case;       ///< per method
  std::vector<Vector> weights;          ///< per method; empty for pooled
  Vector site_rmse;                     ///< site learner RMSE vs truth on the target draws
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;

  // Filled when requested; used for mixture/vertex checks.
  Matrix truth;                          ///< n_Q x S true site CATEs
  std::vector<Vector> method_predictions;
};

ReplicationReport run_replication(const DgpConfig& config, std::span<const EnsembleMethod> methods,
                                  const SimulationLearnerConfig& learner, bool keep_predictions = false);

struct StudyOptions {
  std::size_t n_reps = 50;
  bool resample_params = false;  ///< redraw alpha/beta per replication
  std::size_t threads = 0;       ///< 0: CATE_FORGE_THREADS or hardware concurrency
  bool keep_predictions = false;
};

struct MethodSummary {
  EnsembleMethod method = EnsembleMethod::kRegret;
  double mean_worst_case = 0.0;
  double stderr_worst_case = 0.0;
  Vector mean_site_regret;
  Vector stderr_site_regret;
};

struct StudyTable {
  std::vector<MethodSummary> methods;
  Vector mean_site_rmse;
  std::size_t n_reps = 0;
  std::uint64_t seed = 0;
  std::vector<ReplicationReport> reports;
};

/// Per-replication config: seed derived from (study seed, rep); parameters
/// fixed to the study's unless resampling is requested.
DgpConfig replication_config(const DgpConfig& study, std::size_t rep, bool resample_params);

StudyTable run_study(const DgpConfig& config, std::span<const EnsembleMethod> methods,
                     const SimulationLearnerConfig& learner, const StudyOptions& options = {});

/// Means and standard errors (n - 1 denominator; 0 for a single report).
StudyTable summarize(std::vector<ReplicationReport> reports, std::uint64_t seed);

/// Largest regret of model_preds against Dirichlet(1) mixtures of the truth columns.
double max_mixture_regret(const Vector& model_preds, const Matrix& truth, std::size_t n_mixtures,
                          std::uint64_t seed);

/// L2 distance between the regret ensemble built from perturbed predictions
/// tau_s + delta * e_s and the oracle regret ensemble, for each delta. The
/// perturbations e_s are random affine functions with unit RMS on the target
/// draws, drawn once per seed and shared across deltas.
Vector ensemble_error_ladder(const TrueCateBank& bank, const CovariateMatrix& target,
                             std::span<const double> deltas, std::uint64_t seed);

/// Thread count for replication pools: CATE_FORGE_THREADS when set, else the
/// hardware concurrency (at least 1).
std::size_t default_thread_count();

}  // namespace cate_forge
