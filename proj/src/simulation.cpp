#include "cate_forge/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "cate_forge/errors.hpp"

namespace cate_forge {
namespace {

constexpr std::size_t kMinSiteSize = 20;

std::span<const double> row_of(const CovariateMatrix& x, Eigen::Index i) {
  return {x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())};
}

double logistic_bump(double v) { return 2.0 / (1.0 + std::exp(-12.0 * (v - 0.5))); }

double setting_a_tau(double beta, std::span<const double> x) {
  return beta * positive_part(x[0]) + 0.2 * (x[0] * x[1] + x[1] * x[2]);
}

// Runs fn(i) for i in [0, n) on a pool; results are written by index so the
// output order never depends on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// Shifted by the first value so identical replications give exactly that
// value and a zero standard error.
double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x - v.front();
  return v.front() + acc / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  const double shift = mean - v.front();
  double acc = 0.0;
  for (double x : v) {
    const double dev = (x - v.front()) - shift;
    acc += dev * dev;
  }
  return std::sqrt(acc / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

Setting parse_setting(const std::string& text) {
  if (text == "A" || text == "a") return Setting::kA;
  if (text == "B" || text == "b") return Setting::kB;
  throw InvalidInput("unknown setting '" + text + "' (expected A or B)");
}

std::string to_string(Setting setting) { return setting == Setting::kA ? "A" : "B"; }

Vector DgpConfig::allocation_or_balanced() const {
  if (allocation.size() == 0) return Vector::Constant(static_cast<Eigen::Index>(n_sites), 1.0 / static_cast<double>(n_sites));
  return allocation;
}

void DgpConfig::validate() const {
  if (n_sites == 0) throw InvalidInput("n_sites must be positive");
  if (n_target == 0) throw InvalidInput("n_target must be positive");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw InvalidInput("noise_sd must be finite and >= 0");
  if (site_alphas && site_alphas->size() != n_sites) throw InvalidInput("site_alphas length differs from n_sites");
  if (site_betas && site_betas->size() != n_sites) throw InvalidInput("site_betas length differs from n_sites");
  const Vector q = allocation_or_balanced();
  if (static_cast<std::size_t>(q.size()) != n_sites) throw InvalidInput("allocation length differs from n_sites");
  if (!q.allFinite() || q.minCoeff() < 0.0 || std::fabs(q.sum() - 1.0) > 1e-9) {
    throw InvalidInput("allocation must lie on the simplex");
  }
  const auto sizes = site_sample_sizes(*this);
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] < kMinSiteSize) {
      throw InvalidInput("site " + std::to_string(s + 1) + " gets " + std::to_string(sizes[s]) +
                         " observations; at least " + std::to_string(kMinSiteSize) + " are required");
    }
  }
}

double sample_mixture_param(Rng& rng) {
  const double u = rng.uniform();
  const double z = rng.normal();
  return (u < 0.7 ? 0.0 : 3.0) + 0.75 * z;
}

SiteParams sample_site_params(std::size_t sites, std::uint64_t seed) {
  if (sites == 0) throw InvalidInput("sample_site_params: need at least one site");
  Rng rng(seed);
  SiteParams params;
  params.alphas.resize(sites);
  params.betas.resize(sites);
  for (auto& a : params.alphas) a = sample_mixture_param(rng);
  for (auto& b : params.betas) b = sample_mixture_param(rng);
  return params;
}

SiteParams resolve_site_params(const DgpConfig& config) {
  SiteParams params;
  if (!config.site_alphas || !config.site_betas) {
    params = sample_site_params(config.n_sites, derive_seed(config.seed, StreamTag::kSiteParams));
  }
  if (config.site_alphas) params.alphas = *config.site_alphas;
  if (config.site_betas) params.betas = *config.site_betas;
  return params;
}

std::vector<std::size_t> site_sample_sizes(const DgpConfig& config) {
  const Vector q = config.allocation_or_balanced();
  const auto sites = static_cast<std::size_t>(q.size());
  std::vector<std::size_t> sizes(sites);
  std::vector<double> remainder(sites);
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < sites; ++s) {
    const double raw = static_cast<double>(config.n_total) * q[static_cast<Eigen::Index>(s)];
    sizes[s] = static_cast<std::size_t>(std::floor(raw));
    remainder[s] = raw - std::floor(raw);
    assigned += sizes[s];
  }
  std::vector<std::size_t> order(sites);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < config.n_total && k < sites; ++k, ++assigned) ++sizes[order[k]];
  return sizes;
}

double control_mean(double alpha, std::span<const double> x) {
  return alpha * x[0] + x[1] + x[2] + x[3] + x[4];
}

TrueCateBank::TrueCateBank(Setting setting, std::vector<double> betas)
    : setting_(setting), betas_(std::move(betas)) {
  if (betas_.empty()) throw InvalidInput("true CATE bank needs at least one site");
}

int TrueCateBank::setting_b_family(std::size_t site, std::size_t sites) {
  const std::size_t pos = site * 10 / sites;
  if (pos < 3) return 0;
  if (pos < 6) return 1;
  return 2;
}

double TrueCateBank::tau(std::size_t site, std::span<const double> x) const {
  if (x.size() != kCovariateDim) throw InvalidInput("true CATE expects 5 covariates");
  const double beta = betas_.at(site);
  if (setting_ == Setting::kA) return setting_a_tau(beta, x);
  switch (setting_b_family(site, betas_.size())) {
    case 0:
      return beta * 0.6 + logistic_bump(x[0]) * logistic_bump(x[4]);
    case 1:
      return setting_a_tau(beta, x);
    default:
      return beta * 0.5 * x[1] * x[1] + 0.3 * (x[2] + x[3]);
  }
}

Vector TrueCateBank::tau_rows(std::size_t site, const CovariateMatrix& x) const {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = tau(site, row_of(x, i));
  return out;
}

Matrix TrueCateBank::tau_matrix(const CovariateMatrix& x) const {
  Matrix out(x.rows(), static_cast<Eigen::Index>(size()));
  for (std::size_t s = 0; s < size(); ++s) out.col(static_cast<Eigen::Index>(s)) = tau_rows(s, x);
  return out;
}

double TrueCateBank::mixture(const Vector& weights, std::span<const double> x) const {
  if (static_cast<std::size_t>(weights.size()) != size()) {
    throw InvalidInput("mixture weights length differs from the number of sites");
  }
  double acc = 0.0;
  for (std::size_t s = 0; s < size(); ++s) acc += weights[static_cast<Eigen::Index>(s)] * tau(s, x);
  return acc;
}

PredictorPtr TrueCateBank::predictor(std::size_t site) const {
  if (site >= size()) throw InvalidInput("site index out of range");
  TrueCateBank copy = *this;
  return make_predictor([copy, site](std::span<const double> x) { return copy.tau(site, x); });
}

SiteDataset generate_site(const DgpConfig& config, std::size_t site, const SiteParams& params) {
  if (site >= config.n_sites) throw InvalidInput("site index out of range");
  if (params.alphas.size() != config.n_sites || params.betas.size() != config.n_sites) {
    throw InvalidInput("site parameter vectors must have n_sites entries");
  }
  const std::size_t n = site_sample_sizes(config).at(site);
  if (n < kMinSiteSize) {
    throw InvalidInput("site " + std::to_string(site + 1) + " has " + std::to_string(n) +
                       " observations; at least 20 are required");
  }
  const TrueCateBank bank(config.setting, params.betas);
  Rng rng(config.seed, StreamTag::kSiteData, {site});

  SiteDataset data;
  data.site_id = "site_" + std::to_string(site + 1);
  data.outcomes.resize(static_cast<Eigen::Index>(n));
  data.treatments.resize(n);
  data.covariates.resize(static_cast<Eigen::Index>(n), kCovariateDim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kCovariateDim); ++j) data.covariates(ii, j) = rng.normal();
    const int a = rng.bernoulli(0.5) ? 1 : 0;
    const double eps = config.noise_sd * rng.normal();
    const auto x = row_of(data.covariates, ii);
    data.treatments[i] = a;
    data.outcomes[ii] = control_mean(params.alphas[site], x) + a * bank.tau(site, x) + eps;
  }
  return data;
}

CovariateMatrix generate_target_covariates(const DgpConfig& config) {
  if (config.n_target == 0) throw InvalidInput("n_target must be positive");
  Rng rng(config.seed, StreamTag::kTargetCovariates);
  CovariateMatrix x(static_cast<Eigen::Index>(config.n_target), kCovariateDim);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  }
  return x;
}

AllocationScenario AllocationScenario::parse(const std::string& text) {
  if (text == "balanced") return {AllocationKind::kBalanced, 0};
  if (text == "half-first") return {AllocationKind::kHalfFirst, 0};
  if (text == "half-second") return {AllocationKind::kHalfSecond, 0};
  const std::string prefix = "one-large:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string rest = text.substr(prefix.size());
    std::size_t pos = 0;
    long k = 0;
    try {
      k = std::stol(rest, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != rest.size() || k < 1) {
      throw InvalidInput("one-large needs a 1-based site index, got '" + rest + "'");
    }
    return {AllocationKind::kOneLarge, static_cast<std::size_t>(k - 1)};
  }
  throw InvalidInput("unknown allocation '" + text +
                     "' (expected balanced, half-first, half-second or one-large:<k>)");
}

std::string AllocationScenario::label() const {
  switch (kind) {
    case AllocationKind::kBalanced:
      return "balanced";
    case AllocationKind::kHalfFirst:
      return "half-first";
    case AllocationKind::kHalfSecond:
      return "half-second";
    case AllocationKind::kOneLarge:
      return "one-large:" + std::to_string(large_site + 1);
  }
  return "unknown";
}

Vector make_allocation(const AllocationScenario& scenario, std::size_t sites) {
  if (sites == 0) throw InvalidInput("allocation needs at least one site");
  std::vector<double> units(sites, 1.0);
  switch (scenario.kind) {
    case AllocationKind::kBalanced:
      break;
    case AllocationKind::kHalfFirst:
    case AllocationKind::kHalfSecond: {
      if (sites % 2 != 0) throw InvalidInput("half-and-half allocation needs an even number of sites");
      const std::size_t begin = scenario.kind == AllocationKind::kHalfFirst ? 0 : sites / 2;
      for (std::size_t s = begin; s < begin + sites / 2; ++s) units[s] = 3.0;
      break;
    }
    case AllocationKind::kOneLarge:
      if (scenario.large_site >= sites) throw InvalidInput("one-large site index out of range");
      units[scenario.large_site] = 10.0;
      break;
  }
  const double total = std::accumulate(units.begin(), units.end(), 0.0);
  Vector q(static_cast<Eigen::Index>(sites));
  for (std::size_t s = 0; s < sites; ++s) q[static_cast<Eigen::Index>(s)] = units[s] / total;
  return q;
}

PredictorPtr make_mixture_target(const Vector& weights, const TrueCateBank& bank) {
  if (static_cast<std::size_t>(weights.size()) != bank.size()) {
    throw InvalidInput("mixture weights length differs from the number of sites");
  }
  if (!weights.allFinite() || weights.minCoeff() < 0.0 || std::fabs(weights.sum() - 1.0) > 1e-9) {
    throw InvalidInput("mixture weights must lie on the simplex");
  }
  return make_predictor([weights, bank](std::span<const double> x) { return bank.mixture(weights, x); });
}

ReplicationReport run_replication(const DgpConfig& config, std::span<const EnsembleMethod> methods,
                                  const SimulationLearnerConfig& learner, bool keep_predictions) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  if (methods.empty()) throw InvalidInput("no methods requested");
  const SiteParams params = resolve_site_params(config);
  const std::size_t sites = config.n_sites;

  std::vector<SiteDataset> data;
  data.reserve(sites);
  for (std::size_t s = 0; s < sites; ++s) data.push_back(generate_site(config, s, params));
  const CovariateMatrix target = generate_target_covariates(config);
  const TrueCateBank bank(config.setting, params.betas);
  const Matrix truth = bank.tau_matrix(target);

  Matrix site_preds(target.rows(), static_cast<Eigen::Index>(sites));
  for (std::size_t s = 0; s < sites; ++s) {
    PredictorPtr predictor;
    if (learner.oracle_sites) {
      predictor = bank.predictor(s);
    } else {
      MetaLearnerConfig meta = learner.meta;
      meta.seed = derive_seed(config.seed, StreamTag::kCrossFit, {s});
      predictor = fit_cate(data[s], meta);
    }
    site_preds.col(static_cast<Eigen::Index>(s)) = predictor->predict_rows(target);
  }
  const CatePredictionMatrix preds(site_preds);

  ReplicationReport report;
  report.seed = config.seed;
  report.site_rmse.resize(static_cast<Eigen::Index>(sites));
  for (std::size_t s = 0; s < sites; ++s) {
    const auto c = static_cast<Eigen::Index>(s);
    report.site_rmse[c] = std::sqrt(empirical_regret(site_preds.col(c), truth.col(c)));
  }

  for (EnsembleMethod method : methods) {
    Vector weights;
    Vector model;
    switch (method) {
      case EnsembleMethod::kRegret: {
        const AggregationResult r = regret_weights(preds);
        if (!r.solution.converged) throw NumericalError("regret weights did not converge", r.solution.iterations);
        weights = r.solution.weights;
        model = ensemble_predictions(preds, weights);
        break;
      }
      case EnsembleMethod::kRelativeRisk: {
        const AggregationResult r = relative_risk_weights(preds, Vector::Zero(target.rows()));
        if (!r.solution.converged) {
          throw NumericalError("relative-risk weights did not converge", r.solution.iterations);
        }
        weights = r.solution.weights;
        model = ensemble_predictions(preds, weights);
        break;
      }
      case EnsembleMethod::kPooled: {
        MetaLearnerConfig meta = learner.meta;
        meta.seed = derive_seed(config.seed, StreamTag::kCrossFit, {sites});
        model = fit_pooled(data, meta).predict_rows(target);
        break;
      }
      case EnsembleMethod::kRisk2Site:
        throw Unsupported("the two-site minimax-risk method is not part of the simulation protocol");
    }
    Vector regrets(static_cast<Eigen::Index>(sites));
    for (std::size_t s = 0; s < sites; ++s) {
      regrets[static_cast<Eigen::Index>(s)] = empirical_regret(model, truth.col(static_cast<Eigen::Index>(s)));
    }
    report.methods.push_back(method);
    report.worst_case.push_back(regrets.maxCoeff());
    report.per_site_regret.push_back(std::move(regrets));
    report.weights.push_back(std::move(weights));
    if (keep_predictions) report.method_predictions.push_back(std::move(model));
  }
  if (keep_predictions) report.truth = truth;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

DgpConfig replication_config(const DgpConfig& study, std::size_t rep, bool resample_params) {
  DgpConfig config = study;
  config.seed = derive_seed(study.seed, StreamTag::kReplication, {rep});
  if (!resample_params) {
    const SiteParams params = resolve_site_params(study);
    config.site_alphas = params.alphas;
    config.site_betas = params.betas;
  } else {
    // Explicitly supplied parameters are never resampled.
    if (!study.site_alphas || !study.site_betas) {
      const SiteParams params = resolve_site_params(config);
      if (!study.site_alphas) config.site_alphas = params.alphas;
      if (!study.site_betas) config.site_betas = params.betas;
    }
  }
  return config;
}

StudyTable summarize(std::vector<ReplicationReport> reports, std::uint64_t seed) {
  if (reports.empty()) throw InvalidInput("no replications to summarize");
  const auto& first = reports.front();
  StudyTable table;
  table.n_reps = reports.size();
  table.seed = seed;
  const Eigen::Index sites = first.site_rmse.size();

  table.mean_site_rmse = Vector::Zero(sites);
  for (const auto& r : reports) table.mean_site_rmse += r.site_rmse;
  table.mean_site_rmse /= static_cast<double>(reports.size());

  for (std::size_t m = 0; m < first.methods.size(); ++m) {
    MethodSummary summary;
    summary.method = first.methods[m];
    std::vector<double> worst;
    for (const auto& r : reports) {
      if (r.methods.size() != first.methods.size() || r.methods[m] != first.methods[m]) {
        throw InvalidInput("replication reports disagree on the method list");
      }
      worst.push_back(r.worst_case[m]);
    }
    summary.mean_worst_case = mean_of(worst);
    summary.stderr_worst_case = stderr_of(worst, summary.mean_worst_case);
    summary.mean_site_regret.resize(sites);
    summary.stderr_site_regret.resize(sites);
    for (Eigen::Index s = 0; s < sites; ++s) {
      std::vector<double> values;
      for (const auto& r : reports) values.push_back(r.per_site_regret[m][s]);
      summary.mean_site_regret[s] = mean_of(values);
      summary.stderr_site_regret[s] = stderr_of(values, summary.mean_site_regret[s]);
    }
    table.methods.push_back(std::move(summary));
  }
  table.reports = std::move(reports);
  return table;
}

StudyTable run_study(const DgpConfig& config, std::span<const EnsembleMethod> methods,
                     const SimulationLearnerConfig& learner, const StudyOptions& options) {
  if (options.n_reps == 0) throw InvalidInput("n_reps must be at least 1");
  config.validate();
  std::vector<ReplicationReport> reports(options.n_reps);
  const std::size_t threads = options.threads == 0 ? default_thread_count() : options.threads;
  parallel_for(options.n_reps, threads, [&](std::size_t rep) {
    reports[rep] = run_replication(replication_config(config, rep, options.resample_params), methods, learner,
                                   options.keep_predictions);
  });
  return summarize(std::move(reports), config.seed);
}

double max_mixture_regret(const Vector& model_preds, const Matrix& truth, std::size_t n_mixtures,
                          std::uint64_t seed) {
  if (model_preds.size() != truth.rows()) throw InvalidInput("prediction and truth rows differ");
  Rng rng(seed, StreamTag::kMixtures);
  double worst = -std::numeric_limits<double>::infinity();
  Vector w(truth.cols());
  for (std::size_t m = 0; m < n_mixtures; ++m) {
    for (Eigen::Index s = 0; s < w.size(); ++s) w[s] = -std::log(rng.uniform_open());
    w /= w.sum();
    worst = std::max(worst, empirical_regret(model_preds, truth * w));
  }
  return worst;
}

Vector ensemble_error_ladder(const TrueCateBank& bank, const CovariateMatrix& target,
                             std::span<const double> deltas, std::uint64_t seed) {
  const Matrix truth = bank.tau_matrix(target);
  const CatePredictionMatrix oracle(truth);
  const AggregationResult oracle_fit = regret_weights(oracle);
  const Vector oracle_model = ensemble_predictions(oracle, oracle_fit.solution.weights);

  Rng rng(seed, StreamTag::kPerturbation);
  Matrix noise(truth.rows(), truth.cols());
  for (Eigen::Index s = 0; s < truth.cols(); ++s) {
    const double intercept = rng.normal();
    Vector slope(target.cols());
    for (Eigen::Index j = 0; j < slope.size(); ++j) slope[j] = rng.normal();
    for (Eigen::Index i = 0; i < truth.rows(); ++i) noise(i, s) = intercept + target.row(i).dot(slope);
    noise.col(s) /= std::sqrt(noise.col(s).squaredNorm() / static_cast<double>(noise.rows()));
  }

  Vector distances(static_cast<Eigen::Index>(deltas.size()));
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const CatePredictionMatrix perturbed(truth + deltas[k] * noise);
    const AggregationResult fit = regret_weights(perturbed);
    const Vector model = ensemble_predictions(perturbed, fit.solution.weights);
    distances[static_cast<Eigen::Index>(k)] = std::sqrt(empirical_regret(model, oracle_model));
  }
  return distances;
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("CATE_FORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace cate_forge
