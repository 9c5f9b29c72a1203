#pragma once

// File formats. Tabular data is CSV with a header row; weights and
// diagnostics are JSON. Floats are written with 17 significant digits so
// every writer/reader pair round-trips exactly.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cate_forge/aggregation.hpp"
#include "cate_forge/qp_core.hpp"
#include "cate_forge/simulation.hpp"

namespace cate_forge {

/// printf("%.17g").
std::string format_double(double value);

/// Header `y,a,x1,...,xd`; `a` in {0, 1}.
SiteDataset load_site_csv(const std::filesystem::path& path);
void write_site_csv(const SiteDataset& data, const std::filesystem::path& path);

/// Header of site labels (typically `site_1,...,site_S`); one row per target unit.
CatePredictionMatrix load_predictions_csv(const std::filesystem::path& path);
void write_predictions_csv(const CatePredictionMatrix& preds, const std::filesystem::path& path);

/// Header `x1,...,xd`.
CovariateMatrix load_covariates_csv(const std::filesystem::path& path);
void write_covariates_csv(const CovariateMatrix& x, const std::filesystem::path& path);

/// A single numeric column with any header.
Vector load_vector_csv(const std::filesystem::path& path);
void write_vector_csv(const Vector& v, const std::string& header, const std::filesystem::path& path);

/// One vertex per row, one column per site.
PolytopeSpec load_polytope_csv(const std::filesystem::path& path);

struct WeightsReport {
  std::string method;
  std::vector<std::string> site_ids;
  Vector weights;
  std::optional<double> worst_case_regret;
  std::optional<double> kkt_residual;
  std::optional<double> lambda_min;
  std::optional<double> objective;
  std::optional<bool> converged;
  std::optional<std::size_t> iterations;
  std::optional<double> oracle_objective;
  std::optional<double> oracle_gap;
  std::optional<std::size_t> oracle_divisions;
  std::string note;
};

std::string weights_report_json(const WeightsReport& report);
void write_weights_json(const WeightsReport& report, const std::filesystem::path& path);

/// Reads the "weights" array from a weights JSON object or a bare JSON array.
Vector load_weights_json(const std::filesystem::path& path);

/// One row per (method, site) with mean and standard error of the regret,
/// followed by a `worst_case` row per method.
void write_study_csv(const StudyTable& table, const std::filesystem::path& path);

/// Plot-ready rows: method, scenario, site, mean, stderr.
void write_plotdata_csv(const StudyTable& table, const std::string& scenario,
                        const std::filesystem::path& path);

}  // namespace cate_forge
