#include "cate_forge/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cate_forge/errors.hpp"

namespace cate_forge {
namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // rows[i] is data row i + 1
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool have_header = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!have_header) {
      table.header = split_fields(line);
      have_header = true;
      continue;
    }
    ++row;
    auto fields = split_fields(line);
    if (fields.size() != table.header.size()) {
      throw ParseError(path.string(), row, "",
                       "expected " + std::to_string(table.header.size()) + " fields, found " +
                           std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ParseError(path.string(), 0, "", "empty file");
  if (table.rows.empty()) throw ParseError(path.string(), 0, "", "no data rows");
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (table.header[j].empty()) throw ParseError(path.string(), 0, "", "empty column name at position " +
                                                                             std::to_string(j + 1));
  }
  return table;
}

double parse_number(const std::filesystem::path& path, std::size_t row, const std::string& column,
                    const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc() || ptr != last) {
    throw ParseError(path.string(), row, column, "non-numeric value '" + text + "'");
  }
  if (!std::isfinite(value)) throw ParseError(path.string(), row, column, "non-finite value '" + text + "'");
  return value;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  return out;
}

std::string json_number(double v) { return std::isfinite(v) ? format_double(v) : "null"; }

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

Matrix numeric_block(const CsvTable& table, const std::filesystem::path& path) {
  Matrix m(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t j = 0; j < table.header.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_number(path, i + 1, table.header[j], table.rows[i][j]);
    }
  }
  return m;
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

SiteDataset load_site_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const auto& h = table.header;
  if (h.size() < 3) throw ParseError(path.string(), 0, "", "expected header y,a,x1,...,xd");
  if (h[0] != "y") throw ParseError(path.string(), 0, "y", "first column must be 'y', found '" + h[0] + "'");
  if (h[1] != "a") throw ParseError(path.string(), 0, "a", "second column must be 'a', found '" + h[1] + "'");
  for (std::size_t j = 2; j < h.size(); ++j) {
    const std::string expected = "x" + std::to_string(j - 1);
    if (h[j] != expected) {
      throw ParseError(path.string(), 0, expected, "expected column '" + expected + "', found '" + h[j] + "'");
    }
  }
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  const auto d = static_cast<Eigen::Index>(h.size() - 2);
  SiteDataset data;
  data.site_id = path.stem().string();
  data.outcomes.resize(n);
  data.treatments.resize(static_cast<std::size_t>(n));
  data.covariates.resize(n, d);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const auto ii = static_cast<Eigen::Index>(i);
    data.outcomes[ii] = parse_number(path, i + 1, "y", r[0]);
    const double a = parse_number(path, i + 1, "a", r[1]);
    if (a != 0.0 && a != 1.0) {
      throw ParseError(path.string(), i + 1, "a", "treatment must be 0 or 1, found '" + r[1] + "'");
    }
    data.treatments[i] = static_cast<int>(a);
    for (Eigen::Index j = 0; j < d; ++j) {
      data.covariates(ii, j) = parse_number(path, i + 1, h[static_cast<std::size_t>(j) + 2], r[static_cast<std::size_t>(j) + 2]);
    }
  }
  return data;
}

void write_site_csv(const SiteDataset& data, const std::filesystem::path& path) {
  data.validate();
  auto out = open_out(path);
  out << "y,a";
  for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    out << format_double(data.outcomes[ii]) << ',' << data.treatments[i];
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) out << ',' << format_double(data.covariates(ii, j));
    out << '\n';
  }
}

CatePredictionMatrix load_predictions_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  return CatePredictionMatrix(numeric_block(table, path), table.header);
}

void write_predictions_csv(const CatePredictionMatrix& preds, const std::filesystem::path& path) {
  preds.validate();
  auto out = open_out(path);
  for (std::size_t s = 0; s < preds.n_sites(); ++s) out << (s ? "," : "") << preds.site_ids[s];
  out << '\n';
  for (Eigen::Index i = 0; i < preds.values.rows(); ++i) {
    for (Eigen::Index s = 0; s < preds.values.cols(); ++s) out << (s ? "," : "") << format_double(preds.values(i, s));
    out << '\n';
  }
}

CovariateMatrix load_covariates_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    const std::string expected = "x" + std::to_string(j + 1);
    if (table.header[j] != expected) {
      throw ParseError(path.string(), 0, expected,
                       "expected column '" + expected + "', found '" + table.header[j] + "'");
    }
  }
  return numeric_block(table, path);
}

void write_covariates_csv(const CovariateMatrix& x, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << 'x' << (j + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << format_double(x(i, j));
    out << '\n';
  }
}

Vector load_vector_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  if (table.header.size() != 1) {
    throw ParseError(path.string(), 0, "", "expected a single column, found " + std::to_string(table.header.size()));
  }
  return numeric_block(table, path).col(0);
}

void write_vector_csv(const Vector& v, const std::string& header, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << header << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) out << format_double(v[i]) << '\n';
}

PolytopeSpec load_polytope_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const Matrix m = numeric_block(table, path);
  std::vector<Vector> vertices;
  for (Eigen::Index i = 0; i < m.rows(); ++i) vertices.emplace_back(m.row(i).transpose());
  return PolytopeSpec(std::move(vertices));
}

std::string weights_report_json(const WeightsReport& r) {
  std::ostringstream out;
  out << "{\n  \"method\": " << json_string(r.method) << ",\n  \"site_ids\": [";
  for (std::size_t s = 0; s < r.site_ids.size(); ++s) out << (s ? ", " : "") << json_string(r.site_ids[s]);
  out << "],\n  \"weights\": [";
  for (Eigen::Index s = 0; s < r.weights.size(); ++s) out << (s ? ", " : "") << json_number(r.weights[s]);
  out << "]";
  const auto field = [&](const char* key, const std::optional<double>& v) {
    if (v) out << ",\n  \"" << key << "\": " << json_number(*v);
  };
  field("worst_case_regret", r.worst_case_regret);
  field("kkt_residual", r.kkt_residual);
  field("lambda_min", r.lambda_min);
  field("objective", r.objective);
  if (r.converged) out << ",\n  \"converged\": " << (*r.converged ? "true" : "false");
  if (r.iterations) out << ",\n  \"iterations\": " << *r.iterations;
  field("oracle_objective", r.oracle_objective);
  field("oracle_gap", r.oracle_gap);
  if (r.oracle_divisions) out << ",\n  \"oracle_divisions\": " << *r.oracle_divisions;
  if (!r.note.empty()) out << ",\n  \"note\": " << json_string(r.note);
  out << "\n}\n";
  return out.str();
}

void write_weights_json(const WeightsReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << weights_report_json(report);
}

Vector load_weights_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), 0, "", std::string("invalid JSON: ") + e.what());
  }
  const nlohmann::json* array = &doc;
  if (doc.is_object()) {
    if (!doc.contains("weights")) throw ParseError(path.string(), 0, "weights", "missing \"weights\" array");
    array = &doc["weights"];
  }
  if (!array->is_array() || array->empty()) throw ParseError(path.string(), 0, "weights", "weights must be a non-empty array");
  Vector w(static_cast<Eigen::Index>(array->size()));
  for (std::size_t i = 0; i < array->size(); ++i) {
    if (!(*array)[i].is_number()) throw ParseError(path.string(), 0, "weights", "non-numeric weight");
    w[static_cast<Eigen::Index>(i)] = (*array)[i].get<double>();
  }
  return w;
}

void write_study_csv(const StudyTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,site,mean_regret,stderr\n";
  for (const auto& m : table.methods) {
    for (Eigen::Index s = 0; s < m.mean_site_regret.size(); ++s) {
      out << to_string(m.method) << ",site_" << (s + 1) << ',' << format_double(m.mean_site_regret[s]) << ','
          << format_double(m.stderr_site_regret[s]) << '\n';
    }
  }
  for (const auto& m : table.methods) {
    out << to_string(m.method) << ",worst_case," << format_double(m.mean_worst_case) << ','
        << format_double(m.stderr_worst_case) << '\n';
  }
}

void write_plotdata_csv(const StudyTable& table, const std::string& scenario,
                        const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,scenario,site,mean,stderr\n";
  for (const auto& m : table.methods) {
    for (Eigen::Index s = 0; s < m.mean_site_regret.size(); ++s) {
      out << to_string(m.method) << ',' << scenario << ",site_" << (s + 1) << ','
          << format_double(m.mean_site_regret[s]) << ',' << format_double(m.stderr_site_regret[s]) << '\n';
    }
    out << to_string(m.method) << ',' << scenario << ",worst_case," << format_double(m.mean_worst_case) << ','
        << format_double(m.stderr_worst_case) << '\n';
  }
}

}  // namespace cate_forge
