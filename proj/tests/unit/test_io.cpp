#include <gtest/gtest.h>

#include <fstream>

#include "cate_forge/errors.hpp"
#include "cate_forge/io.hpp"
#include "test_support.hpp"

using namespace cate_forge;
using cate_forge::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Values that stress shortest-round-trip formatting.
double awkward(Rng& rng) { return rng.normal() * std::pow(10.0, static_cast<double>(rng.below(30)) - 15.0); }

}  // namespace

TEST(FormatDouble, SeventeenSignificantDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(-1.0 / 3.0), "-0.33333333333333331");
}

TEST(SiteCsv, ParsesWellFormedFile) {
  TempDir dir;
  write_text(dir / "s.csv", "y,a,x1,x2\n1.5,1,0.1,0.2\n-2,0,1e-3,4\n0,1,5,6\n");
  const SiteDataset d = load_site_csv(dir / "s.csv");
  EXPECT_EQ(d.size(), 3U);
  EXPECT_EQ(d.dimension(), 2U);
  EXPECT_EQ(d.treatments, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(d.outcomes[1], -2.0);
  EXPECT_EQ(d.covariates(1, 0), 1e-3);
  EXPECT_EQ(d.site_id, "s");
}

TEST(SiteCsv, InvalidTreatmentCitesRowAndColumn) {
  TempDir dir;
  std::string text = "y,a,x1\n";
  for (int i = 1; i <= 9; ++i) text += "1," + std::string(i == 7 ? "2" : "0") + ",0.5\n";
  write_text(dir / "s.csv", text);
  try {
    load_site_csv(dir / "s.csv");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 7U);
    EXPECT_EQ(e.column(), "a");
    EXPECT_NE(std::string(e.what()).find("row 7, column a"), std::string::npos) << e.what();
  }
}

TEST(SiteCsv, RejectsMalformedFiles) {
  TempDir dir;
  write_text(dir / "empty.csv", "");
  EXPECT_THROW(load_site_csv(dir / "empty.csv"), ParseError);
  write_text(dir / "cols.csv", "y,x1\n1,2\n");
  EXPECT_THROW(load_site_csv(dir / "cols.csv"), ParseError);
  write_text(dir / "order.csv", "a,y,x1\n1,2,3\n");
  EXPECT_THROW(load_site_csv(dir / "order.csv"), ParseError);
  write_text(dir / "text.csv", "y,a,x1\n1,0,abc\n");
  try {
    load_site_csv(dir / "text.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 1U);
    EXPECT_EQ(e.column(), "x1");
  }
  write_text(dir / "ragged.csv", "y,a,x1\n1,0,2\n1,0\n");
  EXPECT_THROW(load_site_csv(dir / "ragged.csv"), ParseError);
  EXPECT_THROW(load_site_csv(dir / "missing.csv"), InvalidInput);
}

TEST(SiteCsv, RoundTripIsExact) {
  TempDir dir;
  Rng rng(1);
  SiteDataset d;
  d.covariates = CovariateMatrix(50, 3);
  d.outcomes = Vector(50);
  d.treatments.resize(50);
  for (Eigen::Index i = 0; i < 50; ++i) {
    d.outcomes[i] = awkward(rng);
    d.treatments[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
    for (Eigen::Index j = 0; j < 3; ++j) d.covariates(i, j) = awkward(rng);
  }
  write_site_csv(d, dir / "rt.csv");
  const SiteDataset back = load_site_csv(dir / "rt.csv");
  EXPECT_EQ(back.outcomes, d.outcomes);
  EXPECT_EQ(back.treatments, d.treatments);
  EXPECT_EQ(back.covariates, d.covariates);
}

TEST(PredictionsCsv, ParseRaggedAndRoundTrip) {
  TempDir dir;
  write_text(dir / "p.csv", "site_1,site_2\n1,2\n3,4\n");
  const CatePredictionMatrix p = load_predictions_csv(dir / "p.csv");
  EXPECT_EQ(p.site_ids, (std::vector<std::string>{"site_1", "site_2"}));
  EXPECT_EQ(p.values(1, 0), 3.0);

  write_text(dir / "r.csv", "site_1,site_2\n1,2\n3\n");
  try {
    load_predictions_csv(dir / "r.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2U);
  }
  write_text(dir / "n.csv", "site_1\nnan\n");
  EXPECT_THROW(load_predictions_csv(dir / "n.csv"), ParseError);

  Rng rng(2);
  Matrix v(40, 4);
  for (Eigen::Index i = 0; i < 40; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) v(i, j) = awkward(rng);
  }
  const CatePredictionMatrix orig(v, {"north", "south", "east", "west"});
  write_predictions_csv(orig, dir / "rt.csv");
  const CatePredictionMatrix back = load_predictions_csv(dir / "rt.csv");
  EXPECT_EQ(back.values, orig.values);
  EXPECT_EQ(back.site_ids, orig.site_ids);
}

TEST(CovariatesAndVectorCsv, RoundTrip) {
  TempDir dir;
  Rng rng(3);
  CovariateMatrix x(20, 5);
  Vector v(20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    v[i] = awkward(rng);
    for (Eigen::Index j = 0; j < 5; ++j) x(i, j) = awkward(rng);
  }
  write_covariates_csv(x, dir / "x.csv");
  write_vector_csv(v, "cate", dir / "v.csv");
  EXPECT_EQ(load_covariates_csv(dir / "x.csv"), x);
  EXPECT_EQ(load_vector_csv(dir / "v.csv"), v);
  EXPECT_THROW(load_vector_csv(dir / "x.csv"), ParseError);
}

TEST(PolytopeCsv, LoadsVertices) {
  TempDir dir;
  write_text(dir / "poly.csv", "site_1,site_2,site_3\n0.6,0.4,0\n0.4,0.6,0\n0,0.5,0.5\n");
  const PolytopeSpec p = load_polytope_csv(dir / "poly.csv");
  EXPECT_EQ(p.count(), 3U);
  EXPECT_EQ(p.dimension(), 3U);
  write_text(dir / "bad.csv", "site_1,site_2\n0.6,0.6\n");
  EXPECT_THROW(load_polytope_csv(dir / "bad.csv"), InvalidInput);
}

TEST(WeightsJson, WriteThenLoad) {
  TempDir dir;
  WeightsReport r;
  r.method = "regret";
  r.site_ids = {"a", "b\"quoted\""};
  r.weights = Eigen::Vector2d(0.1, 0.9);
  r.worst_case_regret = 0.25;
  r.kkt_residual = 0.0;
  r.lambda_min = 1e-3;
  r.converged = true;
  r.iterations = 12;
  r.note = "line\nbreak";
  write_weights_json(r, dir / "w.json");
  const Vector back = load_weights_json(dir / "w.json");
  EXPECT_EQ(back, r.weights);
  const std::string text = read_text(dir / "w.json");
  EXPECT_NE(text.find("\"worst_case_regret\": 0.25"), std::string::npos) << text;
  EXPECT_NE(text.find("\"lambda_min\": 0.001"), std::string::npos) << text;
  EXPECT_NE(text.find("\"converged\": true"), std::string::npos) << text;

  write_text(dir / "bare.json", "[0.25, 0.75]");
  EXPECT_EQ(load_weights_json(dir / "bare.json"), Eigen::Vector2d(0.25, 0.75));
  write_text(dir / "broken.json", "{\"weights\": [0.25,");
  EXPECT_THROW(load_weights_json(dir / "broken.json"), ParseError);
  write_text(dir / "none.json", "{\"w\": []}");
  EXPECT_THROW(load_weights_json(dir / "none.json"), ParseError);
}
