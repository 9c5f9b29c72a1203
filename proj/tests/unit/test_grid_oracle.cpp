#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cate_forge/errors.hpp"
#include "cate_forge/grid_oracle.hpp"
#include "test_support.hpp"

using namespace cate_forge;
using cate_forge::testing::random_psd;

namespace {

// Plain enumeration of every grid point, optionally capped.
double naive_grid_min(const Matrix& a, const Vector& c, int m, double cap = 1.0) {
  const Eigen::Index s = a.rows();
  const int max_units = static_cast<int>(std::floor(cap * m + 1e-9));
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> k(static_cast<std::size_t>(s), 0);
  auto visit = [&](auto&& self, Eigen::Index i, int left) -> void {
    if (i == s - 1) {
      if (left > max_units) return;
      k[static_cast<std::size_t>(i)] = left;
      Vector q(s);
      for (Eigen::Index j = 0; j < s; ++j) q[j] = static_cast<double>(k[static_cast<std::size_t>(j)]) / m;
      best = std::min(best, q.dot(a * q) - q.dot(c));
      return;
    }
    for (int v = 0; v <= std::min(left, max_units); ++v) {
      k[static_cast<std::size_t>(i)] = v;
      self(self, i + 1, left - v);
    }
  };
  visit(visit, 0, m);
  return best;
}

}  // namespace

TEST(GridOracle, AgreesWithNaiveEnumeration) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index s = 1 + trial % 5;
    const Matrix a = random_psd(rng, s, 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(s))));
    Vector c(s);
    for (Eigen::Index i = 0; i < s; ++i) c[i] = rng.normal();
    const int m = s <= 3 ? 60 : 20;
    const GridOracleResult r = grid_oracle(a, c, static_cast<std::size_t>(m));
    EXPECT_NEAR(r.objective, naive_grid_min(a, c, m), 1e-12);
    EXPECT_NEAR(r.objective, r.weights.dot(a * r.weights) - r.weights.dot(c), 1e-12);
    EXPECT_NEAR(r.weights.sum(), 1.0, 1e-12);
  }
}

TEST(GridOracle, CapRestrictsCoordinates) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_psd(rng, 3, 3);
    const Vector c = 3.0 * a.diagonal();
    const GridOracleResult r = grid_oracle(a, c, 50, 0.6);
    EXPECT_LE(r.weights.maxCoeff(), 0.6 + 1e-12);
    EXPECT_NEAR(r.objective, naive_grid_min(a, c, 50, 0.6), 1e-12);
  }
}

TEST(GridOracle, RejectsInfeasibleCapAndBadShapes) {
  EXPECT_THROW(grid_oracle(Matrix::Identity(3, 3), Vector::Zero(3), 10, 0.2), InvalidInput);
  EXPECT_THROW(grid_oracle(Matrix::Identity(3, 3), Vector::Zero(2), 10), InvalidInput);
  EXPECT_THROW(grid_oracle(Matrix::Identity(2, 2), Vector::Zero(2), 0), InvalidInput);
}

TEST(GridOracle, DivisionsShrinkWithDimension) {
  EXPECT_EQ(grid_divisions_for(2), 1000U);
  EXPECT_EQ(grid_divisions_for(4), 1000U);
  EXPECT_LT(grid_divisions_for(10), 1000U);
  EXPECT_GE(grid_divisions_for(10), 1U);
}
