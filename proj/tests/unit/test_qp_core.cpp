#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cate_forge/errors.hpp"
#include "cate_forge/grid_oracle.hpp"
#include "cate_forge/qp_core.hpp"
#include "test_support.hpp"

using namespace cate_forge;
using cate_forge::testing::random_psd;
using cate_forge::testing::random_simplex_point;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

double regret_objective(const Matrix& g, const Vector& q) { return q.dot(g * q) - q.dot(g.diagonal()); }

// Midpoint system: tau_1 = 0, tau_2 = 2h with E[h^2] = 1/2.
Matrix midpoint_gamma() {
  Matrix g(2, 2);
  g << 0.0, 0.0, 0.0, 2.0;
  return g;
}

}  // namespace

TEST(ProjectToSimplex, KeepsPointsOnTheSimplex) {
  const Vector p = project_to_simplex(vec({0.2, 0.3, 0.5}));
  EXPECT_NEAR((p - vec({0.2, 0.3, 0.5})).norm(), 0.0, 1e-15);
}

TEST(ProjectToSimplex, DominantCoordinateGoesToVertex) {
  EXPECT_EQ(project_to_simplex(vec({5.0, 0.0, 0.0})), vec({1.0, 0.0, 0.0}));
}

TEST(ProjectToSimplex, SymmetricInputGoesToMidpoint) {
  const Vector p = project_to_simplex(vec({0.6, 0.6}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(ProjectToSimplex, RejectsNonFinite) {
  EXPECT_THROW(project_to_simplex(vec({1.0, std::nan("")})), InvalidInput);
  EXPECT_THROW(project_to_simplex(vec({INFINITY, 0.0})), InvalidInput);
  EXPECT_THROW(project_to_simplex(Vector()), InvalidInput);
}

TEST(ProjectToSimplex, IdempotentAndNonExpansive) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index s = 1 + static_cast<Eigen::Index>(rng.below(8));
    Vector u(s), v(s);
    for (Eigen::Index i = 0; i < s; ++i) {
      u[i] = 3.0 * rng.normal();
      v[i] = 3.0 * rng.normal();
    }
    const Vector pu = project_to_simplex(u);
    const Vector pv = project_to_simplex(v);
    EXPECT_NEAR(pu.sum(), 1.0, 1e-12);
    EXPECT_GE(pu.minCoeff(), 0.0);
    EXPECT_NEAR((project_to_simplex(pu) - pu).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    EXPECT_LE((pu - pv).norm(), (u - v).norm() + 1e-12);
  }
}

TEST(ProjectToSimplex, MatchesGridMinimumDistance) {
  // The projection is the nearest simplex point: no grid point is closer.
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Vector v(3);
    for (Eigen::Index i = 0; i < 3; ++i) v[i] = rng.normal();
    const Vector p = project_to_simplex(v);
    // ||q - v||^2 = q'q - 2 q'v + const.
    const GridOracleResult grid = grid_oracle(Matrix::Identity(3, 3), 2.0 * v, 400);
    EXPECT_LE(p.squaredNorm() - 2.0 * p.dot(v), grid.objective + 1e-12);
  }
}

TEST(GammaSystem, StoresDiagonalExactly) {
  Rng rng(1);
  const GammaSystem sys(random_psd(rng, 4, 4));
  for (Eigen::Index s = 0; s < 4; ++s) EXPECT_EQ(sys.d()[s], sys.gamma()(s, s));
  EXPECT_GT(sys.lambda_min(), 0.0);
  EXPECT_GE(sys.lambda_max(), sys.lambda_min());
}

TEST(GammaSystem, RejectsInvalidMatrices) {
  Matrix asym(2, 2);
  asym << 1.0, 0.5, 0.4, 1.0;
  EXPECT_THROW(GammaSystem{asym}, InvalidInput);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(GammaSystem{indefinite}, InvalidInput);
  EXPECT_THROW(GammaSystem{Matrix(2, 3)}, InvalidInput);
  EXPECT_THROW(GammaSystem{Matrix()}, InvalidInput);
  Matrix nan = Matrix::Identity(2, 2);
  nan(0, 0) = std::nan("");
  EXPECT_THROW(GammaSystem{nan}, InvalidInput);
}

TEST(GammaSystem, AcceptsTinyRoundingAsymmetryAndNegativeEigenvalue) {
  Matrix g(2, 2);
  g << 1.0, 1.0 + 1e-12, 1.0, 1.0;  // rank one, eigenvalue ~ -5e-13
  EXPECT_NO_THROW(GammaSystem{g});
}

TEST(PolytopeSpec, ValidatesVertices) {
  EXPECT_THROW(PolytopeSpec({}), InvalidInput);
  EXPECT_THROW(PolytopeSpec({vec({0.5, 0.6})}), InvalidInput);
  EXPECT_THROW(PolytopeSpec({vec({1.5, -0.5})}), InvalidInput);
  EXPECT_THROW(PolytopeSpec({vec({0.5, 0.5}), vec({0.5, 0.5})}), InvalidInput);
  EXPECT_THROW(PolytopeSpec({vec({0.5, 0.5}), vec({1.0, 0.0, 0.0})}), InvalidInput);
  const PolytopeSpec full = PolytopeSpec::full_simplex(3);
  EXPECT_EQ(full.count(), 3U);
  EXPECT_EQ(full.vertex_matrix(), Matrix::Identity(3, 3));
}

TEST(SolveRegretQp, SingleSite) {
  Matrix g(1, 1);
  g << 3.0;
  const WeightSolution sol = solve_regret_qp(GammaSystem(g));
  ASSERT_EQ(sol.weights.size(), 1);
  EXPECT_EQ(sol.weights[0], 1.0);
  EXPECT_TRUE(sol.converged);
  EXPECT_EQ(sol.worst_case_regret, 0.0);
  EXPECT_EQ(sol.kkt_residual, 0.0);
}

TEST(SolveRegretQp, TwoSiteMidpoint) {
  const WeightSolution sol = solve_regret_qp(GammaSystem(midpoint_gamma()));
  EXPECT_NEAR(sol.weights[0], 0.5, 1e-9);
  EXPECT_NEAR(sol.weights[1], 0.5, 1e-9);
  EXPECT_NEAR(sol.objective, -0.5, 1e-12);
  // Distance from the midpoint to either end: E[h^2] = 1/2.
  EXPECT_NEAR(sol.worst_case_regret, 0.5, 1e-9);
  EXPECT_TRUE(sol.converged);
}

TEST(SolveRegretQp, ThreeSitesMatchGridOracle) {
  Rng rng(303);
  const Matrix g = random_psd(rng, 3, 3);
  const WeightSolution sol = solve_regret_qp(GammaSystem(g));
  const GridOracleResult grid = grid_oracle(g, g.diagonal(), 1000);
  EXPECT_LE(sol.objective, grid.objective + 1e-6);
  EXPECT_NEAR(sol.objective, regret_objective(g, sol.weights), 1e-12);
}

TEST(SolveRegretQp, OutputSatisfiesSolutionInvariants) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index s = 2 + static_cast<Eigen::Index>(rng.below(7));
    const Eigen::Index rank = 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(s)));
    const GammaSystem sys(random_psd(rng, s, rank));
    const WeightSolution sol = solve_regret_qp(sys);
    EXPECT_NEAR(sol.weights.sum(), 1.0, 1e-9);
    EXPECT_GE(sol.weights.minCoeff(), 0.0);
    const Vector regret = per_site_regret(sys.gamma(), sol.weights);
    EXPECT_NEAR(sol.worst_case_regret, regret.maxCoeff(), 1e-8);
    EXPECT_GE(regret.minCoeff(), -1e-9);
  }
}

TEST(SolveRegretQp, ScaleInvariantWeights) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix g = random_psd(rng, 5, 5);
    const WeightSolution base = solve_regret_qp(GammaSystem(g));
    for (double c : {0.01, 3.0, 250.0}) {
      const WeightSolution scaled = solve_regret_qp(GammaSystem(c * c * g));
      EXPECT_LE((scaled.weights - base.weights).cwiseAbs().maxCoeff(), 1e-7) << "c = " << c;
      EXPECT_NEAR(scaled.objective, c * c * base.objective, 1e-9 * c * c * (1.0 + std::fabs(base.objective)));
    }
  }
}

TEST(SolveRegretQp, PermutationEquivariant) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index s = 5;
    const Matrix g = random_psd(rng, s, 3 + (trial % 3));
    std::vector<int> perm(static_cast<std::size_t>(s));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.below(i + 1)]);
    }
    Matrix pg(s, s);
    for (Eigen::Index i = 0; i < s; ++i) {
      for (Eigen::Index j = 0; j < s; ++j) pg(i, j) = g(perm[i], perm[j]);
    }
    const WeightSolution a = solve_regret_qp(GammaSystem(g));
    const WeightSolution b = solve_regret_qp(GammaSystem(pg));
    EXPECT_NEAR(a.objective, b.objective, 1e-10);
    // Compare the ensembles rather than raw weights: rank-deficient systems
    // may have several optimal weight vectors with the same predictions.
    Vector bp(s);
    for (Eigen::Index i = 0; i < s; ++i) bp[perm[i]] = b.weights[i];
    EXPECT_LE((bp - a.weights).dot(g * (bp - a.weights)), 1e-9);
    if (GammaSystem(g).lambda_min() > 1e-6) EXPECT_LE((bp - a.weights).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(SolveRegretQp, NeverWorseThanGridOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index s = 2 + trial % 3;
    const Eigen::Index rank = 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(s)));
    const Matrix g = random_psd(rng, s, rank);
    const WeightSolution sol = solve_regret_qp(GammaSystem(g));
    const GridOracleResult grid = grid_oracle(g, g.diagonal(), s == 4 ? 200 : 1000);
    EXPECT_LE(sol.objective, grid.objective + 1e-6);
  }
}

TEST(SolveRegretQp, ActiveSitesShareTheWorstCaseRegret) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index s = 2 + static_cast<Eigen::Index>(rng.below(9));
    const Matrix g = random_psd(rng, s, s);
    const WeightSolution sol = solve_regret_qp(GammaSystem(g));
    const Vector regret = per_site_regret(g, sol.weights);
    const double r = sol.worst_case_regret;
    for (Eigen::Index i = 0; i < s; ++i) {
      EXPECT_LE(regret[i], r + 1e-6 * (1.0 + r));
      if (sol.weights[i] > 1e-6) EXPECT_NEAR(regret[i], r, 1e-6 * (1.0 + r));
    }
    EXPECT_LE(sol.kkt_residual, 1e-6 * (1.0 + r));
  }
}

TEST(SolveRegretQp, WorstCaseOverMixturesIsAttainedAtSites) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index s = 3 + trial % 4;
    const Matrix g = random_psd(rng, s, s);
    const WeightSolution sol = solve_regret_qp(GammaSystem(g));
    for (int m = 0; m < 100; ++m) {
      const Vector mix = random_simplex_point(rng, s);
      const Vector diff = sol.weights - mix;
      EXPECT_LE(diff.dot(g * diff), sol.worst_case_regret + 1e-8);
    }
  }
}

TEST(SolveRegretQp, DegenerateSystemIsDeterministicAndFlagged) {
  // Sites 1 and 2 are duplicates.
  Matrix g(3, 3);
  g << 1.0, 1.0, 0.2, 1.0, 1.0, 0.2, 0.2, 0.2, 2.0;
  const GammaSystem sys(g);
  EXPECT_LT(sys.lambda_min(), 1e-8);
  const WeightSolution a = solve_regret_qp(sys);
  const WeightSolution b = solve_regret_qp(sys);
  EXPECT_EQ(a.weights, b.weights);
  // From the uniform start the duplicate pair keeps equal weights.
  EXPECT_NEAR(a.weights[0], a.weights[1], 1e-12);
  EXPECT_LE(a.objective, grid_oracle(g, g.diagonal(), 1000).objective + 1e-6);
}

TEST(SolveRegretQp, IterationCapReportsNonConvergence) {
  Rng rng(14);
  const GammaSystem sys(random_psd(rng, 6, 6));
  SolverOptions opts;
  opts.max_iter = 1;
  opts.polish = false;
  const WeightSolution sol = solve_regret_qp(sys, opts);
  EXPECT_FALSE(sol.converged);
  EXPECT_EQ(sol.iterations, 1U);
  EXPECT_NEAR(sol.weights.sum(), 1.0, 1e-9);
}

TEST(SolveRegretQp, RidgeMustBeNonNegative) {
  SolverOptions opts;
  opts.ridge = -1.0;
  EXPECT_THROW(solve_regret_qp(GammaSystem(midpoint_gamma()), opts), InvalidInput);
}

TEST(SolveRegretQp, WithoutPolishStillReachesOracle) {
  Rng rng(15);
  SolverOptions opts;
  opts.polish = false;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = random_psd(rng, 3, 3);
    const WeightSolution sol = solve_regret_qp(GammaSystem(g), opts);
    EXPECT_LE(sol.objective, grid_oracle(g, g.diagonal(), 1000).objective + 1e-6);
  }
}

TEST(SolveRegretQpPolytope, FullSimplexMatchesUnconstrained) {
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const GammaSystem sys(random_psd(rng, 4, 4));
    const WeightSolution a = solve_regret_qp(sys);
    const WeightSolution b = solve_regret_qp_polytope(sys, PolytopeSpec::full_simplex(4));
    EXPECT_LE((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(a.objective, b.objective, 1e-12);
  }
}

TEST(SolveRegretQpPolytope, SingleVertex) {
  Rng rng(21);
  const GammaSystem sys(random_psd(rng, 3, 3));
  const Vector g1 = vec({0.2, 0.3, 0.5});
  const WeightSolution sol = solve_regret_qp_polytope(sys, PolytopeSpec({g1}));
  EXPECT_LE((sol.weights - g1).cwiseAbs().maxCoeff(), 1e-15);
}

namespace {

// Vertices of {q in simplex : q_s <= cap} for S = 3 and 1/2 <= cap < 1.
PolytopeSpec cap_polytope(double cap) {
  std::vector<Vector> vs;
  const double rest = 1.0 - cap;
  if (cap == 0.5) {
    vs = {vec({0.5, 0.5, 0.0}), vec({0.5, 0.0, 0.5}), vec({0.0, 0.5, 0.5})};
  } else {
    vs = {vec({cap, rest, 0.0}), vec({cap, 0.0, rest}), vec({rest, cap, 0.0}),
          vec({0.0, cap, rest}), vec({rest, 0.0, cap}), vec({0.0, rest, cap})};
  }
  return PolytopeSpec(std::move(vs));
}

}  // namespace

TEST(SolveRegretQpPolytope, CapConstraintMatchesCappedGridOracle) {
  Rng rng(22);
  for (double cap : {0.6, 0.5}) {
    const PolytopeSpec poly = cap_polytope(cap);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix g = random_psd(rng, 3, 3);
      const WeightSolution sol = solve_regret_qp_polytope(GammaSystem(g), poly);
      EXPECT_LE(sol.weights.maxCoeff(), cap + 1e-12);
      EXPECT_NEAR(sol.weights.sum(), 1.0, 1e-12);
      // The vertex-coordinate objective uses d_poly = diag(G' Gamma G), which
      // is not the site-coordinate linear term, so the oracle runs in vertex
      // coordinates too.
      const Matrix gm = poly.vertex_matrix();
      const Matrix a = gm.transpose() * g * gm;
      const GridOracleResult grid = grid_oracle(a, a.diagonal(), cap == 0.5 ? 1000 : 60);
      EXPECT_LE(sol.objective, grid.objective + 1e-6);
      // Worst case over the polytope vertices equals the reported value.
      double worst = 0.0;
      for (const Vector& v : poly.vertices()) {
        const Vector diff = sol.weights - v;
        worst = std::max(worst, diff.dot(g * diff));
      }
      EXPECT_NEAR(worst, sol.worst_case_regret, 1e-8);
    }
  }
}

TEST(SolveRegretQpPolytope, HullPointStaysInsideCap) {
  Rng rng(23);
  const PolytopeSpec poly = cap_polytope(0.6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = random_psd(rng, 3, 1 + trial % 3);
    const WeightSolution sol = solve_regret_qp_polytope(GammaSystem(g), poly);
    EXPECT_LE(sol.weights.maxCoeff(), 0.6 + 1e-12);
    EXPECT_GE(sol.weights.minCoeff(), 0.0);
  }
}

TEST(SolveRegretQpPolytope, RejectsDimensionMismatch) {
  EXPECT_THROW(solve_regret_qp_polytope(GammaSystem(midpoint_gamma()), PolytopeSpec::full_simplex(3)),
               InvalidInput);
}

TEST(SolveRelativeRiskQp, BaselineEqualToASiteSelectsIt) {
  Rng rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index s = 3 + trial % 4;
    const Matrix g = random_psd(rng, s, s);
    const GammaSystem sys(g);
    ASSERT_GT(sys.lambda_min(), 1e-6);
    const Eigen::Index s0 = trial % s;
    const WeightSolution sol = solve_relative_risk_qp(sys, g.col(s0));
    EXPECT_GE(sol.weights[s0], 1.0 - 1e-9);
  }
}

TEST(SolveRelativeRiskQp, ZeroBaselineIsMinimumNormHullPoint) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = random_psd(rng, 3, 3);
    const WeightSolution sol = solve_relative_risk_qp(GammaSystem(g), Vector::Zero(3));
    const GridOracleResult grid = grid_oracle(g, Vector::Zero(3), 1000);
    EXPECT_LE(sol.objective, grid.objective + 1e-6);
    EXPECT_NEAR(sol.objective, sol.weights.dot(g * sol.weights), 1e-12);
  }
}

TEST(SolveRelativeRiskQp, RandomBaselineMatchesGridOracle) {
  Rng rng(32);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index s = 2 + trial % 3;
    const Matrix g = random_psd(rng, s, s);
    Vector b(s);
    for (Eigen::Index i = 0; i < s; ++i) b[i] = 2.0 * rng.normal();
    const WeightSolution sol = solve_relative_risk_qp(GammaSystem(g), b);
    const GridOracleResult grid = grid_oracle(g, 2.0 * b, s == 4 ? 200 : 1000);
    EXPECT_LE(sol.objective, grid.objective + 1e-6);
    EXPECT_LE(sol.kkt_residual, 1e-6 * (1.0 + std::fabs(sol.objective)));
  }
}

TEST(SolveRelativeRiskQp, BaselineInsideHullIsReproduced) {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = random_psd(rng, 4, 4);
    const Vector q0 = random_simplex_point(rng, 4);
    const Vector b = g * q0;
    const WeightSolution sol = solve_relative_risk_qp(GammaSystem(g), b);
    EXPECT_NEAR(sol.objective, q0.dot(g * q0) - 2.0 * q0.dot(b), 1e-9);
    EXPECT_LE((sol.weights - q0).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(SolveRelativeRiskQp, PolytopeVariantStaysInPolytope) {
  Rng rng(34);
  const PolytopeSpec poly = cap_polytope(0.6);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix g = random_psd(rng, 3, 3);
    // Baseline = site 1, which lies outside the cap.
    const WeightSolution sol = solve_relative_risk_qp(GammaSystem(g), g.col(0), poly);
    EXPECT_LE(sol.weights.maxCoeff(), 0.6 + 1e-12);
    const Matrix gm = poly.vertex_matrix();
    const GridOracleResult grid = grid_oracle(gm.transpose() * g * gm, 2.0 * (gm.transpose() * g.col(0)), 60);
    EXPECT_LE(sol.objective, grid.objective + 1e-6);
  }
}

TEST(SolveRelativeRiskQp, RejectsBadBaselineMoments) {
  const GammaSystem sys(midpoint_gamma());
  EXPECT_THROW(solve_relative_risk_qp(sys, Vector::Zero(3)), InvalidInput);
  EXPECT_THROW(solve_relative_risk_qp(sys, vec({0.0, std::nan("")})), InvalidInput);
}

TEST(KktResidual, AnalyticMidpointIsCertified) {
  const GammaSystem sys(midpoint_gamma());
  EXPECT_LE(kkt_residual(sys, vec({0.5, 0.5})), 1e-9);
}

TEST(KktResidual, VertexOfInteriorProblemViolatesSlackness) {
  const GammaSystem sys(midpoint_gamma());
  EXPECT_GT(kkt_residual(sys, vec({1.0, 0.0})), 0.1);
}

TEST(KktResidual, SingleSiteIsZero) {
  Matrix g(1, 1);
  g << 4.0;
  EXPECT_EQ(kkt_residual(GammaSystem(g), vec({1.0})), 0.0);
}

TEST(PerSiteRegret, MatchesDirectExpansion) {
  Rng rng(40);
  const Matrix g = random_psd(rng, 4, 4);
  const Vector q = random_simplex_point(rng, 4);
  const Vector r = per_site_regret(g, q);
  for (Eigen::Index s = 0; s < 4; ++s) {
    const Vector diff = q - Vector::Unit(4, s);
    EXPECT_NEAR(r[s], diff.dot(g * diff), 1e-12);
  }
}
