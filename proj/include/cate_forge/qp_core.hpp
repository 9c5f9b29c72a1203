#pragma once

// Simplex- and polytope-constrained quadratic programs that define the
// aggregation weights of the ensemble CATE models.
//
// Every program here has the form
//
//     minimize  q' A q - q' c    over q in a polytope inside the simplex,
//
// with A symmetric PSD. The minimax-regret weights use A = Gamma, c = d
// (d = diag Gamma); the relative-risk weights use A = Gamma, c = 2 b.

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace cate_forge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Second-moment matrix of site CATEs under the target covariate law,
/// together with its diagonal. Construction validates symmetry and PSD-ness.
class GammaSystem {
 public:
  /// Throws InvalidInput unless gamma is square, finite, symmetric within
  /// 1e-10 element-wise and has no eigenvalue below -1e-8 * lambda_max.
  explicit GammaSystem(Matrix gamma);

  const Matrix& gamma() const noexcept { return gamma_; }
  const Vector& d() const noexcept { return d_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(gamma_.rows()); }
  double lambda_min() const noexcept { return lambda_min_; }
  double lambda_max() const noexcept { return lambda_max_; }

 private:
  Matrix gamma_;
  Vector d_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

/// A polytope inside the simplex given by its vertex list (columns of G).
class PolytopeSpec {
 public:
  /// Each vertex must be a length-S simplex point (entries >= 0, sum 1 within
  /// 1e-12); at least one vertex; vertices pairwise distinct.
  explicit PolytopeSpec(std::vector<Vector> vertices);

  const std::vector<Vector>& vertices() const noexcept { return vertices_; }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(vertices_.front().size()); }
  std::size_t count() const noexcept { return vertices_.size(); }
  /// S x N matrix whose columns are the vertices.
  Matrix vertex_matrix() const;

  /// The N = S unit vectors (the full simplex).
  static PolytopeSpec full_simplex(std::size_t sites);

 private:
  std::vector<Vector> vertices_;
};

struct SolverOptions {
  double tol = 1e-12;            ///< stop once the objective decrease falls below this
  std::size_t max_iter = 20000;  ///< projected-gradient iteration cap
  double ridge = 0.0;            ///< optional explicit ridge added to the diagonal of A
  bool polish = true;            ///< finish with an equality-constrained solve on the support
};

struct WeightSolution {
  Vector weights;
  double objective = 0.0;
  double worst_case_regret = 0.0;
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Euclidean projection onto the probability simplex (sort-based, exact).
Vector project_to_simplex(const Vector& v);

/// argmin over the simplex of q' Gamma q - q' d.
WeightSolution solve_regret_qp(const GammaSystem& system, const SolverOptions& options = {});

/// Minimax regret restricted to conv(vertices). The solve happens in the
/// N-dimensional vertex coordinates with Gamma_poly = G' Gamma G; weights are
/// mapped back to site coordinates. The objective, worst-case regret and KKT
/// residual are those of the vertex-coordinate problem, i.e. worst case over
/// the polytope's vertices.
WeightSolution solve_regret_qp_polytope(const GammaSystem& system, const PolytopeSpec& poly,
                                        const SolverOptions& options = {});

/// argmin over the simplex (or polytope) of q' Gamma q - 2 q' b. The
/// worst-case regret field reports the site-level regret of the returned
/// weights; kkt_residual certifies this problem's own optimality system.
WeightSolution solve_relative_risk_qp(const GammaSystem& system, const Vector& b,
                                      const std::optional<PolytopeSpec>& poly = std::nullopt,
                                      const SolverOptions& options = {});

/// Per-site regret E[(f - tau_s)^2] = Gamma_ss - 2 (Gamma q)_s + q' Gamma q.
Vector per_site_regret(const Matrix& gamma, const Vector& q);

/// Maximum violation of the minimax-regret optimality system: complementary
/// slackness q_s (regret_s - R), feasibility regret_s <= R with R = max_s
/// regret_s, and simplex membership of q.
double kkt_residual(const GammaSystem& system, const Vector& q);

}  // namespace cate_forge
