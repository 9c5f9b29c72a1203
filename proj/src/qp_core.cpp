#include "cate_forge/qp_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cate_forge/errors.hpp"

namespace cate_forge {
namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kPsdRelTol = 1e-8;
constexpr double kSimplexTol = 1e-12;
constexpr double kClampTol = 1e-12;

bool all_finite(const Matrix& m) { return m.allFinite(); }

// Objective q'Aq - q'c.
double quadratic_objective(const Matrix& a, const Vector& c, const Vector& q) {
  return q.dot(a * q) - q.dot(c);
}

// Simplex KKT residual for min q'Aq - q'c: with gradient g and mu = min_s g_s,
// optimality is q_s (g_s - mu) = 0 for all s (g_s >= mu holds by definition).
// Primal feasibility of q is folded in.
double simplex_kkt_residual(const Matrix& a, const Vector& c, const Vector& q) {
  const Vector g = 2.0 * (a * q) - c;
  const double mu = g.minCoeff();
  double residual = std::fabs(q.sum() - 1.0);
  for (Eigen::Index s = 0; s < q.size(); ++s) {
    residual = std::max(residual, std::max(0.0, -q[s]));
    residual = std::max(residual, std::fabs(q[s] * (g[s] - mu)));
  }
  return residual;
}

// Entries in [-kClampTol, 0) are zeroed and the vector renormalized.
Vector clamp_to_simplex(Vector q) {
  for (Eigen::Index s = 0; s < q.size(); ++s) {
    if (q[s] < 0.0 && q[s] >= -kClampTol) q[s] = 0.0;
  }
  const double total = q.sum();
  if (total > 0.0) q /= total;
  return q;
}

// Equality-constrained solve on the support of q: 2 A_SS q_S - c_S = mu 1,
// 1' q_S = 1. Coordinates that come out negative are dropped and the solve
// repeated. Returns nullopt when the reduced system is singular or no
// nonnegative solution is found.
std::optional<Vector> polish_on_support(const Matrix& a, const Vector& c, const Vector& q) {
  const Eigen::Index n = q.size();
  std::vector<Eigen::Index> support;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (q[s] > 0.0) support.push_back(s);
  }
  while (!support.empty()) {
    const auto k = static_cast<Eigen::Index>(support.size());
    Matrix kkt = Matrix::Zero(k + 1, k + 1);
    Vector rhs(k + 1);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) kkt(i, j) = 2.0 * a(support[i], support[j]);
      kkt(i, k) = -1.0;
      kkt(k, i) = 1.0;
      rhs[i] = c[support[i]];
    }
    rhs[k] = 1.0;
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (lu.rank() < k + 1) return std::nullopt;
    const Vector sol = lu.solve(rhs);
    Eigen::Index worst = -1;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (sol[i] < -kClampTol && (worst < 0 || sol[i] < sol[worst])) worst = i;
    }
    if (worst < 0) {
      Vector out = Vector::Zero(n);
      for (Eigen::Index i = 0; i < k; ++i) out[support[i]] = std::max(sol[i], 0.0);
      return clamp_to_simplex(out);
    }
    support.erase(support.begin() + worst);
  }
  return std::nullopt;
}

struct SimplexQpResult {
  Vector q;
  std::size_t iterations = 0;
  bool converged = false;
};

// Projected gradient descent with step 1/L from the uniform vector. L starts
// at 2 lambda_max(A) and doubles whenever the quadratic upper bound fails.
SimplexQpResult solve_simplex_qp(const Matrix& a, const Vector& c, double lambda_max,
                                 const SolverOptions& options) {
  if (!(options.tol > 0.0)) throw InvalidInput("solver tolerance must be positive");
  const Eigen::Index n = a.rows();
  SimplexQpResult result;
  result.q = Vector::Constant(n, 1.0 / static_cast<double>(n));
  if (n == 1) {
    result.converged = true;
    return result;
  }

  double lipschitz = 2.0 * lambda_max;
  if (!(lipschitz > 0.0)) lipschitz = std::max(2.0 * a.trace(), 1.0);

  Vector q = result.q;
  double f = quadratic_objective(a, c, q);
  std::size_t it = 0;
  bool converged = false;
  while (it < options.max_iter) {
    ++it;
    const Vector g = 2.0 * (a * q) - c;
    Vector y = project_to_simplex(q - g / lipschitz);
    const Vector step = y - q;
    const double curvature = step.dot(a * step);
    if (curvature > 0.5 * lipschitz * step.squaredNorm() * (1.0 + 1e-12)) {
      lipschitz *= 2.0;
      continue;
    }
    const double fy = quadratic_objective(a, c, y);
    const double decrease = f - fy;
    q = std::move(y);
    f = fy;
    if (decrease < options.tol) {
      converged = true;
      break;
    }
  }
  q = clamp_to_simplex(q);

  if (options.polish) {
    if (auto refined = polish_on_support(a, c, q)) {
      const double f_refined = quadratic_objective(a, c, *refined);
      const double f_pgd = quadratic_objective(a, c, q);
      if (f_refined <= f_pgd + 1e-14 * (1.0 + std::fabs(f_pgd)) &&
          simplex_kkt_residual(a, c, *refined) <= simplex_kkt_residual(a, c, q)) {
        q = *refined;
        // A support solve that satisfies the full KKT system is a certificate.
        if (simplex_kkt_residual(a, c, q) <= 1e-12 * (1.0 + a.cwiseAbs().maxCoeff())) {
          converged = true;
        }
      }
    }
  }

  result.q = std::move(q);
  result.iterations = it;
  result.converged = converged;
  return result;
}

Matrix with_ridge(const Matrix& a, double ridge) {
  if (ridge < 0.0 || !std::isfinite(ridge)) throw InvalidInput("ridge must be finite and >= 0");
  if (ridge == 0.0) return a;
  Matrix out = a;
  out.diagonal().array() += ridge;
  return out;
}

double worst_case_of(const Matrix& gamma, const Vector& q) {
  return per_site_regret(gamma, q).maxCoeff();
}

}  // namespace

GammaSystem::GammaSystem(Matrix gamma) : gamma_(std::move(gamma)) {
  if (gamma_.rows() == 0 || gamma_.rows() != gamma_.cols()) {
    throw InvalidInput("gamma must be a non-empty square matrix");
  }
  if (!all_finite(gamma_)) throw InvalidInput("gamma contains non-finite entries");
  for (Eigen::Index i = 0; i < gamma_.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < gamma_.cols(); ++j) {
      if (std::fabs(gamma_(i, j) - gamma_(j, i)) > kSymmetryTol) {
        throw InvalidInput("gamma is not symmetric at (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gamma_, Eigen::EigenvaluesOnly);
  lambda_min_ = eig.eigenvalues().minCoeff();
  lambda_max_ = eig.eigenvalues().maxCoeff();
  if (lambda_min_ < -kPsdRelTol * std::max(lambda_max_, 0.0)) {
    throw InvalidInput("gamma is not positive semidefinite (lambda_min = " +
                       std::to_string(lambda_min_) + ")");
  }
  d_ = gamma_.diagonal();
}

PolytopeSpec::PolytopeSpec(std::vector<Vector> vertices) : vertices_(std::move(vertices)) {
  if (vertices_.empty()) throw InvalidInput("polytope needs at least one vertex");
  const Eigen::Index dim = vertices_.front().size();
  if (dim == 0) throw InvalidInput("polytope vertices must be non-empty");
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const Vector& v = vertices_[i];
    if (v.size() != dim) throw InvalidInput("polytope vertices have inconsistent dimension");
    if (!v.allFinite() || v.minCoeff() < 0.0 || std::fabs(v.sum() - 1.0) > kSimplexTol) {
      throw InvalidInput("polytope vertex " + std::to_string(i) + " is not on the simplex");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (vertices_[j] == v) {
        throw InvalidInput("polytope vertices " + std::to_string(j) + " and " +
                           std::to_string(i) + " coincide");
      }
    }
  }
}

Matrix PolytopeSpec::vertex_matrix() const {
  Matrix g(static_cast<Eigen::Index>(dimension()), static_cast<Eigen::Index>(count()));
  for (std::size_t i = 0; i < vertices_.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = vertices_[i];
  return g;
}

PolytopeSpec PolytopeSpec::full_simplex(std::size_t sites) {
  std::vector<Vector> vertices;
  vertices.reserve(sites);
  for (std::size_t s = 0; s < sites; ++s) {
    vertices.push_back(Vector::Unit(static_cast<Eigen::Index>(sites), static_cast<Eigen::Index>(s)));
  }
  return PolytopeSpec(std::move(vertices));
}

Vector project_to_simplex(const Vector& v) {
  if (v.size() == 0) throw InvalidInput("cannot project an empty vector");
  if (!v.allFinite()) throw InvalidInput("cannot project a vector with non-finite entries");
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - candidate > 0.0) theta = candidate;
  }
  return (v.array() - theta).max(0.0).matrix();
}

Vector per_site_regret(const Matrix& gamma, const Vector& q) {
  const Vector gq = gamma * q;
  const double quad = q.dot(gq);
  return (gamma.diagonal() - 2.0 * gq).array() + quad;
}

double kkt_residual(const GammaSystem& system, const Vector& q) {
  if (static_cast<std::size_t>(q.size()) != system.size()) {
    throw InvalidInput("weight vector length does not match gamma");
  }
  if (!q.allFinite()) throw InvalidInput("weights contain non-finite entries");
  const Vector regret = per_site_regret(system.gamma(), q);
  const double worst = regret.maxCoeff();
  double residual = std::fabs(q.sum() - 1.0);
  for (Eigen::Index s = 0; s < q.size(); ++s) {
    residual = std::max(residual, std::max(0.0, -q[s]));
    residual = std::max(residual, std::fabs(q[s] * (regret[s] - worst)));
    residual = std::max(residual, std::max(0.0, regret[s] - worst));
  }
  return residual;
}

WeightSolution solve_regret_qp(const GammaSystem& system, const SolverOptions& options) {
  const Matrix a = with_ridge(system.gamma(), options.ridge);
  const Vector c = a.diagonal();
  const SimplexQpResult r = solve_simplex_qp(a, c, system.lambda_max() + options.ridge, options);

  WeightSolution out;
  out.weights = r.q;
  out.objective = quadratic_objective(system.gamma(), system.d(), r.q);
  out.worst_case_regret = worst_case_of(system.gamma(), r.q);
  out.kkt_residual = kkt_residual(system, r.q);
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

WeightSolution solve_regret_qp_polytope(const GammaSystem& system, const PolytopeSpec& poly,
                                        const SolverOptions& options) {
  if (poly.dimension() != system.size()) {
    throw InvalidInput("polytope dimension does not match the number of sites");
  }
  const Matrix g = poly.vertex_matrix();
  Matrix reduced = g.transpose() * system.gamma() * g;
  reduced = 0.5 * (reduced + reduced.transpose()).eval();
  const GammaSystem vertex_system(std::move(reduced));
  WeightSolution inner = solve_regret_qp(vertex_system, options);
  inner.weights = clamp_to_simplex(g * inner.weights);
  return inner;
}

WeightSolution solve_relative_risk_qp(const GammaSystem& system, const Vector& b,
                                      const std::optional<PolytopeSpec>& poly,
                                      const SolverOptions& options) {
  if (static_cast<std::size_t>(b.size()) != system.size()) {
    throw InvalidInput("baseline cross-moment vector length does not match gamma");
  }
  if (!b.allFinite()) throw InvalidInput("baseline cross-moment vector has non-finite entries");

  Matrix g = Matrix::Identity(b.size(), b.size());
  if (poly) {
    if (poly->dimension() != system.size()) {
      throw InvalidInput("polytope dimension does not match the number of sites");
    }
    g = poly->vertex_matrix();
  }
  Matrix a = g.transpose() * system.gamma() * g;
  a = 0.5 * (a + a.transpose()).eval();
  const Vector c = 2.0 * (g.transpose() * b);
  double lambda_max = system.lambda_max();
  if (poly) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
    lambda_max = eig.eigenvalues().maxCoeff();
  }
  const Matrix a_solve = with_ridge(a, options.ridge);
  const SimplexQpResult r = solve_simplex_qp(a_solve, c, lambda_max + options.ridge, options);

  WeightSolution out;
  out.weights = clamp_to_simplex(g * r.q);
  out.objective = quadratic_objective(a, c, r.q);
  out.worst_case_regret = worst_case_of(system.gamma(), out.weights);
  out.kkt_residual = simplex_kkt_residual(a, c, r.q);
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

}  // namespace cate_forge
