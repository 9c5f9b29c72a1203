#include "cate_forge/grid_oracle.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "cate_forge/errors.hpp"

namespace cate_forge {
namespace {

struct Sweep {
  const Matrix& a;
  const Vector& c;
  long m;
  long cap;
  Eigen::Index n;
  Vector q;
  GridOracleResult best;

  double objective(const Vector& v) const { return v.dot(a * v) - v.dot(c); }

  void consider(long t, long remaining) {
    q[n - 2] = static_cast<double>(t) / static_cast<double>(m);
    q[n - 1] = static_cast<double>(remaining - t) / static_cast<double>(m);
    const double f = objective(q);
    if (f < best.objective) {
      best.objective = f;
      best.weights = q;
    }
  }

  // Coordinates [0, n-2) are fixed; sweep t = m q_{n-2} over its feasible range.
  void scan_line(long remaining) {
    const long lo = std::max(0L, remaining - cap);
    const long hi = std::min(cap, remaining);
    if (lo > hi) return;
    q[n - 2] = 0.0;
    q[n - 1] = static_cast<double>(remaining) / static_cast<double>(m);
    Vector delta = Vector::Zero(n);
    delta[n - 2] = 1.0 / static_cast<double>(m);
    delta[n - 1] = -1.0 / static_cast<double>(m);
    const double quad = delta.dot(a * delta);
    const double lin = 2.0 * delta.dot(a * q) - delta.dot(c);
    consider(lo, remaining);
    consider(hi, remaining);
    if (quad > 0.0) {
      const double star = -lin / (2.0 * quad);
      const long fl = static_cast<long>(std::floor(star));
      for (long t : {fl, fl + 1}) {
        if (t > lo && t < hi) consider(t, remaining);
      }
    }
  }

  void recurse(Eigen::Index index, long remaining) {
    if (index == n - 2) {
      scan_line(remaining);
      return;
    }
    for (long k = 0; k <= std::min(remaining, cap); ++k) {
      q[index] = static_cast<double>(k) / static_cast<double>(m);
      recurse(index + 1, remaining - k);
    }
    q[index] = 0.0;
  }
};

}  // namespace

GridOracleResult grid_oracle(const Matrix& a, const Vector& c, std::size_t divisions,
                             std::optional<double> cap) {
  if (a.rows() == 0 || a.rows() != a.cols() || c.size() != a.rows()) {
    throw InvalidInput("grid_oracle: inconsistent dimensions");
  }
  if (divisions == 0) throw InvalidInput("grid_oracle: divisions must be positive");
  const Eigen::Index n = a.rows();
  const long m = static_cast<long>(divisions);
  long cap_units = m;
  if (cap) {
    cap_units = static_cast<long>(std::floor(*cap * static_cast<double>(m) + 1e-9));
    if (cap_units * n < m) throw InvalidInput("grid_oracle: cap leaves the simplex empty");
  }

  GridOracleResult result;
  result.divisions = divisions;
  if (n == 1) {
    result.weights = Vector::Ones(1);
    result.objective = a(0, 0) - c[0];
    return result;
  }
  Sweep sweep{a, c, m, cap_units, n, Vector::Zero(n), {}};
  sweep.best.objective = std::numeric_limits<double>::infinity();
  sweep.recurse(0, m);
  result.weights = sweep.best.weights;
  result.objective = sweep.best.objective;
  return result;
}

std::size_t grid_divisions_for(std::size_t sites, std::size_t max_lines) {
  if (sites <= 2) return 1000;
  // Number of scanned lines is C(m + k, k) with k = sites - 2 outer coordinates.
  const auto lines = [&](std::size_t m) {
    double count = 1.0;
    for (std::size_t i = 1; i <= sites - 2; ++i) {
      count *= static_cast<double>(m + i) / static_cast<double>(i);
    }
    return count;
  };
  std::size_t m = 1000;
  while (m > 2 && lines(m) > static_cast<double>(max_lines)) m = m * 9 / 10;
  return m;
}

}  // namespace cate_forge
