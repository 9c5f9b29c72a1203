#pragma once

// Brute-force reference minimizer for simplex QPs, independent of the
// projected-gradient path. Used by the test suites and by `weights
// --oracle-check`.

#include <cstddef>
#include <optional>

#include "cate_forge/qp_core.hpp"

namespace cate_forge {

struct GridOracleResult {
  Vector weights;
  double objective = 0.0;
  std::size_t divisions = 0;  ///< grid points are multiples of 1/divisions
};

/// Minimizes q'Aq - q'c over the grid {k / divisions} intersected with the
/// simplex (and with q_s <= cap when a cap is given). The last two
/// coordinates are swept as a 1-D convex quadratic whose integer minimizer is
/// read off directly, so the result is the exact grid minimum.
GridOracleResult grid_oracle(const Matrix& a, const Vector& c, std::size_t divisions,
                             std::optional<double> cap = std::nullopt);

/// Largest resolution (up to 1000 divisions) keeping the sweep under
/// `max_lines` one-dimensional scans.
std::size_t grid_divisions_for(std::size_t sites, std::size_t max_lines = 20'000'000);

}  // namespace cate_forge
