#pragma once

#include <vector>

namespace drustat {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1].
QuadratureRule gauss_legendre(int n);

/// The n-point rule mapped onto [a, b].
QuadratureRule gauss_legendre(int n, double a, double b);

/// Composite rule: `points_per_panel` Gauss-Legendre nodes on every panel
/// between consecutive (sorted, deduplicated) breakpoints.
QuadratureRule composite_gauss_legendre(std::vector<double> breakpoints, int points_per_panel);

}  // namespace drustat
