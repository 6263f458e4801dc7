#pragma once

// Bump-function density pairs from the minimax lower-bound constructions and
// a quadrature verifier for their norms, densities and functional gaps.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drustat/error.hpp"

namespace drustat {

using Surface = std::function<double(std::span<const double>)>;

/// k disjoint cubes of side (1/2) k^{-1/d} inside [0, 1]^d, one per cell of a
/// regular lattice with ceil(k^{1/d}) cells per axis (lexicographic order).
/// B(u) = prod_l 2 sin(4 pi u_l) on [0, 1/2]^d, so int B = 0 and int B^2 = 1.
struct BumpBasis {
  int k = 1;
  int d = 1;
  int cells_per_axis = 1;
  double side = 0.5;                       // cube side (1/2) k^{-1/d}
  std::vector<std::vector<double>> corners;  // bottom-left corners m_j

  /// B_j(x) = B(k^{1/d} (x - m_j)), zero outside cube j.
  double bump(std::size_t j, std::span<const double> x) const;
  /// Index of the cube containing x, if any.
  std::optional<std::size_t> cube_of(std::span<const double> x) const;
  /// sum_j lambda_j B_j(x); lambda may hold any real coefficients.
  double fluctuation(std::span<const double> lambda, std::span<const double> x) const;
};

/// Unscaled B(u), zero outside [0, 1/2]^d.
double base_bump(std::span<const double> u);

/// Throws INVALID_INPUT for k < 1 or d outside [1, 3], K_TOO_LARGE when the
/// lattice would need more than kMaxCellsPerAxis cells per axis.
BumpBasis make_bump_basis(int k, int d);

inline constexpr int kMaxCellsPerAxis = 1024;

enum class Variant { pure, hybrid_omega, hybrid_mu, hybrid_both };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);

/// Composite Gauss-Legendre grid on [0, 1]^d: panels at every cube edge and
/// at `panels_per_axis` uniform breakpoints, `points_per_panel` nodes each.
struct QuadratureOptions {
  int panels_per_axis = 32;
  int points_per_panel = 8;
};

/// Nuisance surfaces at one point.
struct PairValues {
  double omega_p = 0.0;
  double mu_p = 0.0;
  double omega_q = 0.0;
  double mu_q = 0.0;
};

struct ConstructionPair {
  Variant variant = Variant::pure;
  double eps = 0.0;
  double delta = 0.0;
  double gamma = 0.0;  // min(eps, delta), used by hybrid_both
  BumpBasis basis;
  std::vector<double> lambda;
  Surface omega_hat;
  Surface mu_hat;
  double g = 1.0;  // constant covariate-density factor

  /// Surfaces at x for an arbitrary coefficient vector (lambda = 0 gives the
  /// unfluctuated pair).
  PairValues values(std::span<const double> coefficients, std::span<const double> x) const;
  PairValues values(std::span<const double> x) const { return values(lambda, x); }
};

/// Builds the pair for the given variant. pure:
///   omega_p = omega_q = w + eps S, mu_p = m - eps m S / w, mu_q = mu_p + delta S / w
/// hybrid_omega:
///   omega_p = w, omega_q = w + eps S, mu_p = 1 / w, mu_q = 1 / w - eps S / w^2
/// hybrid_mu:
///   omega_p = 1 / m, omega_q = 1 / m + delta S, mu_p = m, mu_q = m - m^2 delta S
/// hybrid_both: pure with eps and delta both replaced by min(eps, delta).
/// Here S = sum_j lambda_j B_j, w = omega_hat, m = mu_hat. g = 1 / int(w), or
/// 1 / int(1 / m) for hybrid_mu. Throws EPS_GT_DELTA (pure with eps > delta),
/// INVALID_INPUT (bad lambda or amplitudes) and INVALID_DENSITY when some
/// omega < 1 or mu outside (0, 1) on the quadrature grid.
ConstructionPair build_pair(Variant variant, double eps, double delta, const BumpBasis& basis,
                            std::vector<double> lambda, Surface omega_hat, Surface mu_hat,
                            const QuadratureOptions& quadrature = {});

/// omega_hat = 2 and mu_hat = 1/2 everywhere.
Surface constant_surface(double value);

struct NormCheck {
  std::string name;       // e.g. "omega_hat - omega_p"
  double measured = 0.0;  // L2 norm on the global grid
  double expected = 0.0;  // closed form from per-cube quadrature
  double budget = 0.0;    // eps, delta or gamma bound from the class definition
  double error = 0.0;     // relative (absolute when expected is 0)
  bool within_budget = false;
  bool ok = false;
};

struct VerificationTolerances {
  double gap = 1e-6;
  double norm = 1e-6;
  double density = 1e-8;
  double lambda_average = 1e-12;
};

struct VerificationReport {
  Variant variant = Variant::pure;
  double eps = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  int k = 1;
  int d = 1;
  double g = 1.0;
  std::string measure = "lebesgue on [0,1]^d";
  std::size_t grid_points = 0;

  double psi_p = 0.0;
  double psi_q = 0.0;
  double gap = 0.0;              // psi_q - psi_p by quadrature
  double gap_closed_form = 0.0;
  double gap_error = 0.0;
  bool gap_ok = false;

  std::vector<NormCheck> norms;
  bool norms_ok = false;

  double density_p = 0.0;        // int omega_p g
  double density_q = 0.0;
  double joint_mass_p = 0.0;     // joint density summed over (A, Y) and integrated
  double joint_mass_q = 0.0;
  bool density_ok = false;

  /// Max deviation of the sign-averaged joint densities from the
  /// unfluctuated ones; only computed for k <= kMaxLambdaEnumeration.
  std::optional<double> lambda_average_error;
  bool lambda_ok = true;

  bool passed() const { return gap_ok && norms_ok && density_ok && lambda_ok; }
};

inline constexpr int kMaxLambdaEnumeration = 4;

VerificationReport verify_pair(const ConstructionPair& pair, const QuadratureOptions& quadrature = {},
                               const VerificationTolerances& tolerances = {});

}  // namespace drustat
