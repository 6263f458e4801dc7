#pragma once

// Smoothing kernels, the leave-self-out density normalizers, and the pairwise
// summation engine behind every U-statistic double sum in the library.

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "drustat/core.hpp"

namespace drustat {

enum class KernelFamily { box, epanechnikov };

std::string_view to_string(KernelFamily family);
KernelFamily parse_kernel_family(std::string_view name);

/// Base kernel and bandwidth. Both families are supported on the closed
/// interval [-1, 1], so |u| == h is inside the support.
struct KernelSpec {
  KernelFamily family = KernelFamily::box;
  double h = 1.0;
};

/// Throws INVALID_INPUT unless h is finite and positive.
KernelSpec make_kernel(KernelFamily family, double h);

/// Unscaled base kernel K(u).
double kernel_eval(KernelFamily family, double u);
inline double kernel_eval(const KernelSpec& spec, double u) { return kernel_eval(spec.family, u); }

/// Scaled kernel K_h(u) = K(u / h) / h.
double kh(const KernelSpec& spec, double u);

/// (n-1)^{-1} sum_{j != i} a_j K_h(omega_j - omega_i).
double qhat_omega(std::size_t i, const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec);

/// (n-1)^{-1} sum_{s != i} a_s K_h(mu_s - mu_j): leave-i-out, centered at j,
/// and the s == j self term is included.
double qhat_mu_loo(std::size_t i, std::size_t j, const Dataset& data, const NuisanceValues& nuis,
                   const KernelSpec& spec);

/// (n-1)^{-1} sum_{j != i} a_j K_h(omega_j - omega_i) K_h(mu_j - mu_i).
double qhat_2d(std::size_t i, const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec);

/// Which kernel term and normalizer a double sum uses.
///   omega_1d:   K_h(c_j - c_i) / Q_i,        Q_i = (n-1)^{-1} sum_{s!=i} w_s K_h(c_s - c_i)
///   mu_loo_1d:  K_h(c_j - c_i) / Q_{-i}(c_j), Q_{-i}(c_j) = (n-1)^{-1} sum_{s!=i} w_s K_h(c_s - c_j)
///   product_2d: product kernel over (axis1, axis2) with the omega_1d normalizer
enum class PairMode { omega_1d, mu_loo_1d, product_2d };

enum class SumPath { automatic, fast, naive };

inline constexpr std::size_t kFastPathThreshold = 512;
inline constexpr double kDefaultQFloor = 1e-3;

/// Inputs of sum_{i != j} left_i * kernel_ij / Q * right_j. With empty
/// density_weights the normalizer is 1. Normalizers below q_floor are replaced
/// by q_floor.
struct PairwiseTerms {
  std::span<const double> left;
  std::span<const double> right;
  std::span<const double> axis1;
  std::span<const double> axis2;
  std::span<const double> density_weights;
  double q_floor = kDefaultQFloor;
};

struct PairwiseDecomposition {
  double total = 0.0;
  std::vector<double> row;  // row[i] = sum_{j != i} kappa_ij
  std::vector<double> col;  // col[i] = sum_{j != i} kappa_ji (empty unless requested)
  double min_q = std::numeric_limits<double>::infinity();
  std::size_t floored = 0;
  bool all_q_zero = false;
  bool fast_path = false;
};

/// sum_{i != j} kappa_ij. Sorted sliding windows (1-D) or h-wide grid cells
/// (2-D) when the path is fast, or automatic with n >= kFastPathThreshold;
/// plain double loop otherwise.
double pairwise_weighted_sum(const PairwiseTerms& terms, const KernelSpec& spec, PairMode mode,
                             SumPath path = SumPath::automatic);

/// Full decomposition with per-observation row and column sums and
/// normalizer diagnostics. For mu_loo_1d, min_q and floored range over pairs
/// with a nonzero kernel; for the other modes over all observations.
PairwiseDecomposition pairwise_decompose(const PairwiseTerms& terms, const KernelSpec& spec, PairMode mode,
                                         SumPath path = SumPath::automatic, bool with_columns = true);

/// S_i = sum_{j != i} K_ij w_j, with the product kernel when axis2 is non-empty.
std::vector<double> kernel_row_sums(std::span<const double> axis1, std::span<const double> axis2,
                                    std::span<const double> weights, const KernelSpec& spec,
                                    SumPath path = SumPath::automatic);

}  // namespace drustat
