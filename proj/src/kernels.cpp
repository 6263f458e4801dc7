#include "drustat/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>

#include "drustat/parallel.hpp"

namespace drustat {
namespace {

// Window and cell widths are widened by this relative amount so that a pair at
// |u| == h is never lost to rounding in c / h; the kernel itself decides
// membership.
constexpr double kWindowSlack = 1e-9;

using CellKey = std::pair<std::int64_t, std::int64_t>;

// Enumerates, for a given i, every j != i together with the kernel weight
// K_ij. The naive path visits all j in index order; the fast path visits only
// candidates that can have a nonzero kernel.
class Neighborhood {
 public:
  Neighborhood(std::span<const double> axis1, std::span<const double> axis2, const KernelSpec& spec, bool fast)
      : axis1_(axis1), axis2_(axis2), spec_(spec), fast_(fast) {
    if (!fast_) return;
    const std::size_t n = axis1_.size();
    const double width = spec_.h * (1.0 + kWindowSlack);
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (axis2_.empty()) {
      std::stable_sort(order_.begin(), order_.end(), [&](std::size_t l, std::size_t r) { return axis1_[l] < axis1_[r]; });
      sorted_.resize(n);
      for (std::size_t p = 0; p < n; ++p) sorted_[p] = axis1_[order_[p]];
      reach_ = width;
      return;
    }
    // Grid cells of width ~h: all partners of a point lie in the 3x3 block of
    // cells around it.
    cell_of_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      cell_of_[i] = {static_cast<std::int64_t>(std::floor(axis1_[i] / width)),
                     static_cast<std::int64_t>(std::floor(axis2_[i] / width))};
    }
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t l, std::size_t r) { return cell_of_[l] < cell_of_[r]; });
    sorted_cells_.resize(n);
    for (std::size_t p = 0; p < n; ++p) sorted_cells_[p] = cell_of_[order_[p]];
  }

  double weight(std::size_t i, std::size_t j) const {
    double k = kh(spec_, axis1_[j] - axis1_[i]);
    if (!axis2_.empty() && k != 0.0) k *= kh(spec_, axis2_[j] - axis2_[i]);
    return k;
  }

  template <class F>
  void for_each(std::size_t i, F&& f) const {
    const std::size_t n = axis1_.size();
    if (!fast_) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) f(j, weight(i, j));
      }
      return;
    }
    if (axis2_.empty()) {
      const double c = axis1_[i];
      const auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), c - reach_) - sorted_.begin();
      const auto hi = std::upper_bound(sorted_.begin(), sorted_.end(), c + reach_) - sorted_.begin();
      for (auto p = lo; p < hi; ++p) {
        const std::size_t j = order_[static_cast<std::size_t>(p)];
        if (j != i) f(j, weight(i, j));
      }
      return;
    }
    const auto [cx, cy] = cell_of_[i];
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      const CellKey first{cx + dx, cy - 1};
      const CellKey last{cx + dx, cy + 1};
      auto lo = std::lower_bound(sorted_cells_.begin(), sorted_cells_.end(), first) - sorted_cells_.begin();
      auto hi = std::upper_bound(sorted_cells_.begin(), sorted_cells_.end(), last) - sorted_cells_.begin();
      for (auto p = lo; p < hi; ++p) {
        const std::size_t j = order_[static_cast<std::size_t>(p)];
        if (j != i) f(j, weight(i, j));
      }
    }
  }

 private:
  std::span<const double> axis1_;
  std::span<const double> axis2_;
  KernelSpec spec_;
  bool fast_;
  std::vector<std::size_t> order_;
  std::vector<double> sorted_;
  double reach_ = 0.0;
  std::vector<CellKey> cell_of_;
  std::vector<CellKey> sorted_cells_;
};

bool choose_fast(SumPath path, std::size_t n) {
  switch (path) {
    case SumPath::fast: return true;
    case SumPath::naive: return false;
    case SumPath::automatic: return n >= kFastPathThreshold;
  }
  return false;
}

void check_spec(const KernelSpec& spec) {
  if (!(spec.h > 0.0) || !std::isfinite(spec.h)) {
    throw Error(Errc::invalid_input, "bandwidth must be positive and finite, got " + std::to_string(spec.h));
  }
}

void check_terms(const PairwiseTerms& terms, PairMode mode) {
  const std::size_t n = terms.axis1.size();
  if (n < 2) throw Error(Errc::invalid_input, "pairwise sums need at least 2 points");
  if (terms.left.size() != n || terms.right.size() != n) throw Error(Errc::mismatched_length, "left/right weights do not match centers");
  if (mode == PairMode::product_2d && terms.axis2.size() != n) throw Error(Errc::mismatched_length, "2-D mode needs a second axis of equal length");
  if (mode != PairMode::product_2d && !terms.axis2.empty()) throw Error(Errc::invalid_input, "1-D modes take a single axis");
  if (!terms.density_weights.empty() && terms.density_weights.size() != n) {
    throw Error(Errc::mismatched_length, "density weights do not match centers");
  }
}

}  // namespace

std::string_view to_string(KernelFamily family) {
  return family == KernelFamily::box ? "box" : "epanechnikov";
}

KernelFamily parse_kernel_family(std::string_view name) {
  if (name == "box") return KernelFamily::box;
  if (name == "epanechnikov") return KernelFamily::epanechnikov;
  throw Error(Errc::invalid_input, "unknown kernel family '" + std::string(name) + "'");
}

KernelSpec make_kernel(KernelFamily family, double h) {
  KernelSpec spec{family, h};
  check_spec(spec);
  return spec;
}

double kernel_eval(KernelFamily family, double u) {
  const double a = std::abs(u);
  if (!(a <= 1.0)) return 0.0;
  switch (family) {
    case KernelFamily::box: return 0.5;
    case KernelFamily::epanechnikov: return 0.75 * (1.0 - u * u);
  }
  return 0.0;
}

double kh(const KernelSpec& spec, double u) { return kernel_eval(spec.family, u / spec.h) / spec.h; }

double qhat_omega(std::size_t i, const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec) {
  check_spec(spec);
  const std::size_t n = data.size();
  const auto a = data.a();
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) sum += a[j] * kh(spec, nuis.omega_hat[j] - nuis.omega_hat[i]);
  }
  return sum / static_cast<double>(n - 1);
}

double qhat_mu_loo(std::size_t i, std::size_t j, const Dataset& data, const NuisanceValues& nuis,
                   const KernelSpec& spec) {
  check_spec(spec);
  if (i == j) throw Error(Errc::invalid_input, "leave-one-out normalizer needs i != j");
  const std::size_t n = data.size();
  const auto a = data.a();
  double sum = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    if (s != i) sum += a[s] * kh(spec, nuis.mu_hat[s] - nuis.mu_hat[j]);
  }
  return sum / static_cast<double>(n - 1);
}

double qhat_2d(std::size_t i, const Dataset& data, const NuisanceValues& nuis, const KernelSpec& spec) {
  check_spec(spec);
  const std::size_t n = data.size();
  const auto a = data.a();
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    sum += a[j] * kh(spec, nuis.omega_hat[j] - nuis.omega_hat[i]) * kh(spec, nuis.mu_hat[j] - nuis.mu_hat[i]);
  }
  return sum / static_cast<double>(n - 1);
}

std::vector<double> kernel_row_sums(std::span<const double> axis1, std::span<const double> axis2,
                                    std::span<const double> weights, const KernelSpec& spec, SumPath path) {
  check_spec(spec);
  const std::size_t n = axis1.size();
  if (weights.size() != n || (!axis2.empty() && axis2.size() != n)) {
    throw Error(Errc::mismatched_length, "kernel row sums: inconsistent lengths");
  }
  const Neighborhood hood(axis1, axis2, spec, choose_fast(path, n));
  std::vector<double> sums(n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double s = 0.0;
      hood.for_each(i, [&](std::size_t j, double k) { s += k * weights[j]; });
      sums[i] = s;
    }
  });
  return sums;
}

PairwiseDecomposition pairwise_decompose(const PairwiseTerms& terms, const KernelSpec& spec, PairMode mode,
                                         SumPath path, bool with_columns) {
  check_spec(spec);
  check_terms(terms, mode);
  const std::size_t n = terms.axis1.size();
  const double inv_nm1 = 1.0 / static_cast<double>(n - 1);
  const bool fast = choose_fast(path, n);
  const Neighborhood hood(terms.axis1, mode == PairMode::product_2d ? terms.axis2 : std::span<const double>{}, spec, fast);
  const bool normalized = !terms.density_weights.empty();
  const auto& w = terms.density_weights;
  const double floor = terms.q_floor;

  PairwiseDecomposition out;
  out.fast_path = fast;
  out.row.assign(n, 0.0);
  if (with_columns) out.col.assign(n, 0.0);

  if (mode != PairMode::mu_loo_1d) {
    // Normalizer localized at the left index: Q_i.
    std::vector<double> q(n, 1.0);
    if (normalized) {
      q = kernel_row_sums(terms.axis1, mode == PairMode::product_2d ? terms.axis2 : std::span<const double>{}, w, spec,
                          fast ? SumPath::fast : SumPath::naive);
      bool any_positive = false;
      for (std::size_t i = 0; i < n; ++i) {
        q[i] *= inv_nm1;
        out.min_q = std::min(out.min_q, q[i]);
        if (q[i] > 0.0) any_positive = true;
        if (q[i] < floor) {
          q[i] = floor;
          ++out.floored;
        }
      }
      out.all_q_zero = !any_positive;
    }
    std::vector<double> left_over_q(n);
    for (std::size_t i = 0; i < n; ++i) left_over_q[i] = terms.left[i] / q[i];

    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double to_right = 0.0;
        double from_left = 0.0;
        hood.for_each(i, [&](std::size_t j, double k) {
          to_right += k * terms.right[j];
          if (with_columns) from_left += k * left_over_q[j];
        });
        out.row[i] = left_over_q[i] * to_right;
        if (with_columns) out.col[i] = terms.right[i] * from_left;
      }
    });
  } else {
    // Normalizer localized at the right index with the left index removed:
    // Q_{-i}(c_j) = (F_j - w_i K_ij) / (n-1), F_j including the s == j term.
    std::vector<double> full;
    if (normalized) {
      full = kernel_row_sums(terms.axis1, {}, w, spec, fast ? SumPath::fast : SumPath::naive);
      const double self = kh(spec, 0.0);
      for (std::size_t j = 0; j < n; ++j) full[j] += w[j] * self;
    }
    std::vector<double> min_q(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> floored(n, 0);
    auto loo_q = [&](std::size_t removed, std::size_t center, double k) {
      return (full[center] - w[removed] * k) * inv_nm1;
    };

    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double row = 0.0;
        double col = 0.0;
        hood.for_each(i, [&](std::size_t j, double k) {
          if (k == 0.0) return;
          double q_ij = 1.0;
          double q_ji = 1.0;
          if (normalized) {
            q_ij = loo_q(i, j, k);
            min_q[i] = std::min(min_q[i], q_ij);
            if (q_ij < floor) {
              q_ij = floor;
              ++floored[i];
            }
            if (with_columns) q_ji = std::max(loo_q(j, i, k), floor);
          }
          row += k * terms.right[j] / q_ij;
          if (with_columns) col += terms.left[j] * k / q_ji;
        });
        out.row[i] = terms.left[i] * row;
        if (with_columns) out.col[i] = terms.right[i] * col;
      }
    });
    if (normalized) {
      for (std::size_t i = 0; i < n; ++i) {
        out.min_q = std::min(out.min_q, min_q[i]);
        out.floored += floored[i];
      }
      out.all_q_zero = std::none_of(w.begin(), w.end(), [](double v) { return v > 0.0; });
    }
  }

  for (std::size_t i = 0; i < n; ++i) out.total += out.row[i];
  return out;
}

double pairwise_weighted_sum(const PairwiseTerms& terms, const KernelSpec& spec, PairMode mode, SumPath path) {
  return pairwise_decompose(terms, spec, mode, path, false).total;
}

}  // namespace drustat
