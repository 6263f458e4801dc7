#include "drustat/lowerbounds.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "drustat/error.hpp"
#include "drustat/parallel.hpp"
#include "drustat/quadrature.hpp"

namespace drustat {
namespace {

constexpr std::size_t kMaxDim = 3;

using Point = std::array<double, kMaxDim>;

// Tensor grid on [0, 1]^d built from one composite rule per axis.
struct TensorGrid {
  QuadratureRule axis;
  int d = 1;

  std::size_t size() const {
    std::size_t total = 1;
    for (int l = 0; l < d; ++l) total *= axis.nodes.size();
    return total;
  }

  // Visits every node whose first coordinate index is `first`.
  template <class Fn>
  void for_each_with_first(std::size_t first, Fn&& fn) const {
    const std::size_t m = axis.nodes.size();
    Point x{};
    x[0] = axis.nodes[first];
    const double w0 = axis.weights[first];
    if (d == 1) {
      fn(std::span<const double>(x.data(), 1), w0);
      return;
    }
    for (std::size_t b = 0; b < m; ++b) {
      x[1] = axis.nodes[b];
      const double w1 = w0 * axis.weights[b];
      if (d == 2) {
        fn(std::span<const double>(x.data(), 2), w1);
        continue;
      }
      for (std::size_t c = 0; c < m; ++c) {
        x[2] = axis.nodes[c];
        fn(std::span<const double>(x.data(), 3), w1 * axis.weights[c]);
      }
    }
  }
};

TensorGrid make_grid(const BumpBasis& basis, const QuadratureOptions& options) {
  if (options.panels_per_axis < 1 || options.points_per_panel < 1) {
    throw Error(Errc::invalid_input, "quadrature needs at least one panel and one point per panel");
  }
  std::vector<double> breaks;
  for (int p = 0; p <= options.panels_per_axis; ++p) breaks.push_back(static_cast<double>(p) / options.panels_per_axis);
  for (int c = 0; c < basis.cells_per_axis; ++c) {
    const double lo = static_cast<double>(c) / basis.cells_per_axis;
    breaks.push_back(lo);
    breaks.push_back(lo + basis.side);
  }
  return TensorGrid{composite_gauss_legendre(std::move(breaks), options.points_per_panel), basis.d};
}

// Per-slot accumulation over a tensor grid, reduced in index order.
template <class Acc, class Fn>
Acc integrate(const TensorGrid& grid, Fn&& fn) {
  const std::size_t m = grid.axis.nodes.size();
  std::vector<Acc> slots(m);
  parallel_for(m, [&](std::size_t begin, std::size_t end) {
    for (std::size_t a = begin; a < end; ++a) {
      grid.for_each_with_first(a, [&](std::span<const double> x, double w) { fn(slots[a], x, w); });
    }
  });
  Acc total{};
  for (const auto& s : slots) total += s;
  return total;
}

// sum_j c_j^2 int B_j^2(x) h(x) dx by a local rule on each cube, in the
// cube's own coordinates.
double bump_square_integral(const BumpBasis& basis, std::span<const double> coefficients,
                            const std::function<double(std::span<const double>)>& h) {
  const auto rule = composite_gauss_legendre({0.0, 0.125, 0.25, 0.375, 0.5}, 12);
  const std::size_t m = rule.nodes.size();
  const double scale = basis.side / 0.5;  // k^{-1/d}
  const double jacobian = 1.0 / static_cast<double>(basis.k);
  double total = 0.0;
  for (std::size_t j = 0; j < basis.corners.size(); ++j) {
    const double c2 = coefficients[j] * coefficients[j];
    if (c2 == 0.0) continue;
    std::size_t count = 1;
    for (int l = 0; l < basis.d; ++l) count *= m;
    double cube = 0.0;
    Point u{};
    Point x{};
    for (std::size_t idx = 0; idx < count; ++idx) {
      std::size_t rest = idx;
      double w = 1.0;
      for (int l = 0; l < basis.d; ++l) {
        const std::size_t t = rest % m;
        rest /= m;
        u[l] = rule.nodes[t];
        w *= rule.weights[t];
        x[l] = basis.corners[j][l] + u[l] * scale;
      }
      const double b = base_bump(std::span<const double>(u.data(), basis.d));
      cube += w * b * b * h(std::span<const double>(x.data(), basis.d));
    }
    total += c2 * jacobian * cube;
  }
  return total;
}

double relative_error(double measured, double expected) {
  const double diff = std::abs(measured - expected);
  return expected == 0.0 ? diff : diff / std::abs(expected);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace

double base_bump(std::span<const double> u) {
  double out = 1.0;
  for (double v : u) {
    if (v < 0.0 || v > 0.5) return 0.0;
    out *= 2.0 * std::sin(4.0 * std::numbers::pi * v);
  }
  return out;
}

std::optional<std::size_t> BumpBasis::cube_of(std::span<const double> x) const {
  std::size_t index = 0;
  std::size_t stride = 1;
  for (int l = d - 1; l >= 0; --l) {
    const double v = x[static_cast<std::size_t>(l)];
    if (v < 0.0 || v > 1.0) return std::nullopt;
    const int c = std::min(static_cast<int>(std::floor(v * cells_per_axis)), cells_per_axis - 1);
    if (v - static_cast<double>(c) / cells_per_axis > side) return std::nullopt;
    index += static_cast<std::size_t>(c) * stride;
    stride *= static_cast<std::size_t>(cells_per_axis);
  }
  if (index >= corners.size()) return std::nullopt;
  return index;
}

double BumpBasis::bump(std::size_t j, std::span<const double> x) const {
  const double scale = 0.5 / side;  // k^{1/d}
  Point u{};
  for (int l = 0; l < d; ++l) u[l] = scale * (x[l] - corners[j][l]);
  return base_bump(std::span<const double>(u.data(), static_cast<std::size_t>(d)));
}

double BumpBasis::fluctuation(std::span<const double> lambda, std::span<const double> x) const {
  const auto j = cube_of(x);
  if (!j || lambda[*j] == 0.0) return 0.0;
  return lambda[*j] * bump(*j, x);
}

BumpBasis make_bump_basis(int k, int d) {
  if (k < 1) throw Error(Errc::invalid_input, "k must be at least 1, got " + std::to_string(k));
  if (d < 1 || d > static_cast<int>(kMaxDim)) {
    throw Error(Errc::invalid_input, "dimension must lie in [1, 3], got " + std::to_string(d));
  }
  BumpBasis basis;
  basis.k = k;
  basis.d = d;
  const double root = std::pow(static_cast<double>(k), 1.0 / d);
  int cells = static_cast<int>(std::ceil(root - 1e-9));
  // Guard against pow rounding just below an exact integer root.
  while (std::pow(static_cast<double>(cells), d) < static_cast<double>(k)) ++cells;
  if (cells > kMaxCellsPerAxis) {
    throw Error(Errc::k_too_large, std::to_string(k) + " cubes need " + std::to_string(cells) + " cells per axis");
  }
  basis.cells_per_axis = cells;
  basis.side = 0.5 / root;
  for (int j = 0; j < k; ++j) {
    std::vector<double> corner(static_cast<std::size_t>(d));
    int rest = j;
    for (int l = d - 1; l >= 0; --l) {
      corner[static_cast<std::size_t>(l)] = static_cast<double>(rest % cells) / cells;
      rest /= cells;
    }
    basis.corners.push_back(std::move(corner));
  }
  return basis;
}

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::pure: return "pure";
    case Variant::hybrid_omega: return "hybrid-omega";
    case Variant::hybrid_mu: return "hybrid-mu";
    case Variant::hybrid_both: return "hybrid-both";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "pure") return Variant::pure;
  if (name == "hybrid-omega") return Variant::hybrid_omega;
  if (name == "hybrid-mu") return Variant::hybrid_mu;
  if (name == "hybrid-both") return Variant::hybrid_both;
  throw Error(Errc::invalid_input, "unknown variant '" + std::string(name) + "'");
}

Surface constant_surface(double value) {
  return [value](std::span<const double>) { return value; };
}

PairValues ConstructionPair::values(std::span<const double> coefficients, std::span<const double> x) const {
  const double s = basis.fluctuation(coefficients, x);
  PairValues v;
  switch (variant) {
    case Variant::pure:
    case Variant::hybrid_both: {
      const double w = omega_hat(x);
      const double m = mu_hat(x);
      const double a = variant == Variant::pure ? eps : gamma;
      const double b = variant == Variant::pure ? delta : gamma;
      v.omega_p = w + a * s;
      v.omega_q = v.omega_p;
      v.mu_p = m - a * m * s / w;
      v.mu_q = v.mu_p + b * s / w;
      break;
    }
    case Variant::hybrid_omega: {
      const double w = omega_hat(x);
      v.omega_p = w;
      v.omega_q = w + eps * s;
      v.mu_p = 1.0 / w;
      v.mu_q = 1.0 / w - eps * s / (w * w);
      break;
    }
    case Variant::hybrid_mu: {
      const double m = mu_hat(x);
      v.omega_p = 1.0 / m;
      v.omega_q = 1.0 / m + delta * s;
      v.mu_p = m;
      v.mu_q = m - m * m * delta * s;
      break;
    }
  }
  return v;
}

ConstructionPair build_pair(Variant variant, double eps, double delta, const BumpBasis& basis,
                            std::vector<double> lambda, Surface omega_hat, Surface mu_hat,
                            const QuadratureOptions& quadrature) {
  if (!finite_nonneg(eps) || !finite_nonneg(delta)) {
    throw Error(Errc::invalid_input, "eps and delta must be finite and non-negative");
  }
  if (variant == Variant::pure && eps > delta) {
    throw Error(Errc::eps_gt_delta, "the pure construction needs eps <= delta, got eps = " + std::to_string(eps) +
                                        ", delta = " + std::to_string(delta));
  }
  if (lambda.size() != basis.corners.size()) {
    throw Error(Errc::invalid_input, "lambda has " + std::to_string(lambda.size()) + " entries, expected " +
                                         std::to_string(basis.corners.size()));
  }
  for (double l : lambda) {
    if (l != 1.0 && l != -1.0) throw Error(Errc::invalid_input, "lambda entries must be +1 or -1");
  }
  if (!omega_hat || !mu_hat) throw Error(Errc::invalid_input, "base surfaces must be callable");

  ConstructionPair pair;
  pair.variant = variant;
  pair.eps = eps;
  pair.delta = delta;
  pair.gamma = std::min(eps, delta);
  pair.basis = basis;
  pair.lambda = std::move(lambda);
  pair.omega_hat = std::move(omega_hat);
  pair.mu_hat = std::move(mu_hat);

  const auto grid = make_grid(basis, quadrature);
  struct Acc {
    double mass = 0.0;
    double min_omega = INFINITY;
    double min_mu = INFINITY;
    double max_mu = -INFINITY;
    bool finite = true;
    Acc& operator+=(const Acc& o) {
      mass += o.mass;
      min_omega = std::min(min_omega, o.min_omega);
      min_mu = std::min(min_mu, o.min_mu);
      max_mu = std::max(max_mu, o.max_mu);
      finite = finite && o.finite;
      return *this;
    }
  };
  const auto acc = integrate<Acc>(grid, [&](Acc& a, std::span<const double> x, double w) {
    const double base = variant == Variant::hybrid_mu ? 1.0 / pair.mu_hat(x) : pair.omega_hat(x);
    a.mass += w * base;
    const auto v = pair.values(x);
    for (double o : {v.omega_p, v.omega_q}) {
      a.finite = a.finite && std::isfinite(o);
      a.min_omega = std::min(a.min_omega, o);
    }
    for (double m : {v.mu_p, v.mu_q}) {
      a.finite = a.finite && std::isfinite(m);
      a.min_mu = std::min(a.min_mu, m);
      a.max_mu = std::max(a.max_mu, m);
    }
  });
  if (!acc.finite || !(acc.mass > 0.0)) throw Error(Errc::invalid_density, "surfaces are not finite and positive");
  if (acc.min_omega < 1.0) {
    throw Error(Errc::invalid_density, "omega falls to " + std::to_string(acc.min_omega) + " < 1 on the grid");
  }
  if (!(acc.min_mu > 0.0 && acc.max_mu < 1.0)) {
    throw Error(Errc::invalid_density, "mu leaves (0, 1) on the grid: range [" + std::to_string(acc.min_mu) + ", " +
                                           std::to_string(acc.max_mu) + "]");
  }
  pair.g = 1.0 / acc.mass;
  return pair;
}

VerificationReport verify_pair(const ConstructionPair& pair, const QuadratureOptions& quadrature,
                               const VerificationTolerances& tol) {
  VerificationReport r;
  r.variant = pair.variant;
  r.eps = pair.eps;
  r.delta = pair.delta;
  r.gamma = pair.gamma;
  r.k = pair.basis.k;
  r.d = pair.basis.d;
  r.g = pair.g;

  const auto grid = make_grid(pair.basis, quadrature);
  r.grid_points = grid.size();
  const double g = pair.g;

  struct Acc {
    double psi_p = 0.0, psi_q = 0.0;
    double omega_p = 0.0, omega_q = 0.0;
    double joint_p = 0.0, joint_q = 0.0;
    double d_omega_p = 0.0, d_omega_q = 0.0, d_mu_p = 0.0, d_mu_q = 0.0;
    Acc& operator+=(const Acc& o) {
      psi_p += o.psi_p;
      psi_q += o.psi_q;
      omega_p += o.omega_p;
      omega_q += o.omega_q;
      joint_p += o.joint_p;
      joint_q += o.joint_q;
      d_omega_p += o.d_omega_p;
      d_omega_q += o.d_omega_q;
      d_mu_p += o.d_mu_p;
      d_mu_q += o.d_mu_q;
      return *this;
    }
  };
  const auto sq = [](double v) { return v * v; };
  // Joint density over (A, Y) at one x: A = 0 once, then A = 1 with Y = 1, 0.
  const auto joint = [g](double omega, double mu) { return g * (omega - 1.0) + g * mu + g * (1.0 - mu); };
  const auto acc = integrate<Acc>(grid, [&](Acc& a, std::span<const double> x, double w) {
    const auto v = pair.values(x);
    const double wh = pair.omega_hat(x);
    const double mh = pair.mu_hat(x);
    a.psi_p += w * g * v.omega_p * v.mu_p;
    a.psi_q += w * g * v.omega_q * v.mu_q;
    a.omega_p += w * g * v.omega_p;
    a.omega_q += w * g * v.omega_q;
    a.joint_p += w * joint(v.omega_p, v.mu_p);
    a.joint_q += w * joint(v.omega_q, v.mu_q);
    a.d_omega_p += w * sq(wh - v.omega_p);
    a.d_omega_q += w * sq(wh - v.omega_q);
    a.d_mu_p += w * sq(mh - v.mu_p);
    a.d_mu_q += w * sq(mh - v.mu_q);
  });

  r.psi_p = acc.psi_p;
  r.psi_q = acc.psi_q;
  r.gap = acc.psi_q - acc.psi_p;
  r.density_p = acc.omega_p;
  r.density_q = acc.omega_q;
  r.joint_mass_p = acc.joint_p;
  r.joint_mass_q = acc.joint_q;
  r.density_ok = std::abs(r.density_p - 1.0) <= tol.density && std::abs(r.density_q - 1.0) <= tol.density &&
                 std::abs(r.joint_mass_p - 1.0) <= tol.density && std::abs(r.joint_mass_q - 1.0) <= tol.density;

  const auto& basis = pair.basis;
  const auto& lam = pair.lambda;
  const auto& wf = pair.omega_hat;
  const auto& mf = pair.mu_hat;
  const auto bsq = [&](const std::function<double(std::span<const double>)>& h) {
    return bump_square_integral(basis, lam, h);
  };
  const auto one = [](std::span<const double>) { return 1.0; };
  const double eps = pair.eps;
  const double delta = pair.delta;
  const double gamma = pair.gamma;

  const auto add_norm = [&](std::string name, double measured_sq, double expected, double budget) {
    NormCheck c;
    c.name = std::move(name);
    c.measured = std::sqrt(measured_sq);
    c.expected = expected;
    c.budget = budget;
    c.error = relative_error(c.measured, c.expected);
    c.within_budget = c.measured <= budget * (1.0 + tol.norm);
    c.ok = c.error <= tol.norm && c.within_budget;
    r.norms.push_back(std::move(c));
  };

  switch (pair.variant) {
    case Variant::pure: {
      const double s2 = std::sqrt(bsq(one));
      add_norm("omega_hat - omega_p", acc.d_omega_p, eps * s2, eps);
      add_norm("omega_hat - omega_q", acc.d_omega_q, eps * s2, eps);
      add_norm("mu_hat - mu_p", acc.d_mu_p,
               eps * std::sqrt(bsq([&](auto x) { return sq(mf(x) / wf(x)); })), delta);
      add_norm("mu_hat - mu_q", acc.d_mu_q,
               std::sqrt(bsq([&](auto x) { return sq((delta - eps * mf(x)) / wf(x)); })), delta);
      r.gap_closed_form = g * eps * delta * bsq([&](auto x) { return 1.0 / wf(x); });
      break;
    }
    case Variant::hybrid_omega: {
      add_norm("omega_hat - omega_p", acc.d_omega_p, 0.0, eps);
      add_norm("omega_hat - omega_q", acc.d_omega_q, eps * std::sqrt(bsq(one)), eps);
      r.gap_closed_form = -g * eps * eps * bsq([&](auto x) { return 1.0 / sq(wf(x)); });
      break;
    }
    case Variant::hybrid_mu: {
      add_norm("mu_hat - mu_p", acc.d_mu_p, 0.0, delta);
      add_norm("mu_hat - mu_q", acc.d_mu_q, delta * std::sqrt(bsq([&](auto x) { return sq(sq(mf(x))); })), delta);
      r.gap_closed_form = -g * delta * delta * bsq([&](auto x) { return sq(mf(x)); });
      break;
    }
    case Variant::hybrid_both: {
      const double s2 = std::sqrt(bsq(one));
      add_norm("omega_hat - omega_p", acc.d_omega_p, gamma * s2, eps);
      add_norm("omega_hat - omega_q", acc.d_omega_q, gamma * s2, eps);
      add_norm("mu_hat - mu_p", acc.d_mu_p,
               gamma * std::sqrt(bsq([&](auto x) { return sq(mf(x) / wf(x)); })), delta);
      add_norm("mu_hat - mu_q", acc.d_mu_q,
               gamma * std::sqrt(bsq([&](auto x) { return sq((1.0 - mf(x)) / wf(x)); })), delta);
      r.gap_closed_form = g * gamma * gamma * bsq([&](auto x) { return 1.0 / wf(x); });
      break;
    }
  }
  r.gap_error = relative_error(r.gap, r.gap_closed_form);
  r.gap_ok = r.gap_error <= tol.gap;
  r.norms_ok = std::all_of(r.norms.begin(), r.norms.end(), [](const NormCheck& c) { return c.ok; });

  if (basis.k <= kMaxLambdaEnumeration) {
    const std::size_t k = static_cast<std::size_t>(basis.k);
    const std::size_t patterns = std::size_t{1} << k;
    const std::vector<double> zero(k, 0.0);
    struct MaxAcc {
      double worst = 0.0;
      MaxAcc& operator+=(const MaxAcc& o) {
        worst = std::max(worst, o.worst);
        return *this;
      }
    };
    const auto cells = [g](double omega, double mu) {
      return std::array<double, 3>{g * (omega - 1.0), g * mu, g * (1.0 - mu)};
    };
    const auto dev = integrate<MaxAcc>(grid, [&](MaxAcc& a, std::span<const double> x, double) {
      std::array<double, 3> mean_p{};
      std::array<double, 3> mean_q{};
      std::vector<double> signs(k);
      for (std::size_t bits = 0; bits < patterns; ++bits) {
        for (std::size_t j = 0; j < k; ++j) signs[j] = (bits >> j) & 1U ? 1.0 : -1.0;
        const auto v = pair.values(signs, x);
        const auto cp = cells(v.omega_p, v.mu_p);
        const auto cq = cells(v.omega_q, v.mu_q);
        for (std::size_t c = 0; c < 3; ++c) {
          mean_p[c] += cp[c] / static_cast<double>(patterns);
          mean_q[c] += cq[c] / static_cast<double>(patterns);
        }
      }
      const auto base = pair.values(zero, x);
      const auto bp = cells(base.omega_p, base.mu_p);
      const auto bq = cells(base.omega_q, base.mu_q);
      for (std::size_t c = 0; c < 3; ++c) {
        a.worst = std::max({a.worst, std::abs(mean_p[c] - bp[c]), std::abs(mean_q[c] - bq[c])});
      }
    });
    r.lambda_average_error = dev.worst;
    r.lambda_ok = dev.worst <= tol.lambda_average;
  }
  return r;
}

}  // namespace drustat
