#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/errors.hpp"

namespace pmlgamm {

enum class KnotStrategy { Quantile, Uniform };

inline KnotStrategy parse_knot_strategy(const std::string& s) {
  if (s == "quantile") return KnotStrategy::Quantile;
  if (s == "uniform") return KnotStrategy::Uniform;
  throw ConfigError("unknown knot strategy '" + s + "'");
}

/// Specification of one cubic B-spline smooth.
struct SmoothSpec {
  std::size_t covariate_index = 0;  // 0-based column of x
  int num_basis = 10;
  KnotStrategy knot_strategy = KnotStrategy::Quantile;
  // Boundary of the knot range. Defaults to [min x, max x] of the data.
  std::optional<std::pair<double, double>> range;
};

/// A realized cubic B-spline basis on a clamped knot vector.
///
/// `penalty` is the curvature Gram matrix in the raw B-spline coordinates.
/// `transform` maps reduced coefficients to raw ones (identity when no
/// identifiability constraint is applied); the constrained design row is
/// b(x)^T * transform and the constrained penalty transform^T * penalty * transform.
struct BasisRealization {
  static constexpr int kDegree = 3;

  Eigen::VectorXd knots;
  int num_basis = 0;
  Eigen::MatrixXd penalty;
  Eigen::MatrixXd transform;

  double lower() const { return knots(0); }
  double upper() const { return knots(knots.size() - 1); }
  bool constrained() const { return transform.cols() != num_basis; }
  Eigen::Index dim() const { return transform.cols(); }

  Eigen::MatrixXd reduced_penalty() const {
    return transform.transpose() * penalty * transform;
  }
};

namespace detail {

// Type-7 sample quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Knot span index s with knots[s] <= x < knots[s+1], clamped to the last
// nonempty span at the right boundary.
inline int find_span(const Eigen::VectorXd& t, int num_basis, double x) {
  constexpr int p = BasisRealization::kDegree;
  if (x >= t(num_basis)) return num_basis - 1;
  int lo = p, hi = num_basis;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (x < t(mid)) hi = mid;
    else lo = mid;
  }
  return lo;
}

// Nonzero basis functions and their derivatives up to `nd` at x on `span`.
// Row r of the result holds the r-th derivative of B_{span-3..span}.
inline Eigen::Matrix<double, 4, 4> basis_derivs_on_span(const Eigen::VectorXd& t, int span,
                                                        double x, int nd) {
  constexpr int p = BasisRealization::kDegree;
  Eigen::Matrix<double, 4, 4> ndu, a, ders;
  std::array<double, 4> left{}, right{};
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - t(span + 1 - j);
    right[j] = t(span + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }
  ders.setZero();
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  int factor = p;
  for (int k = 1; k <= nd; ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }
  return ders;
}

}  // namespace detail

/// Raw basis derivative of the given order (0 = values) at x.
inline Eigen::VectorXd eval_basis_derivative(const BasisRealization& basis, double x, int order) {
  if (order < 0 || order > 3) throw ContractError("basis derivative order must be in 0..3");
  if (!(x >= basis.lower() && x <= basis.upper())) {
    throw DomainError("x = " + std::to_string(x) + " outside knot range [" +
                      std::to_string(basis.lower()) + ", " + std::to_string(basis.upper()) + "]");
  }
  const int span = detail::find_span(basis.knots, basis.num_basis, x);
  const auto ders = detail::basis_derivs_on_span(basis.knots, span, x, order);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(basis.num_basis);
  for (int j = 0; j <= BasisRealization::kDegree; ++j) out(span - 3 + j) = ders(order, j);
  return out;
}

/// (b_1(x), ..., b_d(x)) in raw coordinates. No extrapolation.
inline Eigen::VectorXd eval_basis(const BasisRealization& basis, double x) {
  return eval_basis_derivative(basis, x, 0);
}

/// Design row in reduced coordinates (after any constraint transform).
inline Eigen::RowVectorXd design_row(const BasisRealization& basis, double x) {
  return eval_basis(basis, x).transpose() * basis.transform;
}

/// Curvature penalty (S)_{lr} = int b_l''(x) b_r''(x) dx. b'' is piecewise
/// linear, so two Gauss-Legendre points per knot interval integrate exactly.
inline Eigen::MatrixXd penalty_matrix(const BasisRealization& basis) {
  const int d = basis.num_basis;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
  const double g = 1.0 / std::sqrt(3.0);
  for (int span = 3; span < d; ++span) {
    const double a = basis.knots(span), b = basis.knots(span + 1);
    if (!(b > a)) continue;
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (double node : {mid - half * g, mid + half * g}) {
      const auto ders = detail::basis_derivs_on_span(basis.knots, span, node, 2);
      const Eigen::Vector4d b2 = ders.row(2).transpose();
      S.block<4, 4>(span - 3, span - 3) += half * (b2 * b2.transpose());
    }
  }
  return 0.5 * (S + S.transpose());
}

/// Places the clamped knot vector and computes the penalty.
inline BasisRealization build_basis(const SmoothSpec& spec, std::span<const double> values) {
  const int d = spec.num_basis;
  if (d < 6) throw ConfigError("num_basis must be >= 6, got " + std::to_string(d));
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty() || !std::isfinite(sorted.front()) || !std::isfinite(sorted.back())) {
    throw ConfigError("covariate values must be finite and nonempty");
  }
  const auto distinct =
      std::distance(sorted.begin(), std::unique(sorted.begin(), sorted.end()));
  if (distinct < d) {
    throw ConfigError("need at least " + std::to_string(d) + " distinct covariate values, found " +
                      std::to_string(distinct));
  }
  sorted.assign(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  double lo = sorted.front(), hi = sorted.back();
  if (spec.range) {
    lo = spec.range->first;
    hi = spec.range->second;
    if (!(lo < hi) || sorted.front() < lo || sorted.back() > hi) {
      throw ConfigError("knot range does not contain the covariate values");
    }
  }

  const int interior = d - 4;
  BasisRealization basis;
  basis.num_basis = d;
  basis.knots.resize(d + 4);
  for (int j = 0; j < 4; ++j) {
    basis.knots(j) = lo;
    basis.knots(d + j) = hi;
  }
  for (int j = 1; j <= interior; ++j) {
    const double prob = static_cast<double>(j) / static_cast<double>(interior + 1);
    const double k = spec.knot_strategy == KnotStrategy::Uniform
                         ? lo + prob * (hi - lo)
                         : detail::sorted_quantile(sorted, prob);
    if (!(k > lo && k < hi)) throw ConfigError("interior knot coincides with a boundary knot");
    basis.knots(3 + j) = k;
  }
  basis.penalty = penalty_matrix(basis);
  basis.transform = Eigen::MatrixXd::Identity(d, d);
  return basis;
}

/// Sum-to-zero identifiability constraint over the covariate values.
/// Householder reflection H with H c = -|c| e_1 for the column sums c; the
/// trailing d-1 columns of H span the constraint null space.
inline BasisRealization apply_constraint(BasisRealization basis, std::span<const double> values) {
  const int d = basis.num_basis;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
  for (double x : values) c += eval_basis(basis, x);
  Eigen::VectorXd v = c;
  const double sign = c(0) >= 0.0 ? 1.0 : -1.0;
  v(0) += sign * c.norm();
  const double vv = v.squaredNorm();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
  if (vv > 0.0) H -= (2.0 / vv) * v * v.transpose();
  basis.transform = H.rightCols(d - 1);
  return basis;
}

}  // namespace pmlgamm
