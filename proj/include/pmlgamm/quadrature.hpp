#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/errors.hpp"

namespace pmlgamm {

/// Gauss-Hermite rule for the weight exp(-z^2) (physicists' convention).
struct QuadratureRule {
  int order = 0;
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
  // log(w_j) + z_j^2, the weight applied after the adaptive change of variable
  Eigen::VectorXd log_adapted_weights;
};

/// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix with
/// off-diagonal sqrt(j/2); weights are sqrt(pi) times the squared first
/// component of the normalized eigenvectors. The eigenvector is evaluated via
/// the orthonormal Hermite recurrence, which keeps tiny tail weights positive
/// and accurate.
inline QuadratureRule gauss_hermite(int k) {
  if (k < 1 || k > 50) {
    throw ConfigError("quadrature order must be in 1..50, got " + std::to_string(k));
  }
  QuadratureRule rule;
  rule.order = k;
  Eigen::VectorXd z(k);
  if (k == 1) {
    z(0) = 0.0;
  } else {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd sub(k - 1);
    for (int j = 1; j < k; ++j) sub(j - 1) = std::sqrt(0.5 * j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
    eig.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericError("Jacobi eigensolve failed");
    z = eig.eigenvalues();
  }
  Eigen::VectorXd w(k);
  const double p0 = std::pow(std::numbers::pi, -0.25);
  for (int j = 0; j < k; ++j) {
    // sum of squared orthonormal Hermite polynomials at z_j
    double prev = 0.0, cur = p0, sum = p0 * p0;
    for (int l = 1; l < k; ++l) {
      const double next =
          (z(j) * cur - std::sqrt(0.5 * (l - 1)) * prev) / std::sqrt(0.5 * l);
      prev = cur;
      cur = next;
      sum += cur * cur;
    }
    w(j) = 1.0 / sum;
  }
  // exact symmetry
  for (int j = 0; j < k / 2; ++j) {
    const int r = k - 1 - j;
    const double zs = 0.5 * (z(r) - z(j));
    const double ws = 0.5 * (w(r) + w(j));
    z(j) = -zs;
    z(r) = zs;
    w(j) = w(r) = ws;
  }
  if (k % 2 == 1) z(k / 2) = 0.0;
  rule.nodes = z;
  rule.weights = w;
  rule.log_adapted_weights = w.array().log() + z.array().square();
  return rule;
}

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace detail

/// Log of the adaptive Gauss-Hermite approximation to
///   int exp{-neg_log_integrand(u)} du
/// recentred at `mode` with scale sqrt(2/h):
///   log[ sqrt(2/h) * sum_j w_j exp(z_j^2) exp{-g(mode + sqrt(2/h) z_j)} ].
/// With one node this is the Laplace approximation.
template <class NegLogIntegrand>
double adaptive_integrate(NegLogIntegrand&& neg_log_integrand, double mode, double curvature,
                          const QuadratureRule& rule) {
  if (!(curvature > 0.0) || !std::isfinite(curvature)) {
    throw NumericError("adaptive quadrature needs positive curvature, got " +
                       std::to_string(curvature));
  }
  const double scale = std::sqrt(2.0 / curvature);
  Eigen::VectorXd terms(rule.order);
  for (int j = 0; j < rule.order; ++j) {
    terms(j) = rule.log_adapted_weights(j) - neg_log_integrand(mode + scale * rule.nodes(j));
  }
  return std::log(scale) + detail::log_sum_exp(terms);
}

}  // namespace pmlgamm
