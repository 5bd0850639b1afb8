#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/band.hpp"
#include "pmlgamm/errors.hpp"
#include "pmlgamm/gam.hpp"
#include "pmlgamm/inner.hpp"
#include "pmlgamm/model.hpp"
#include "pmlgamm/optim.hpp"
#include "pmlgamm/quadrature.hpp"

namespace pmlgamm {

/// Penalized adaptive-quadrature negative log marginal likelihood in
/// theta = (log sigma, beta) with the smoothing parameters held fixed:
///
///   M_k(sigma, beta) = -sum_i log AGQ_k[ exp{-L_i(., beta, sigma)} ] + (1/2) beta^T S beta,
///
/// each group integral recentred at its mode u_i and scaled by its curvature
/// h_i. The gradient is exact: u_i and h_i are differentiated implicitly, which
/// needs third derivatives of the log-density.
///
/// Holds per-group warm starts for the mode search, so one instance must not be
/// shared between threads.
class PmlObjective {
 public:
  PmlObjective(const ModelFrame& frame, Eigen::VectorXd lambda, int quad_points)
      : frame_(frame),
        penalty_(frame.design, std::move(lambda)),
        rule_(gauss_hermite(quad_points)),
        modes_(static_cast<std::size_t>(frame.num_groups()), 0.0) {}

  const PenaltyState& penalty() const { return penalty_; }
  const QuadratureRule& rule() const { return rule_; }
  Eigen::Index dim() const { return frame_.dim() + 1; }

  double value(const Eigen::VectorXd& theta) { return evaluate(theta, nullptr); }

  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    return evaluate(theta, &grad);
  }

  /// Per-group log integrals at theta (diagnostics and oracle comparisons).
  std::vector<double> group_log_integrals(const Eigen::VectorXd& theta) {
    std::vector<double> out;
    evaluate(theta, nullptr, &out);
    return out;
  }

  /// The objective with w_k(z) multiplying L_i itself rather than exp(-L_i):
  /// -sum_i log[h_i^{-1/2} sum_z w(z) L_i(u_i + z h_i^{-1/2})] + penalty.
  /// Reported for comparison only; NaN when a group's sum is not positive.
  double literal_variant(const Eigen::VectorXd& theta) {
    check_theta(theta);
    const double sigma = std::exp(theta(0));
    const Eigen::VectorXd beta = theta.tail(frame_.dim());
    const Eigen::VectorXd eta0 = frame_.X * beta;
    double total = penalty_.quadratic(beta);
    for (Eigen::Index i = 0; i < frame_.num_groups(); ++i) {
      const auto& g = frame_.groups[static_cast<std::size_t>(i)];
      const auto offset = eta0.segment(g.start, g.size);
      const GroupMode gm = group_mode_at(frame_, i, offset, sigma, modes_[i]);
      double sum = 0.0;
      for (int q = 0; q < rule_.order; ++q) {
        const double u = gm.u_hat + rule_.nodes(q) / std::sqrt(gm.curvature);
        sum += rule_.weights(q) * group_nll_at(frame_, i, u, offset, sigma);
      }
      const double inner = sum / std::sqrt(gm.curvature);
      total -= inner > 0.0 ? std::log(inner) : std::numeric_limits<double>::quiet_NaN();
    }
    return total;
  }

 private:
  void check_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != dim()) throw ContractError("PML parameter vector has wrong length");
    if (!theta.allFinite()) throw NumericError("non-finite PML parameters");
  }

  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad,
                  std::vector<double>* per_group = nullptr) {
    check_theta(theta);
    const Eigen::Index d = frame_.dim();
    const double log_sigma = theta(0);
    const double sigma = std::exp(log_sigma);
    const double prec = std::exp(-2.0 * log_sigma);
    if (!(sigma > 0.0) || !std::isfinite(prec)) throw NumericError("sigma out of range");
    const Eigen::VectorXd beta = theta.tail(d);
    const Eigen::VectorXd eta0 = frame_.X * beta;
    const int k = rule_.order;

    const Eigen::VectorXd Sbeta = penalty_.S * beta;
    double total = 0.5 * beta.dot(Sbeta);
    if (grad) {
      grad->resize(d + 1);
      grad->setZero();
      grad->tail(d) = Sbeta;
    }
    if (per_group) per_group->clear();

    Eigen::VectorXd terms(k), dLdu(k), dLdtau(k);
    for (Eigen::Index i = 0; i < frame_.num_groups(); ++i) {
      const auto& g = frame_.groups[static_cast<std::size_t>(i)];
      const auto offset = eta0.segment(g.start, g.size);
      const GroupMode gm = group_mode_at(frame_, i, offset, sigma, modes_[i]);
      modes_[i] = gm.u_hat;
      const double h = gm.curvature;
      const double scale = std::sqrt(2.0 / h);

      // node values and their u / log-sigma partials
      Eigen::MatrixXd r1(grad ? g.size : 0, k);
      for (int q = 0; q < k; ++q) {
        const double u = gm.u_hat + scale * rule_.nodes(q);
        double L = 0.5 * u * u * prec + log_sigma + detail::kHalfLog2Pi;
        double gu = u * prec;
        for (Eigen::Index j = 0; j < g.size; ++j) {
          const double eta = offset(j) + u;
          detail::check_eta(eta, i, j);
          const double yv = frame_.y(g.start + j);
          L -= log_density_unchecked(frame_.family, yv, eta);
          if (grad) {
            const double d1 = log_density_derivs_all(frame_.family, yv, eta).d1;
            gu -= d1;
            r1(j, q) = d1;
          }
        }
        terms(q) = rule_.log_adapted_weights(q) - L;
        dLdu(q) = gu;
        dLdtau(q) = 1.0 - u * u * prec;
      }
      const double lse = detail::log_sum_exp(terms);
      const double log_integral = std::log(scale) + lse;
      if (!std::isfinite(log_integral)) {
        throw NumericError("group " + std::to_string(i) + ": non-finite quadrature value");
      }
      total -= log_integral;
      if (per_group) per_group->push_back(log_integral);
      if (!grad) continue;

      const Eigen::VectorXd pi = (terms.array() - lse).exp().matrix();
      const auto Xi = frame_.X.middleRows(g.start, g.size);
      Eigen::VectorXd w(g.size), d3(g.size);
      for (Eigen::Index j = 0; j < g.size; ++j) {
        const auto dv =
            log_density_derivs_all(frame_.family, frame_.y(g.start + j), offset(j) + gm.u_hat);
        w(j) = -dv.d2;
        d3(j) = dv.d3;
      }
      const double h_u = -d3.sum();
      // implicit derivatives of the mode and of the curvature
      const double du_tau = 2.0 * gm.u_hat * prec / h;
      const Eigen::VectorXd du_beta = -(Xi.transpose() * w) / h;
      const double dh_tau = -2.0 * prec + h_u * du_tau;
      const Eigen::VectorXd dh_beta = -(Xi.transpose() * d3) + h_u * du_beta;

      const double a0 = pi.dot(dLdu);
      const double a1 = pi.dot(dLdu.cwiseProduct(rule_.nodes));
      const double t_tau = pi.dot(dLdtau);
      const Eigen::VectorXd rbar = r1 * pi;

      (*grad)(0) += 0.5 * dh_tau / h + t_tau + a0 * du_tau - 0.5 * scale * a1 * dh_tau / h;
      grad->tail(d) += (0.5 / h - 0.5 * scale * a1 / h) * dh_beta - Xi.transpose() * rbar +
                       a0 * du_beta;
    }
    return total;
  }

  const ModelFrame& frame_;
  PenaltyState penalty_;
  QuadratureRule rule_;
  std::vector<double> modes_;
};

inline Eigen::VectorXd pml_theta(double log_sigma, const Eigen::VectorXd& beta) {
  Eigen::VectorXd theta(beta.size() + 1);
  theta(0) = log_sigma;
  theta.tail(beta.size()) = beta;
  return theta;
}

inline double pml_objective(double log_sigma, const Eigen::VectorXd& beta,
                            const Eigen::VectorXd& lambda_hat, int k, const ModelFrame& frame) {
  PmlObjective obj(frame, lambda_hat, k);
  return obj.value(pml_theta(log_sigma, beta));
}

inline Eigen::VectorXd pml_gradient(double log_sigma, const Eigen::VectorXd& beta,
                                    const Eigen::VectorXd& lambda_hat, int k,
                                    const ModelFrame& frame) {
  PmlObjective obj(frame, lambda_hat, k);
  Eigen::VectorXd grad;
  obj.value_and_gradient(pml_theta(log_sigma, beta), grad);
  return grad;
}

struct PmlOptions {
  int quad_points = 9;
  int max_iterations = 500;
  double grad_tol = 1e-6;  // relative to 1 + |objective|
  double hessian_step = 1e-5;
  double log_sigma_start = 0.0;
  double log_sigma_min = -10.0;
  double log_sigma_max = 5.0;
};

struct PmlFit {
  double sigma_hat = 0.0;
  double log_sigma_hat = 0.0;
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd lambda_used;
  double objective = 0.0;
  Eigen::MatrixXd hessian;                   // (1+d) x (1+d) in (log sigma, beta)
  std::optional<Eigen::MatrixXd> covariance;  // withheld if the Hessian is not PD
  double sigma_se = std::numeric_limits<double>::quiet_NaN();  // delta method
  int k = 0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;
};

/// Hessian by central differences of an exact gradient, symmetrized.
template <class Grad>
Eigen::MatrixXd hessian_from_gradient(Grad&& gradient, const Eigen::VectorXd& x, double step) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    xp(j) = x(j) + step;
    const Eigen::VectorXd gp = gradient(xp);
    xp(j) = x(j) - step;
    const Eigen::VectorXd gm = gradient(xp);
    xp(j) = x(j);
    H.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (H + H.transpose());
}

namespace detail {

/// Newton steps on the exact gradient, used when BFGS stops at the noise floor
/// of the objective (ill-conditioned penalties make f-based line searches stall
/// while the gradient is still well above tolerance). Coordinates held at a
/// bound by an outward gradient are left fixed. Returns true once the free
/// gradient norm is below `tol`.
template <class FG>
bool newton_refine(FG&& fg, Eigen::VectorXd& x, double& f, Eigen::VectorXd& g,
                   const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, double tol,
                   double step, int max_steps = 8) {
  const Eigen::Index n = x.size();
  auto free_mask = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& gg) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool held = (xx(i) <= lower(i) && gg(i) > 0.0) || (xx(i) >= upper(i) && gg(i) < 0.0);
      if (!held) idx.push_back(i);
    }
    return idx;
  };
  auto free_norm = [](const Eigen::VectorXd& gg, const std::vector<Eigen::Index>& idx) {
    double s = 0.0;
    for (auto i : idx) s += gg(i) * gg(i);
    return std::sqrt(s);
  };
  auto gradient = [&](const Eigen::VectorXd& t) {
    Eigen::VectorXd gg;
    fg(t, gg);
    return gg;
  };
  for (int it = 0; it < max_steps; ++it) {
    const auto idx = free_mask(x, g);
    const double gn = free_norm(g, idx);
    if (gn < tol) return true;
    if (idx.empty()) return true;
    const Eigen::MatrixXd H = hessian_from_gradient(gradient, x, step);
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd Hf(k, k);
    Eigen::VectorXd gf(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      gf(a) = g(idx[a]);
      for (Eigen::Index b = 0; b < k; ++b) Hf(a, b) = H(idx[a], idx[b]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Hf);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd delta = -llt.solve(gf);
    bool accepted = false;
    for (double t = 1.0; t > 1e-3; t *= 0.5) {
      Eigen::VectorXd xt = x;
      for (Eigen::Index a = 0; a < k; ++a) xt(idx[a]) += t * delta(a);
      xt = xt.cwiseMax(lower).cwiseMin(upper);
      Eigen::VectorXd gt;
      double ft;
      try {
        ft = fg(xt, gt);
      } catch (const NumericError&) {
        continue;
      }
      if (!std::isfinite(ft) || ft > f + 1e-9 * (1.0 + std::abs(f))) continue;
      if (free_norm(gt, free_mask(xt, gt)) >= gn) continue;
      x = xt;
      f = ft;
      g = gt;
      accepted = true;
      break;
    }
    if (!accepted) return false;
  }
  return free_norm(g, free_mask(x, g)) < tol;
}

}  // namespace detail

/// Stage 2: BFGS on (log sigma, beta) with the exact gradient, starting from
/// sigma = 1 and the stage-1 coefficients, then Wald curvature at the optimum.
inline PmlFit fit_pml(const ModelFrame& frame, const GamFit& gam, const PmlOptions& opt = {}) {
  const Eigen::Index d = frame.dim();
  PmlObjective obj(frame, gam.lambda_hat, opt.quad_points);
  auto fg = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    return obj.value_and_gradient(theta, grad);
  };
  BfgsOptions bo;
  bo.max_iterations = opt.max_iterations;
  bo.grad_tol = opt.grad_tol;
  bo.relative = true;
  bo.lower = Eigen::VectorXd::Constant(d + 1, -std::numeric_limits<double>::infinity());
  bo.upper = Eigen::VectorXd::Constant(d + 1, std::numeric_limits<double>::infinity());
  bo.lower(0) = opt.log_sigma_min;
  bo.upper(0) = opt.log_sigma_max;
  BfgsResult res = minimize_bfgs(fg, pml_theta(opt.log_sigma_start, gam.beta), bo);
  if (!res.converged && res.iterations < opt.max_iterations) {
    const double tol = opt.grad_tol * (1.0 + std::abs(res.value));
    if (detail::newton_refine(fg, res.x, res.value, res.gradient, bo.lower, bo.upper, tol,
                              opt.hessian_step)) {
      res.converged = true;
      res.message = "gradient tolerance reached after Newton refinement";
    }
  }

  PmlFit fit;
  fit.k = opt.quad_points;
  fit.lambda_used = gam.lambda_hat;
  fit.log_sigma_hat = res.x(0);
  fit.sigma_hat = std::exp(res.x(0));
  fit.beta_hat = res.x.tail(d);
  fit.objective = res.value;
  fit.iterations = res.iterations;
  fit.gradient_norm = res.gradient.norm();
  fit.message = res.message;
  fit.trace = res.trace;
  fit.converged = res.converged;

  auto gradient = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd g;
    obj.value_and_gradient(theta, g);
    return g;
  };
  try {
    fit.hessian = hessian_from_gradient(gradient, res.x, opt.hessian_step);
    Eigen::LLT<Eigen::MatrixXd> llt(fit.hessian);
    if (llt.info() == Eigen::Success) {
      fit.covariance = llt.solve(Eigen::MatrixXd::Identity(d + 1, d + 1));
      fit.sigma_se = fit.sigma_hat * std::sqrt((*fit.covariance)(0, 0));
    } else {
      fit.converged = false;
      fit.message = "Hessian at the optimum is not positive definite";
    }
  } catch (const NumericError& e) {
    fit.converged = false;
    fit.message = std::string("Hessian evaluation failed: ") + e.what();
  }
  return fit;
}

/// Wald band for smooth `smooth` from the beta-block of the inverse Hessian.
inline FunctionBand wald_band(const PmlFit& fit, const ModelDesign& design,
                              const std::vector<double>& grid, std::size_t smooth = 0,
                              const Eigen::RowVectorXd& centre = {}) {
  if (!fit.covariance) throw NumericError("covariance withheld: Hessian not positive definite");
  const Eigen::Index d = design.dim();
  return wald_band(design, smooth, fit.beta_hat, fit.covariance->bottomRightCorner(d, d), grid,
                   centre);
}

}  // namespace pmlgamm
