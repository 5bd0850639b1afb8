#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/band.hpp"
#include "pmlgamm/errors.hpp"
#include "pmlgamm/inner.hpp"
#include "pmlgamm/model.hpp"
#include "pmlgamm/optim.hpp"

namespace pmlgamm {

/// Laplace-approximate negative log marginal likelihood of the full mixed
/// model, integrating over (u, beta) jointly, at theta = (log sigma, log lambda):
///   -((m+d)/2) log(2 pi) + (1/2) log det H(theta) + penalized_nll(u_hat, beta_hat)
///   + penalty normalizer.
/// The random-effect normalizer m log(sigma) sits inside penalized_nll.
/// `warm` seeds the joint Newton solve and receives the new mode.
inline double laml_objective(const Eigen::VectorXd& theta, const ModelFrame& frame,
                             PenaltyLogDet logdet_mode = PenaltyLogDet::Rank,
                             InnerState* warm = nullptr, InnerResult* mode_out = nullptr) {
  const auto p = static_cast<Eigen::Index>(frame.design.num_smooths());
  if (theta.size() != p + 1) throw ContractError("theta must be (log sigma, log lambda)");
  if (!theta.allFinite()) throw ContractError("theta must be finite");
  const double sigma = std::exp(theta(0));
  const Eigen::VectorXd log_lambda = theta.tail(p);
  const auto penalty = PenaltyState::from_log(frame.design, log_lambda);
  InnerState start;
  if (warm && warm->u.size() == frame.num_groups() && warm->beta.size() == frame.dim()) {
    start = *warm;
  } else {
    start.u = Eigen::VectorXd::Zero(frame.num_groups());
    start.beta = Eigen::VectorXd::Zero(frame.dim());
  }
  InnerResult mode = inner_newton(penalty, sigma, frame, start);
  const double md = static_cast<double>(frame.num_groups() + frame.dim());
  const double out = -0.5 * md * std::log(2.0 * std::numbers::pi) + 0.5 * mode.hessian.log_det() +
                     mode.value + frame.design.penalty_normalizer(log_lambda, logdet_mode);
  if (warm) {
    warm->u = mode.u_hat;
    warm->beta = mode.beta_hat;
    warm->sigma = sigma;
  }
  if (mode_out) *mode_out = std::move(mode);
  return out;
}

struct GammLaplaceOptions {
  PenaltyLogDet logdet_mode = PenaltyLogDet::Rank;
  int max_outer_iterations = 200;
  double fd_step = 1e-4;
  double grad_tol = 1e-3;
  double log_sigma_min = -10.0;
  double log_sigma_max = 5.0;
  double log_lambda_min = -20.0;
  double log_lambda_max = 20.0;
  std::optional<Eigen::VectorXd> start;  // (log sigma, log lambda)
};

struct GammLaplaceFit {
  double sigma_hat = 0.0;
  Eigen::VectorXd lambda_hat;
  Eigen::VectorXd theta_hat;  // (log sigma, log lambda)
  Eigen::VectorXd u_hat;
  Eigen::VectorXd beta_hat;
  std::optional<Eigen::MatrixXd> covariance;  // beta-block of H^{-1}
  double objective = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;
};

/// BFGS over (log sigma, log lambda) with central-difference gradients and
/// warm-started inner solves.
inline GammLaplaceFit fit_gamm_laplace(const ModelFrame& frame,
                                       const GammLaplaceOptions& opt = {}) {
  const auto p = static_cast<Eigen::Index>(frame.design.num_smooths());
  InnerState warm;
  auto objective = [&](const Eigen::VectorXd& theta) {
    return laml_objective(theta, frame, opt.logdet_mode, &warm);
  };
  auto fg = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    const double f = objective(theta);
    const InnerState centre = warm;
    grad = central_difference_gradient(objective, theta, opt.fd_step);
    warm = centre;
    return f;
  };
  BfgsOptions bo;
  bo.max_iterations = opt.max_outer_iterations;
  bo.grad_tol = opt.grad_tol;
  bo.relative = false;
  bo.lower = Eigen::VectorXd::Constant(p + 1, opt.log_lambda_min);
  bo.upper = Eigen::VectorXd::Constant(p + 1, opt.log_lambda_max);
  bo.lower(0) = opt.log_sigma_min;
  bo.upper(0) = opt.log_sigma_max;
  const Eigen::VectorXd start = opt.start.value_or(Eigen::VectorXd::Zero(p + 1));
  const BfgsResult res = minimize_bfgs(fg, start, bo);

  GammLaplaceFit fit;
  fit.theta_hat = res.x;
  fit.sigma_hat = std::exp(res.x(0));
  fit.lambda_hat = res.x.tail(p).array().exp().matrix();
  InnerResult mode;
  fit.objective = laml_objective(res.x, frame, opt.logdet_mode, &warm, &mode);
  fit.u_hat = mode.u_hat;
  fit.beta_hat = mode.beta_hat;
  fit.outer_iterations = res.iterations;
  fit.converged = res.converged;
  fit.message = res.message;
  fit.trace = res.trace;
  try {
    fit.covariance = mode.hessian.beta_covariance();
  } catch (const NumericError& e) {
    fit.converged = false;
    fit.message = e.what();
  }
  return fit;
}

inline FunctionBand wald_band(const GammLaplaceFit& fit, const ModelDesign& design,
                              const std::vector<double>& grid, std::size_t smooth = 0,
                              const Eigen::RowVectorXd& centre = {}) {
  if (!fit.covariance) throw NumericError("covariance withheld: Hessian not positive definite");
  return wald_band(design, smooth, fit.beta_hat, *fit.covariance, grid, centre);
}

}  // namespace pmlgamm
