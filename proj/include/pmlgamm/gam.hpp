#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/band.hpp"
#include "pmlgamm/errors.hpp"
#include "pmlgamm/inner.hpp"
#include "pmlgamm/model.hpp"
#include "pmlgamm/optim.hpp"

namespace pmlgamm {

/// Penalized mode of the sigma = 0 model (no random effects).
struct GamMode {
  Eigen::VectorXd beta;
  double value = 0.0;       // -sum log psi + (1/2) beta^T S beta
  Eigen::MatrixXd hessian;  // X^T W X + S_lambda
  int iterations = 0;
};

inline double gam_penalized_nll(const ModelFrame& frame, const PenaltyState& penalty,
                                const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = fixed_predictor(frame, beta);
  double out = penalty.quadratic(beta);
  for (Eigen::Index r = 0; r < eta.size(); ++r) {
    if (!std::isfinite(eta(r))) throw NumericError("non-finite linear predictor at row " +
                                                   std::to_string(r));
    out -= log_density_unchecked(frame.family, frame.y(r), eta(r));
  }
  return out;
}

inline GamMode gam_mode(const ModelFrame& frame, const PenaltyState& penalty,
                        Eigen::VectorXd beta, const InnerOptions& opt = {}) {
  const Eigen::Index d = frame.dim(), n = frame.num_rows();
  if (beta.size() != d || !beta.allFinite()) beta = Eigen::VectorXd::Zero(d);
  double value = gam_penalized_nll(frame, penalty, beta);
  Eigen::VectorXd w(n), r1(n);
  for (int it = 0; it <= opt.max_iterations; ++it) {
    const Eigen::VectorXd eta = frame.X * beta;
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto dv = log_density_derivs_all(frame.family, frame.y(r), eta(r));
      r1(r) = dv.d1;
      w(r) = -dv.d2;
    }
    const Eigen::VectorXd grad = -frame.X.transpose() * r1 + penalty.S * beta;
    Eigen::MatrixXd H = frame.X.transpose() * w.asDiagonal() * frame.X + penalty.S;
    if (grad.norm() < opt.rel_tol * (1.0 + std::abs(value))) {
      return {beta, value, std::move(H), it};
    }
    if (it == opt.max_iterations) break;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    double ridge = 1e-8 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
    while (llt.info() != Eigen::Success) {
      llt.compute(H + ridge * Eigen::MatrixXd::Identity(d, d));
      ridge *= 10.0;
      if (ridge > 1e12) throw NumericError("GAM Newton: cannot regularize Hessian");
    }
    const Eigen::VectorXd step = -llt.solve(grad);
    double t = 1.0, trial = value;
    Eigen::VectorXd cand = beta;
    bool improved = false;
    for (int half = 0; half < 60; ++half) {
      cand = beta + t * step;
      try {
        trial = gam_penalized_nll(frame, penalty, cand);
      } catch (const NumericError&) {
        trial = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(trial) && trial <= value) {
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
    const bool stalled = trial == value;
    beta = cand;
    value = trial;
    if (stalled) {
      const Eigen::VectorXd e2 = frame.X * beta;
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto dv = log_density_derivs_all(frame.family, frame.y(r), e2(r));
        r1(r) = dv.d1;
        w(r) = -dv.d2;
      }
      const Eigen::VectorXd g2 = -frame.X.transpose() * r1 + penalty.S * beta;
      if (g2.norm() < 1e3 * opt.rel_tol * (1.0 + std::abs(value))) {
        return {beta, value, frame.X.transpose() * w.asDiagonal() * frame.X + penalty.S, it + 1};
      }
      break;
    }
  }
  throw NumericError("GAM inner Newton did not converge");
}

/// Laplace-approximate negative log marginal likelihood of the sigma = 0 model
/// as a function of log(lambda):
///   -(d/2) log(2 pi) + (1/2) log det H + Phi(beta_hat) + penalty normalizer.
/// `warm` seeds the inner Newton and receives the new mode.
inline double gam_laml(const Eigen::VectorXd& log_lambda, const ModelFrame& frame,
                       PenaltyLogDet logdet_mode = PenaltyLogDet::Rank,
                       Eigen::VectorXd* warm = nullptr, GamMode* mode_out = nullptr) {
  if (!log_lambda.allFinite()) throw ContractError("log lambda must be finite");
  const auto penalty = PenaltyState::from_log(frame.design, log_lambda);
  Eigen::VectorXd start = warm ? *warm : Eigen::VectorXd::Zero(frame.dim());
  GamMode mode = gam_mode(frame, penalty, start);
  Eigen::LLT<Eigen::MatrixXd> llt(mode.hessian);
  if (llt.info() != Eigen::Success) throw NumericError("GAM Hessian is not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = static_cast<double>(frame.dim());
  const double out = -0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * logdet + mode.value +
                     frame.design.penalty_normalizer(log_lambda, logdet_mode);
  if (warm) *warm = mode.beta;
  if (mode_out) *mode_out = std::move(mode);
  return out;
}

struct GamOptions {
  PenaltyLogDet logdet_mode = PenaltyLogDet::Rank;
  int max_outer_iterations = 200;
  double fd_step = 1e-4;
  double grad_tol = 1e-3;
  double log_lambda_min = -20.0;
  double log_lambda_max = 20.0;
  std::optional<Eigen::VectorXd> start_log_lambda;
};

struct GamFit {
  Eigen::VectorXd lambda_hat;
  Eigen::VectorXd log_lambda_hat;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // inverse penalized Hessian at beta
  double laml_value = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;
};

/// Stage 1: minimize gam_laml over log(lambda) in a box by BFGS with central
/// finite-difference gradients.
inline GamFit fit_gam(const ModelFrame& frame, const GamOptions& opt = {}) {
  const auto p = static_cast<Eigen::Index>(frame.design.num_smooths());
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(frame.dim());
  auto objective = [&](const Eigen::VectorXd& rho) {
    return gam_laml(rho, frame, opt.logdet_mode, &warm);
  };
  auto fg = [&](const Eigen::VectorXd& rho, Eigen::VectorXd& grad) {
    const double f = objective(rho);
    const Eigen::VectorXd centre = warm;
    grad = central_difference_gradient(objective, rho, opt.fd_step);
    warm = centre;
    return f;
  };
  BfgsOptions bo;
  bo.max_iterations = opt.max_outer_iterations;
  bo.grad_tol = opt.grad_tol;
  bo.relative = false;
  bo.lower = Eigen::VectorXd::Constant(p, opt.log_lambda_min);
  bo.upper = Eigen::VectorXd::Constant(p, opt.log_lambda_max);
  const Eigen::VectorXd start = opt.start_log_lambda.value_or(Eigen::VectorXd::Zero(p));
  const BfgsResult res = minimize_bfgs(fg, start, bo);

  GamFit fit;
  fit.log_lambda_hat = res.x;
  fit.lambda_hat = res.x.array().exp().matrix();
  GamMode mode;
  fit.laml_value = gam_laml(res.x, frame, opt.logdet_mode, &warm, &mode);
  fit.beta = mode.beta;
  fit.covariance = mode.hessian.llt().solve(Eigen::MatrixXd::Identity(frame.dim(), frame.dim()));
  fit.outer_iterations = res.iterations;
  fit.converged = res.converged;
  fit.message = res.message;
  fit.trace = res.trace;
  return fit;
}

inline FunctionBand wald_band(const GamFit& fit, const ModelDesign& design,
                              const std::vector<double>& grid, std::size_t smooth = 0,
                              const Eigen::RowVectorXd& centre = {}) {
  return wald_band(design, smooth, fit.beta, fit.covariance, grid, centre);
}

}  // namespace pmlgamm
