#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/errors.hpp"
#include "pmlgamm/family.hpp"
#include "pmlgamm/model.hpp"

namespace pmlgamm {

/// Smoothing parameters and the block-diagonal penalty precision they induce.
struct PenaltyState {
  Eigen::VectorXd lambda;
  Eigen::MatrixXd S;  // S_lambda

  PenaltyState() = default;
  PenaltyState(const ModelDesign& design, Eigen::VectorXd lam) : lambda(std::move(lam)) {
    for (Eigen::Index s = 0; s < lambda.size(); ++s) {
      if (!(lambda(s) > 0.0) || !std::isfinite(lambda(s))) {
        throw ContractError("smoothing parameters must be finite and positive");
      }
    }
    S = design.penalty(lambda);
  }

  static PenaltyState from_log(const ModelDesign& design, const Eigen::VectorXd& log_lambda) {
    return PenaltyState(design, log_lambda.array().exp().matrix());
  }

  /// (1/2) beta^T S_lambda beta
  double quadratic(const Eigen::VectorXd& beta) const { return 0.5 * beta.dot(S * beta); }
};

struct InnerState {
  Eigen::VectorXd u;
  Eigen::VectorXd beta;
  double sigma = 1.0;
};

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

inline void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ContractError("sigma must be finite and positive, got " + std::to_string(sigma));
  }
}

inline void check_eta(double eta, Eigen::Index group, Eigen::Index row) {
  if (!std::isfinite(eta)) {
    throw NumericError("non-finite linear predictor in group " + std::to_string(group) +
                       ", row " + std::to_string(row));
  }
}

// -log g(u; sigma) for u ~ N(0, sigma^2).
inline double neg_log_prior(double u, double sigma) {
  return 0.5 * u * u / (sigma * sigma) + std::log(sigma) + kHalfLog2Pi;
}

}  // namespace detail

/// Fixed-effect linear predictor X beta.
inline Eigen::VectorXd fixed_predictor(const ModelFrame& frame, const Eigen::VectorXd& beta) {
  if (beta.size() != frame.dim()) throw ContractError("beta has wrong length");
  return frame.X * beta;
}

/// L_i(u) = -sum_j log psi(y_ij; offset_ij + u) - log g(u; sigma), where
/// `offset` is the group's slice of X beta.
inline double group_nll_at(const ModelFrame& frame, Eigen::Index i, double u,
                           const Eigen::Ref<const Eigen::VectorXd>& offset, double sigma) {
  const auto& g = frame.groups[static_cast<std::size_t>(i)];
  double out = detail::neg_log_prior(u, sigma);
  for (Eigen::Index j = 0; j < g.size; ++j) {
    const double eta = offset(j) + u;
    detail::check_eta(eta, i, j);
    out -= log_density_unchecked(frame.family, frame.y(g.start + j), eta);
  }
  return out;
}

inline double group_nll(const ModelFrame& frame, Eigen::Index i, double u,
                        const Eigen::VectorXd& beta, double sigma) {
  if (i < 0 || i >= frame.num_groups()) throw ContractError("group index out of range");
  detail::check_sigma(sigma);
  const auto& g = frame.groups[static_cast<std::size_t>(i)];
  const Eigen::VectorXd offset = frame.X.middleRows(g.start, g.size) * beta;
  return group_nll_at(frame, i, u, offset, sigma);
}

/// Penalized negative log-likelihood without the lambda-only normalizer:
/// sum_i L_i(u_i, beta) + (1/2) beta^T S_lambda beta.
inline double penalized_nll(const InnerState& state, const PenaltyState& penalty,
                            const ModelFrame& frame) {
  detail::check_sigma(state.sigma);
  if (state.u.size() != frame.num_groups()) throw ContractError("u has wrong length");
  const Eigen::VectorXd eta0 = fixed_predictor(frame, state.beta);
  double out = penalty.quadratic(state.beta);
  for (Eigen::Index i = 0; i < frame.num_groups(); ++i) {
    const auto& g = frame.groups[static_cast<std::size_t>(i)];
    out += group_nll_at(frame, i, state.u(i), eta0.segment(g.start, g.size), state.sigma);
  }
  return out;
}

/// Hessian of penalized_nll in (u, beta) for fixed theta, stored in arrow
/// form: diagonal u-block, dense u-beta coupling and dense beta-block.
struct ArrowHessian {
  Eigen::VectorXd uu;    // m
  Eigen::MatrixXd ub;    // m x d
  Eigen::MatrixXd bb;    // d x d

  Eigen::MatrixXd dense() const {
    const Eigen::Index m = uu.size(), d = bb.rows();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + d, m + d);
    H.topLeftCorner(m, m).diagonal() = uu;
    H.topRightCorner(m, d) = ub;
    H.bottomLeftCorner(d, m) = ub.transpose();
    H.bottomRightCorner(d, d) = bb;
    return H;
  }

  /// Schur complement of the u-block: bb - ub^T diag(uu)^{-1} ub.
  Eigen::MatrixXd schur() const {
    return bb - ub.transpose() * uu.cwiseInverse().asDiagonal() * ub;
  }

  /// log det H = sum log uu_i + log det(schur). Requires a PD Hessian.
  double log_det() const {
    if ((uu.array() <= 0.0).any()) throw NumericError("u-block of the Hessian is not positive");
    Eigen::LLT<Eigen::MatrixXd> llt(schur());
    if (llt.info() != Eigen::Success) throw NumericError("Hessian is not positive definite");
    return uu.array().log().sum() +
           2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  /// Beta-block of H^{-1}, which is the inverse Schur complement.
  Eigen::MatrixXd beta_covariance() const {
    Eigen::LLT<Eigen::MatrixXd> llt(schur());
    if (llt.info() != Eigen::Success) throw NumericError("Hessian is not positive definite");
    return llt.solve(Eigen::MatrixXd::Identity(bb.rows(), bb.cols()));
  }
};

/// Gradient and arrow Hessian of penalized_nll at (u, beta).
inline Eigen::VectorXd penalized_nll_gradient(const InnerState& state, const PenaltyState& penalty,
                                              const ModelFrame& frame,
                                              ArrowHessian* hessian = nullptr) {
  detail::check_sigma(state.sigma);
  const Eigen::Index m = frame.num_groups(), d = frame.dim();
  const double prec = 1.0 / (state.sigma * state.sigma);
  const Eigen::VectorXd eta0 = fixed_predictor(frame, state.beta);
  Eigen::VectorXd grad(m + d);
  grad.tail(d) = penalty.S * state.beta;
  Eigen::VectorXd w(frame.num_rows());
  if (hessian) {
    hessian->uu.resize(m);
    hessian->ub.setZero(m, d);
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& g = frame.groups[static_cast<std::size_t>(i)];
    double gu = state.u(i) * prec;
    double hu = prec;
    for (Eigen::Index j = 0; j < g.size; ++j) {
      const Eigen::Index r = g.start + j;
      const double eta = eta0(r) + state.u(i);
      detail::check_eta(eta, i, j);
      const auto dv = log_density_derivs_all(frame.family, frame.y(r), eta);
      gu -= dv.d1;
      hu -= dv.d2;
      w(r) = -dv.d2;
      grad.tail(d) -= dv.d1 * frame.X.row(r).transpose();
      if (hessian) hessian->ub.row(i) += w(r) * frame.X.row(r);
    }
    grad(i) = gu;
    if (hessian) hessian->uu(i) = hu;
  }
  if (hessian) {
    hessian->bb = frame.X.transpose() * w.asDiagonal() * frame.X + penalty.S;
  }
  return grad;
}

struct GroupMode {
  double u_hat = 0.0;
  double curvature = 0.0;  // h_ii
  int iterations = 0;
};

/// Mode and curvature of u -> L_i(u) for a fixed offset slice (X beta)_i.
/// Newton with step-halving; L_i is strictly convex for log-concave families.
inline GroupMode group_mode_at(const ModelFrame& frame, Eigen::Index i,
                               const Eigen::Ref<const Eigen::VectorXd>& offset, double sigma,
                               double start = 0.0, double tol = 1e-10, int max_iter = 100) {
  const auto& g = frame.groups[static_cast<std::size_t>(i)];
  const double prec = 1.0 / (sigma * sigma);
  auto derivs = [&](double u, double& grad, double& hess) {
    grad = u * prec;
    hess = prec;
    for (Eigen::Index j = 0; j < g.size; ++j) {
      const auto dv = log_density_derivs_all(frame.family, frame.y(g.start + j), offset(j) + u);
      grad -= dv.d1;
      hess -= dv.d2;
    }
  };
  double u = std::isfinite(start) ? start : 0.0;
  double grad = 0.0, hess = 0.0;
  derivs(u, grad, hess);
  double value = group_nll_at(frame, i, u, offset, sigma);
  GroupMode out;
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(grad) < tol) {
      out.u_hat = u;
      out.curvature = hess;
      out.iterations = it;
      return out;
    }
    const double step = -grad / hess;
    double t = 1.0;
    double u_new = u + step, v_new = 0.0;
    for (int half = 0; half < 60; ++half) {
      u_new = u + t * step;
      v_new = group_nll_at(frame, i, u_new, offset, sigma);
      if (std::isfinite(v_new) && v_new <= value + 1e-14 * std::abs(value)) break;
      t *= 0.5;
    }
    if (u_new == u) {
      // step below floating-point resolution of u
      derivs(u, grad, hess);
      if (std::abs(grad) < 1e3 * tol) {
        out.u_hat = u;
        out.curvature = hess;
        out.iterations = it;
        return out;
      }
      break;
    }
    u = u_new;
    value = v_new;
    derivs(u, grad, hess);
  }
  throw NumericError("group " + std::to_string(i) + ": mode search did not converge (u = " +
                     std::to_string(u) + ", gradient = " + std::to_string(grad) + ")");
}

inline GroupMode group_mode(const ModelFrame& frame, Eigen::Index i, const Eigen::VectorXd& beta,
                            double sigma, double start = 0.0) {
  if (i < 0 || i >= frame.num_groups()) throw ContractError("group index out of range");
  detail::check_sigma(sigma);
  const auto& g = frame.groups[static_cast<std::size_t>(i)];
  const Eigen::VectorXd offset = frame.X.middleRows(g.start, g.size) * beta;
  return group_mode_at(frame, i, offset, sigma, start);
}

struct InnerResult {
  Eigen::VectorXd u_hat;
  Eigen::VectorXd beta_hat;
  double value = 0.0;  // penalized_nll at the mode
  ArrowHessian hessian;
  int iterations = 0;
};

struct InnerOptions {
  double rel_tol = 1e-8;
  int max_iterations = 100;
};

/// Joint Newton minimization of penalized_nll over (u, beta) at fixed
/// (sigma, lambda). Steps solve the arrow system by a Schur complement on the
/// diagonal u-block; an indefinite Schur complement gets a growing ridge.
inline InnerResult inner_newton(const PenaltyState& penalty, double sigma, const ModelFrame& frame,
                                const InnerState& start, const InnerOptions& opt = {}) {
  detail::check_sigma(sigma);
  const Eigen::Index m = frame.num_groups(), d = frame.dim();
  if (start.u.size() != m || start.beta.size() != d || !start.u.allFinite() ||
      !start.beta.allFinite()) {
    throw ContractError("inner_newton start has wrong shape or non-finite entries");
  }
  InnerState state{start.u, start.beta, sigma};
  double value = penalized_nll(state, penalty, frame);
  InnerResult out;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    ArrowHessian H;
    const Eigen::VectorXd grad = penalized_nll_gradient(state, penalty, frame, &H);
    if (grad.norm() < opt.rel_tol * (1.0 + std::abs(value))) {
      out.u_hat = state.u;
      out.beta_hat = state.beta;
      out.value = value;
      out.hessian = std::move(H);
      out.iterations = it;
      return out;
    }
    if (it == opt.max_iterations) break;

    const Eigen::VectorXd gu = grad.head(m), gb = grad.tail(d);
    Eigen::MatrixXd C = H.schur();
    const Eigen::VectorXd rhs = -gb + H.ub.transpose() * gu.cwiseQuotient(H.uu);
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    double ridge = 1e-8 * (1.0 + C.diagonal().cwiseAbs().maxCoeff());
    while (llt.info() != Eigen::Success) {
      llt.compute(C + ridge * Eigen::MatrixXd::Identity(d, d));
      ridge *= 10.0;
      if (ridge > 1e12) throw NumericError("inner Newton: cannot regularize Hessian");
    }
    const Eigen::VectorXd db = llt.solve(rhs);
    const Eigen::VectorXd du = (-gu - H.ub * db).cwiseQuotient(H.uu);

    double t = 1.0;
    InnerState trial = state;
    double trial_value = value;
    bool improved = false;
    for (int half = 0; half < 60; ++half) {
      trial.u = state.u + t * du;
      trial.beta = state.beta + t * db;
      try {
        trial_value = penalized_nll(trial, penalty, frame);
      } catch (const NumericError&) {
        trial_value = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(trial_value) && trial_value <= value) {
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
    const bool stalled = trial_value == value;
    state = trial;
    value = trial_value;
    if (stalled) {
      // at floating-point resolution; accept if the gradient is nearly there
      const Eigen::VectorXd g2 = penalized_nll_gradient(state, penalty, frame, &H);
      if (g2.norm() < 1e3 * opt.rel_tol * (1.0 + std::abs(value))) {
        out.u_hat = state.u;
        out.beta_hat = state.beta;
        out.value = value;
        out.hessian = std::move(H);
        out.iterations = it + 1;
        return out;
      }
      break;
    }
  }
  throw NumericError("inner Newton did not converge");
}

}  // namespace pmlgamm
