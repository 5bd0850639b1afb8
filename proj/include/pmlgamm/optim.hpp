#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/errors.hpp"

namespace pmlgamm {

struct BfgsOptions {
  int max_iterations = 200;
  // Converged when ||projected gradient|| < grad_tol * (relative ? 1 + |f| : 1).
  double grad_tol = 1e-6;
  bool relative = true;
  // Optional box; empty vectors mean unbounded.
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  int max_line_search = 40;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // objective at each accepted iterate
};

/// Central differences of a scalar function.
template <class F>
Eigen::VectorXd central_difference_gradient(F&& f, const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + step;
    const double fp = f(xp);
    xp(i) = x(i) - step;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

namespace detail {

struct LinePoint {
  double alpha = 0.0;
  double f = 0.0;
  double slope = 0.0;
  Eigen::VectorXd g;
};

// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), safeguarded
// into the interior of [min(a,b), max(a,b)].
inline double interpolate_step(const LinePoint& a, const LinePoint& b) {
  const double lo = std::min(a.alpha, b.alpha), hi = std::max(a.alpha, b.alpha);
  const double d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.slope * b.slope;
  double t = std::numeric_limits<double>::quiet_NaN();
  if (disc >= 0.0 && std::isfinite(b.f)) {
    const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
    t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
  }
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) t = 0.5 * (lo + hi);
  return t;
}

}  // namespace detail

/// Quasi-Newton (BFGS inverse-Hessian update) with a strong Wolfe line search
/// and optional box constraints handled by an active set: coordinates sitting
/// on a bound with the gradient pointing outward are frozen for the iteration.
///
/// `fg(x, grad)` returns f(x) and writes the gradient. A NumericError thrown
/// from `fg` at a trial point is treated as f = +inf.
template <class FG>
BfgsResult minimize_bfgs(FG&& fg, Eigen::VectorXd x0, const BfgsOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  const bool bounded = opt.lower.size() == n && opt.upper.size() == n;
  auto clamp = [&](Eigen::VectorXd& x) {
    if (bounded) x = x.cwiseMax(opt.lower).cwiseMin(opt.upper);
  };
  BfgsResult res;
  auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    ++res.evaluations;
    try {
      const double f = fg(x, g);
      if (!std::isfinite(f) || !g.allFinite()) return std::numeric_limits<double>::infinity();
      return f;
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Eigen::VectorXd x = std::move(x0);
  clamp(x);
  Eigen::VectorXd g(n);
  double f = eval(x, g);
  if (!std::isfinite(f)) throw NumericError("objective is not finite at the starting point");
  res.trace.push_back(f);

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  std::vector<bool> prev_active(static_cast<std::size_t>(n), false);

  auto active_set = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& gg) {
    std::vector<bool> a(static_cast<std::size_t>(n), false);
    if (!bounded) return a;
    for (Eigen::Index i = 0; i < n; ++i) {
      a[i] = (xx(i) <= opt.lower(i) && gg(i) > 0.0) || (xx(i) >= opt.upper(i) && gg(i) < 0.0);
    }
    return a;
  };

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    const auto active = active_set(x, g);
    Eigen::VectorXd pg = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) pg(i) = 0.0;
    const double tol = opt.grad_tol * (opt.relative ? 1.0 + std::abs(f) : 1.0);
    if (pg.norm() < tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    if (active != prev_active) {
      H.setIdentity();
      fresh = true;
    }
    prev_active = active;

    Eigen::VectorXd p = -(H * pg);
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) p(i) = 0.0;
    if (p.dot(pg) >= 0.0) {
      H.setIdentity();
      fresh = true;
      p = -pg;
    }

    double alpha_max = std::numeric_limits<double>::infinity();
    if (bounded) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (p(i) > 0.0) alpha_max = std::min(alpha_max, (opt.upper(i) - x(i)) / p(i));
        if (p(i) < 0.0) alpha_max = std::min(alpha_max, (opt.lower(i) - x(i)) / p(i));
      }
    }
    double alpha0 = fresh ? std::min(1.0, 1.0 / p.norm()) : 1.0;
    alpha0 = std::min(alpha0, alpha_max);

    // strong Wolfe line search
    constexpr double c1 = 1e-4, c2 = 0.9;
    detail::LinePoint origin{0.0, f, g.dot(p), g};
    detail::LinePoint prev = origin, cur, accepted;
    bool found = false;
    double alpha = alpha0;
    Eigen::VectorXd xt(n), gt(n);
    auto probe = [&](double a) {
      detail::LinePoint pt;
      pt.alpha = a;
      xt = x + a * p;
      clamp(xt);
      pt.f = eval(xt, gt);
      pt.g = gt;
      pt.slope = std::isfinite(pt.f) ? gt.dot(p) : std::numeric_limits<double>::infinity();
      return pt;
    };
    auto zoom = [&](detail::LinePoint lo, detail::LinePoint hi, int budget) {
      for (int it = 0; it < budget; ++it) {
        const double a = detail::interpolate_step(lo, hi);
        auto pt = probe(a);
        if (!std::isfinite(pt.f) || pt.f > f + c1 * a * origin.slope || pt.f >= lo.f) {
          hi = pt;
        } else {
          if (std::abs(pt.slope) <= -c2 * origin.slope) return std::make_pair(true, pt);
          if (pt.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
          lo = pt;
        }
        if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
      }
      // settle for sufficient decrease
      return std::make_pair(lo.alpha > 0.0, lo);
    };
    for (int it = 0; it < opt.max_line_search; ++it) {
      cur = probe(alpha);
      if (!std::isfinite(cur.f) || cur.f > f + c1 * alpha * origin.slope ||
          (it > 0 && cur.f >= prev.f)) {
        std::tie(found, accepted) = zoom(prev, cur, opt.max_line_search);
        break;
      }
      if (std::abs(cur.slope) <= -c2 * origin.slope) {
        found = true;
        accepted = cur;
        break;
      }
      if (cur.slope >= 0.0) {
        std::tie(found, accepted) = zoom(cur, prev, opt.max_line_search);
        break;
      }
      if (alpha >= alpha_max) {
        found = true;  // sufficient decrease at the box boundary
        accepted = cur;
        break;
      }
      prev = cur;
      alpha = std::min(2.0 * alpha, alpha_max);
    }

    if (!found || accepted.f > f) {
      if (!fresh) {
        H.setIdentity();
        fresh = true;
        continue;
      }
      res.message = "line search failed";
      break;
    }

    Eigen::VectorXd x_new = x + accepted.alpha * p;
    clamp(x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = accepted.g - g;
    const double f_old = f;
    x = x_new;
    f = accepted.f;
    g = accepted.g;
    res.trace.push_back(f);

    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (fresh) {
        H *= sy / yv.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * yv;
      H += (rho * rho * yv.dot(Hy) + rho) * (s * s.transpose()) -
           rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    if (s.norm() <= 1e-15 * (1.0 + x.norm()) && f_old - f <= 0.0) {
      res.message = "no progress";
      break;
    }
  }
  if (!res.converged && res.message.empty()) {
    Eigen::VectorXd pg = g;
    const auto active = active_set(x, g);
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) pg(i) = 0.0;
    if (pg.norm() < opt.grad_tol * (opt.relative ? 1.0 + std::abs(f) : 1.0)) {
      res.converged = true;
      res.message = "gradient tolerance reached";
    }
  }
  if (res.message.empty()) res.message = "iteration limit reached";
  res.x = x;
  res.value = f;
  res.gradient = g;
  return res;
}

}  // namespace pmlgamm
