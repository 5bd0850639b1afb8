#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "pmlgamm/errors.hpp"

namespace pmlgamm {

/// Response distribution with its canonical link.
/// Gaussian has unit variance; there is no free scale parameter.
enum class Family { Gaussian, Poisson, Bernoulli };

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::Poisson: return "poisson";
    case Family::Bernoulli: return "bernoulli";
  }
  return "unknown";
}

inline Family parse_family(std::string_view name) {
  if (name == "gaussian") return Family::Gaussian;
  if (name == "poisson") return Family::Poisson;
  if (name == "bernoulli" || name == "binomial") return Family::Bernoulli;
  throw ConfigError("unknown family '" + std::string(name) + "'");
}

/// True when y is in the support of the family.
inline bool valid_response(Family f, double y) {
  if (!std::isfinite(y)) return false;
  switch (f) {
    case Family::Gaussian: return true;
    case Family::Poisson: return y >= 0.0 && y == std::floor(y);
    case Family::Bernoulli: return y == 0.0 || y == 1.0;
  }
  return false;
}

inline void check_response(Family f, double y) {
  if (!valid_response(f, y)) {
    throw DomainError("response " + std::to_string(y) + " is invalid for family " +
                      std::string(family_name(f)));
  }
}

namespace detail {

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// log psi(y; eta) under the canonical link.
/// Validation is skipped on the hot path; use check_response on input data.
inline double log_density_unchecked(Family f, double y, double eta) {
  switch (f) {
    case Family::Gaussian: {
      const double r = y - eta;
      return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * r * r;
    }
    case Family::Poisson:
      return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    case Family::Bernoulli:
      return y * eta - detail::softplus(eta);
  }
  return 0.0;
}

inline double log_density(Family f, double y, double eta) {
  check_response(f, y);
  return log_density_unchecked(f, y, eta);
}

/// First three eta-derivatives of log psi(y; eta), computed together.
struct Derivs {
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
};

inline Derivs log_density_derivs_all(Family f, double y, double eta) {
  switch (f) {
    case Family::Gaussian:
      return {y - eta, -1.0, 0.0};
    case Family::Poisson: {
      const double mu = std::exp(eta);
      return {y - mu, -mu, -mu};
    }
    case Family::Bernoulli: {
      const double p = detail::logistic(eta);
      const double v = p * (1.0 - p);
      return {y - p, -v, -v * (1.0 - 2.0 * p)};
    }
  }
  return {};
}

inline double log_density_derivs(Family f, double y, double eta, int order) {
  if (order < 1 || order > 3) {
    throw ContractError("derivative order must be in 1..3, got " + std::to_string(order));
  }
  check_response(f, y);
  const Derivs d = log_density_derivs_all(f, y, eta);
  return order == 1 ? d.d1 : order == 2 ? d.d2 : d.d3;
}

}  // namespace pmlgamm
