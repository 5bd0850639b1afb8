#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "pmlgamm/family.hpp"

using namespace pmlgamm;

namespace {

double fd(Family f, double y, double eta, int order) {
  const double h = 1e-4;
  auto g = [&](double e) {
    return order == 1 ? log_density(f, y, e) : log_density_derivs(f, y, e, order - 1);
  };
  return (g(eta + h) - g(eta - h)) / (2.0 * h);
}

}  // namespace

TEST(Family, PoissonLogDensityAtZero) {
  EXPECT_NEAR(log_density(Family::Poisson, 2.0, 0.0), -1.0 - std::log(2.0), 1e-15);
}

TEST(Family, BernoulliLogDensityAtZero) {
  EXPECT_NEAR(log_density(Family::Bernoulli, 1.0, 0.0), -std::log(2.0), 1e-15);
  EXPECT_NEAR(log_density(Family::Bernoulli, 0.0, 0.0), -std::log(2.0), 1e-15);
}

TEST(Family, GaussianLogDensity) {
  EXPECT_NEAR(log_density(Family::Gaussian, 1.5, 0.5),
              -0.5 * std::log(2.0 * std::numbers::pi) - 0.5, 1e-15);
}

TEST(Family, BernoulliStableForLargeEta) {
  EXPECT_NEAR(log_density(Family::Bernoulli, 1.0, 800.0), 0.0, 1e-300);
  EXPECT_NEAR(log_density(Family::Bernoulli, 0.0, 800.0), -800.0, 1e-9);
  EXPECT_NEAR(log_density(Family::Bernoulli, 0.0, -800.0), 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(log_density_derivs(Family::Bernoulli, 1.0, -800.0, 3)));
}

TEST(Family, PoissonSecondDerivativeIsMinusMean) {
  EXPECT_NEAR(log_density_derivs(Family::Poisson, 3.0, std::log(2.5), 2), -2.5, 1e-14);
  EXPECT_NEAR(log_density_derivs(Family::Poisson, 3.0, std::log(2.5), 3), -2.5, 1e-14);
}

TEST(Family, DerivativesMatchFiniteDifferences) {
  struct Case {
    Family f;
    double y;
  };
  for (const Case c : {Case{Family::Gaussian, 0.7}, Case{Family::Poisson, 4.0},
                       Case{Family::Poisson, 0.0}, Case{Family::Bernoulli, 1.0},
                       Case{Family::Bernoulli, 0.0}}) {
    for (double eta : {-2.0, -0.3, 0.0, 0.9, 2.5}) {
      for (int order = 1; order <= 3; ++order) {
        const double exact = log_density_derivs(c.f, c.y, eta, order);
        EXPECT_NEAR(exact, fd(c.f, c.y, eta, order), 1e-7 * (1.0 + std::abs(exact)))
            << family_name(c.f) << " y=" << c.y << " eta=" << eta << " order=" << order;
      }
    }
  }
}

TEST(Family, RejectsResponsesOutsideSupport) {
  EXPECT_THROW(log_density(Family::Poisson, -1.0, 0.0), DomainError);
  EXPECT_THROW(log_density(Family::Poisson, 1.5, 0.0), DomainError);
  EXPECT_THROW(log_density(Family::Bernoulli, 2.0, 0.0), DomainError);
  EXPECT_THROW(log_density(Family::Gaussian, std::nan(""), 0.0), DomainError);
}

TEST(Family, RejectsBadDerivativeOrder) {
  EXPECT_THROW(log_density_derivs(Family::Poisson, 1.0, 0.0, 0), ContractError);
  EXPECT_THROW(log_density_derivs(Family::Poisson, 1.0, 0.0, 4), ContractError);
}

TEST(Family, ParseNames) {
  EXPECT_EQ(parse_family("poisson"), Family::Poisson);
  EXPECT_EQ(parse_family("binomial"), Family::Bernoulli);
  EXPECT_THROW(parse_family("gamma"), ConfigError);
}
