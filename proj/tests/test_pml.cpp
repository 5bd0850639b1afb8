#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace pmlgamm;
using namespace testing_support;

namespace {

const Family kFamilies[] = {Family::Gaussian, Family::Poisson, Family::Bernoulli};

}  // namespace

TEST(PmlObjective, OrderOneEqualsLaplaceProfile) {
  std::mt19937_64 rng(1);
  for (Family f : kFamilies) {
    const auto fr = simulated_frame(f, 12, 4, 2);
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(1, 1.7);
    for (int rep = 0; rep < 5; ++rep) {
      const Eigen::VectorXd beta = random_vector(rng, fr.dim(), 0.8);
      const double log_sigma = std::normal_distribution<double>(0.0, 0.5)(rng);
      const double want = laplace_profile(fr, std::exp(log_sigma), beta, lambda);
      EXPECT_NEAR(pml_objective(log_sigma, beta, lambda, 1, fr), want, 1e-12 * std::abs(want))
          << family_name(f);
    }
  }
}

TEST(PmlObjective, GaussianIsExactForEveryOrder) {
  const auto fr = simulated_frame(Family::Gaussian, 10, 6, 3);
  std::mt19937_64 rng(2);
  const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(1, 0.4);
  const Eigen::VectorXd beta = random_vector(rng, fr.dim(), 1.0);
  const double log_sigma = -0.3;
  const double exact = gaussian_marginal_nll(fr, beta, std::exp(log_sigma)) +
                       PenaltyState(fr.design, lambda).quadratic(beta);
  for (int k : {1, 5, 9, 20}) {
    EXPECT_NEAR(pml_objective(log_sigma, beta, lambda, k, fr), exact, 1e-10 * std::abs(exact)) << k;
  }
}

TEST(PmlObjective, GroupIntegralsMatchTrapezoid) {
  const auto fr = simulated_frame(Family::Poisson, 10, 3, 4);
  std::mt19937_64 rng(3);
  const Eigen::VectorXd beta = random_vector(rng, fr.dim(), 0.5);
  const double sigma = 1.0;
  PmlObjective high(fr, Eigen::VectorXd::Constant(1, 1.0), 40);
  PmlObjective nine(fr, Eigen::VectorXd::Constant(1, 1.0), 9);
  const auto li40 = high.group_log_integrals(pml_theta(0.0, beta));
  const auto li9 = nine.group_log_integrals(pml_theta(0.0, beta));
  for (Eigen::Index i = 0; i < 10; ++i) {
    const double oracle = trapezoid_log_integral(fr, i, sigma, beta, 200000);
    EXPECT_LT(std::abs(std::expm1(li40[i] - oracle)), 1e-10) << i;
    EXPECT_LT(std::abs(std::expm1(li9[i] - oracle)), 1e-4) << i;
  }
}

TEST(PmlGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (Family f : kFamilies) {
    const auto fr = simulated_frame(f, 8, 4, 5);
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(1, 0.9);
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::VectorXd beta = random_vector(rng, fr.dim(), 0.7);
      const double log_sigma = std::normal_distribution<double>(0.0, 0.6)(rng);
      PmlObjective obj(fr, lambda, 9);
      Eigen::VectorXd g;
      const Eigen::VectorXd theta = pml_theta(log_sigma, beta);
      obj.value_and_gradient(theta, g);
      const Eigen::VectorXd fd = fd_gradient([&](const Eigen::VectorXd& t) { return obj.value(t); }, theta);
      EXPECT_LT(rel_err(g, fd), 1e-6) << family_name(f) << " rep " << rep;
      EXPECT_LT(rel_err(pml_gradient(log_sigma, beta, lambda, 9, fr), g), 1e-14);
    }
  }
}

TEST(FitPml, GaussianMatchesExactMarginalOracle) {
  const auto fr = simulated_frame(Family::Gaussian, 30, 5, 8, 1.0, 10);
  const GamFit gam = fit_gam(fr);
  const PmlFit fit = fit_pml(fr, gam);
  ASSERT_TRUE(fit.converged) << fit.message;
  const Eigen::MatrixXd S = fr.design.penalty(gam.lambda_hat);
  auto profile = [&](double ls) {
    const Eigen::VectorXd b = gaussian_profile_beta(fr, std::exp(ls), S);
    return gaussian_marginal_nll(fr, b, std::exp(ls)) + 0.5 * b.dot(S * b);
  };
  const double ls = golden_section(profile, -5.0, 3.0);
  EXPECT_NEAR(fit.sigma_hat, std::exp(ls), 1e-4);
  EXPECT_LT((fit.beta_hat - gaussian_profile_beta(fr, std::exp(ls), S)).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_EQ(fit.lambda_used, gam.lambda_hat);
}

TEST(FitPml, ZeroVarianceDataGiveSmallSigma) {
  const auto fr = simulated_frame(Family::Poisson, 100, 10, 9, 0.0, 10);
  const PmlFit fit = fit_pml(fr, fit_gam(fr));
  EXPECT_LT(fit.sigma_hat, 0.1);
}

TEST(FitPml, SigmaSaturatesInQuadratureOrder) {
  const auto fr = simulated_frame(Family::Poisson, 50, 3, 10, 1.0, 10);
  const GamFit gam = fit_gam(fr);
  PmlOptions o9, o15;
  o9.quad_points = 9;
  o15.quad_points = 15;
  const PmlFit a = fit_pml(fr, gam, o9), b = fit_pml(fr, gam, o15);
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_LT(std::abs(a.sigma_hat - b.sigma_hat), 1e-4);
  EXPECT_EQ(a.k, 9);
  EXPECT_EQ(b.k, 15);
}

TEST(FitPml, CovarianceInvertsHessianAndBandIsConsistent) {
  const auto fr = simulated_frame(Family::Poisson, 40, 5, 11, 1.0, 10);
  const PmlFit fit = fit_pml(fr, fit_gam(fr));
  ASSERT_TRUE(fit.covariance.has_value());
  const Eigen::Index n = fit.hessian.rows();
  EXPECT_LT((fit.hessian * *fit.covariance - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(fit.sigma_se, fit.sigma_hat * std::sqrt((*fit.covariance)(0, 0)), 1e-14);

  const auto grid = uniform_grid(0.05, 0.95, 100);
  const FunctionBand band = wald_band(fit, fr.design, grid);
  ASSERT_EQ(band.grid.size(), 100u);
  EXPECT_EQ(band.grid.front(), 0.05);
  EXPECT_EQ(band.grid.back(), 0.95);
  const Eigen::MatrixXd cov = fit.covariance->bottomRightCorner(fr.dim(), fr.dim());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const Eigen::RowVectorXd b = fr.design.smooth_row(0, grid[g]);
    EXPECT_NEAR(band.estimate[g], b.dot(fit.beta_hat), 1e-12);
    const double sd = std::sqrt(b * cov * b.transpose());
    EXPECT_NEAR(band.upper[g] - band.estimate[g], kNormalQuantile975 * sd, 1e-12);
    EXPECT_NEAR(band.estimate[g] - band.lower[g], kNormalQuantile975 * sd, 1e-12);
    EXPECT_LT(band.lower[g], band.upper[g]);
  }
}

TEST(FitPml, BandCentringSubtractsMeanRow) {
  const auto fr = simulated_frame(Family::Poisson, 20, 5, 12, 1.0, 8);
  const PmlFit fit = fit_pml(fr, fit_gam(fr));
  const std::vector<double> xs(fr.X.rows(), 0.5);
  const Eigen::RowVectorXd centre = smooth_centre(fr.design, 0, xs);
  const auto grid = uniform_grid(0.1, 0.9, 5);
  const auto plain = wald_band(fit, fr.design, grid);
  const auto centred = wald_band(fit, fr.design, grid, 0, centre);
  const double shift = centre.dot(fit.beta_hat);
  for (std::size_t g = 0; g < grid.size(); ++g) EXPECT_NEAR(centred.estimate[g], plain.estimate[g] - shift, 1e-12);
  EXPECT_NEAR(centred.variance[2], 0.0, 1e-12);  // x = 0.5 is the centre itself
}

TEST(PmlObjective, LiteralVariantIsReportedSeparately) {
  const auto fr = simulated_frame(Family::Poisson, 6, 4, 13);
  PmlObjective obj(fr, Eigen::VectorXd::Constant(1, 1.0), 9);
  const Eigen::VectorXd theta = pml_theta(0.0, Eigen::VectorXd::Zero(fr.dim()));
  const double literal = obj.literal_variant(theta);
  const double value = obj.value(theta);
  EXPECT_TRUE(std::isnan(literal) || std::abs(literal - value) > 1e-6);
}

TEST(PmlObjective, RejectsBadParameters) {
  const auto fr = simulated_frame(Family::Poisson, 6, 4, 13);
  PmlObjective obj(fr, Eigen::VectorXd::Constant(1, 1.0), 9);
  EXPECT_THROW(obj.value(Eigen::VectorXd::Zero(3)), ContractError);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(fr.dim() + 1);
  theta(0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(obj.value(theta), NumericError);
  EXPECT_THROW(PmlObjective(fr, Eigen::VectorXd::Constant(1, 1.0), 0), ConfigError);
}
