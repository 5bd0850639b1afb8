#pragma once

#include <random>
#include <vector>

#include "pmlgamm/pmlgamm.hpp"

namespace testing_support {

using namespace pmlgamm;

inline ModelFrame simulated_frame(Family family, int m, int n, std::uint64_t seed,
                                  double sigma = 1.0, int num_basis = 8,
                                  const std::string& f = "sin2pi") {
  const Dataset data = simulate_dataset(m, n, sigma, true_function(f), family, seed);
  const SmoothSpec spec{0, num_basis, KnotStrategy::Quantile, std::make_pair(0.0, 1.0)};
  return ModelFrame(data, family, std::vector<SmoothSpec>{spec});
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

// Group indicator matrix Z (rows x groups).
inline Eigen::MatrixXd indicator(const ModelFrame& frame) {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(frame.num_rows(), frame.num_groups());
  for (Eigen::Index i = 0; i < frame.num_groups(); ++i) {
    const auto& g = frame.groups[static_cast<std::size_t>(i)];
    Z.block(g.start, i, g.size, 1).setOnes();
  }
  return Z;
}

template <class F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size()), xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

// Exact Gaussian (unit residual variance) log-likelihood of y given the fixed
// predictor X beta, integrating the random intercepts: y ~ N(X beta, I + s^2 Z Z^T).
inline double gaussian_marginal_nll(const ModelFrame& frame, const Eigen::VectorXd& beta,
                                    double sigma) {
  const Eigen::MatrixXd Z = indicator(frame);
  const Eigen::Index n = frame.num_rows();
  const Eigen::MatrixXd V =
      Eigen::MatrixXd::Identity(n, n) + sigma * sigma * Z * Z.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::VectorXd r = frame.y - frame.X * beta;
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * n * std::log(2.0 * std::numbers::pi) + 0.5 * logdet + 0.5 * r.dot(llt.solve(r));
}

// Golden-section minimization on [a, b].
template <class F>
double golden_section(F&& f, double a, double b, double tol = 1e-10) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace testing_support
