#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/errors.hpp"
#include "pmlgamm/model.hpp"

namespace pmlgamm {

inline constexpr double kNormalQuantile975 = 1.959963984540054;

/// Pointwise Wald band for one smooth on a covariate grid.
struct FunctionBand {
  std::vector<double> grid;
  std::vector<double> estimate;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> variance;
};

/// f(x) = b(x)^T beta with variance b(x)^T Cov b(x), band f +- z_{0.975} sd.
/// With a single covariate b(x) is the full basis row (the smooth carries the
/// level); otherwise it is the smooth's constrained partial effect.
/// A nonempty `centre` row is subtracted from every b(x), giving the band of
/// the contrast f(x) - centre^T beta.
inline FunctionBand wald_band(const ModelDesign& design, std::size_t smooth,
                              const Eigen::VectorXd& beta, const Eigen::MatrixXd& covariance,
                              const std::vector<double>& grid,
                              const Eigen::RowVectorXd& centre = {}) {
  if (beta.size() != design.dim() || covariance.rows() != design.dim() ||
      covariance.cols() != design.dim()) {
    throw ContractError("band: beta/covariance dimension mismatch");
  }
  FunctionBand band;
  band.grid = grid;
  for (double x : grid) {
    Eigen::RowVectorXd b = design.smooth_row(smooth, x);
    if (centre.size() == b.size()) b -= centre;
    const double est = b.dot(beta);
    const double v = std::max(0.0, (b * covariance * b.transpose())(0, 0));
    const double half = kNormalQuantile975 * std::sqrt(v);
    band.estimate.push_back(est);
    band.variance.push_back(v);
    band.lower.push_back(est - half);
    band.upper.push_back(est + half);
  }
  return band;
}

/// Mean of the smooth's design rows over the observed covariate values.
inline Eigen::RowVectorXd smooth_centre(const ModelDesign& design, std::size_t smooth,
                                        std::span<const double> values) {
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(design.dim());
  for (double x : values) c += design.smooth_row(smooth, x);
  return values.empty() ? c : (c / static_cast<double>(values.size())).eval();
}

inline std::vector<double> uniform_grid(double lo, double hi, int points) {
  if (points < 1) throw ConfigError("grid needs at least one point");
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    g[static_cast<std::size_t>(i)] =
        points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / static_cast<double>(points - 1);
  }
  return g;
}

}  // namespace pmlgamm
