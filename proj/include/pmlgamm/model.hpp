#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmlgamm/dataset.hpp"
#include "pmlgamm/errors.hpp"
#include "pmlgamm/family.hpp"
#include "pmlgamm/splines.hpp"

namespace pmlgamm {

/// How the "-log lambda" normalization of the penalty enters marginal
/// objectives over lambda: rank/2 * log(lambda) per smooth (the improper
/// Gaussian prior's row-space normalizer) or a unit coefficient.
enum class PenaltyLogDet { Rank, Unit };

inline PenaltyLogDet parse_penalty_logdet(const std::string& s) {
  if (s == "rank") return PenaltyLogDet::Rank;
  if (s == "unit") return PenaltyLogDet::Unit;
  throw ConfigError("penalty-logdet must be 'rank' or 'unit', got '" + s + "'");
}

struct Smooth {
  std::size_t covariate = 0;
  BasisRealization basis;
  Eigen::Index offset = 0;  // first coefficient in beta
  int penalty_rank = 0;
};

/// Additive predictor structure: an optional unpenalized intercept followed by
/// one coefficient block per smooth.
///
/// With a single covariate the smooth is left unconstrained and absorbs the
/// intercept. With several covariates each smooth is sum-to-zero constrained
/// and a global intercept column leads the design.
class ModelDesign {
 public:
  ModelDesign() = default;

  ModelDesign(const Dataset& data, const std::vector<SmoothSpec>& specs) {
    if (specs.empty()) throw ConfigError("at least one smooth is required");
    intercept_ = specs.size() > 1;
    Eigen::Index offset = intercept_ ? 1 : 0;
    for (const auto& spec : specs) {
      if (spec.covariate_index >= data.num_covariates()) {
        throw ConfigError("smooth refers to covariate " + std::to_string(spec.covariate_index + 1) +
                          " but the data have " + std::to_string(data.num_covariates()));
      }
      const auto values = data.covariate(spec.covariate_index);
      Smooth sm;
      sm.covariate = spec.covariate_index;
      sm.basis = build_basis(spec, values);
      if (intercept_) sm.basis = apply_constraint(std::move(sm.basis), values);
      sm.offset = offset;
      sm.penalty_rank = spec.num_basis - 2;
      offset += sm.basis.dim();
      smooths_.push_back(std::move(sm));
    }
    dim_ = offset;
  }

  /// One smooth per covariate with the given basis size and strategy.
  static std::vector<SmoothSpec> default_specs(const Dataset& data, int num_basis = 10,
                                               KnotStrategy strategy = KnotStrategy::Quantile) {
    std::vector<SmoothSpec> specs;
    for (std::size_t s = 0; s < data.num_covariates(); ++s) {
      specs.push_back(SmoothSpec{s, num_basis, strategy, std::nullopt});
    }
    return specs;
  }

  bool has_intercept() const { return intercept_; }
  Eigen::Index dim() const { return dim_; }
  const std::vector<Smooth>& smooths() const { return smooths_; }
  std::size_t num_smooths() const { return smooths_.size(); }

  Eigen::RowVectorXd row(std::span<const double> x) const {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(dim_);
    if (intercept_) r(0) = 1.0;
    for (const auto& sm : smooths_) {
      r.segment(sm.offset, sm.basis.dim()) = design_row(sm.basis, x[sm.covariate]);
    }
    return r;
  }

  /// Row of smooth s alone, embedded in the full coefficient vector.
  Eigen::RowVectorXd smooth_row(std::size_t s, double x) const {
    const auto& sm = smooths_.at(s);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(dim_);
    r.segment(sm.offset, sm.basis.dim()) = design_row(sm.basis, x);
    return r;
  }

  /// S_lambda = blockdiag(lambda_s S_s), zero on the intercept.
  Eigen::MatrixXd penalty(const Eigen::VectorXd& lambda) const {
    if (lambda.size() != static_cast<Eigen::Index>(smooths_.size())) {
      throw ContractError("lambda has wrong length");
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(dim_, dim_);
    for (std::size_t s = 0; s < smooths_.size(); ++s) {
      const auto& sm = smooths_[s];
      const auto k = sm.basis.dim();
      S.block(sm.offset, sm.offset, k, k) = lambda(static_cast<Eigen::Index>(s)) *
                                            sm.basis.reduced_penalty();
    }
    return S;
  }

  /// The lambda-dependent normalizer of the penalty, -sum_s c_s log(lambda_s).
  double penalty_normalizer(const Eigen::VectorXd& log_lambda, PenaltyLogDet mode) const {
    double out = 0.0;
    for (std::size_t s = 0; s < smooths_.size(); ++s) {
      const double c = mode == PenaltyLogDet::Rank ? 0.5 * smooths_[s].penalty_rank : 1.0;
      out -= c * log_lambda(static_cast<Eigen::Index>(s));
    }
    return out;
  }

 private:
  bool intercept_ = false;
  Eigen::Index dim_ = 0;
  std::vector<Smooth> smooths_;
};

struct GroupSlice {
  Eigen::Index start = 0;
  Eigen::Index size = 0;
};

/// Flattened response vector and design matrix, rows grouped contiguously.
struct ModelFrame {
  Family family = Family::Poisson;
  ModelDesign design;
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  std::vector<GroupSlice> groups;

  ModelFrame() = default;

  ModelFrame(const Dataset& data, Family fam, ModelDesign des)
      : family(fam), design(std::move(des)) {
    data.validate_responses(family);
    const auto n = static_cast<Eigen::Index>(data.num_rows());
    y.resize(n);
    X.resize(n, design.dim());
    Eigen::Index r = 0;
    for (const auto& g : data.groups()) {
      groups.push_back({r, static_cast<Eigen::Index>(g.rows.size())});
      for (const auto& row : g.rows) {
        y(r) = row.y;
        X.row(r) = design.row(row.x);
        ++r;
      }
    }
  }

  ModelFrame(const Dataset& data, Family fam, const std::vector<SmoothSpec>& specs)
      : ModelFrame(data, fam, ModelDesign(data, specs)) {}

  Eigen::Index num_groups() const { return static_cast<Eigen::Index>(groups.size()); }
  Eigen::Index num_rows() const { return y.size(); }
  Eigen::Index dim() const { return X.cols(); }
};

}  // namespace pmlgamm
