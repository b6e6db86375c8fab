#pragma once

// Mean surface mu(s, T): fully bivariate tensor-product fit, varying
// coefficient mu0(s) + beta_T(s) T, or constant in T.

#include "lfda/dataset.hpp"
#include "lfda/smoothing.hpp"

#include <Eigen/Dense>

#include <variant>
#include <vector>

namespace lfda {

enum class MeanKind { Bivariate, VaryingCoefficient, ConstantInT };

/// Coefficient curves stored on the data grid.
struct VaryingCoefficientMean {
  GridSpec grid;
  Eigen::VectorXd mu0;
  Eigen::VectorXd beta_t;
  double lambda_mu0 = 0.0;
  double lambda_beta = 0.0;
};

struct ConstantMean {
  GridSpec grid;
  Eigen::VectorXd mu0;
  double lambda = 0.0;
};

class MeanSurface {
 public:
  MeanSurface() = default;
  explicit MeanSurface(Penalized2DFit fit) : rep_(std::move(fit)) {}
  explicit MeanSurface(VaryingCoefficientMean vc);
  explicit MeanSurface(ConstantMean c);

  MeanKind kind() const { return static_cast<MeanKind>(rep_.index()); }

  /// Throws DomainError outside [0,1]^2.
  double operator()(double s, double t) const;
  /// mu(s_r, t) for every point of `grid`.
  Eigen::VectorXd curve(const GridSpec& grid, double t) const;
  /// Entry (a, b) = mu(ss(a), ts(b)).
  Eigen::MatrixXd evaluate_grid(const Eigen::VectorXd& ss, const Eigen::VectorXd& ts) const;

  const Penalized2DFit& bivariate() const { return std::get<Penalized2DFit>(rep_); }
  const VaryingCoefficientMean& varying_coefficient() const { return std::get<VaryingCoefficientMean>(rep_); }
  const ConstantMean& constant() const { return std::get<ConstantMean>(rep_); }

 private:
  std::variant<Penalized2DFit, VaryingCoefficientMean, ConstantMean> rep_;
};

inline double evaluate_mean(const MeanSurface& mean, double s, double t) { return mean(s, t); }

/// Adapter for demean().
MeanCurveFn mean_curve_fn(const MeanSurface& mean, const GridSpec& grid);

/// Pooled penalized tensor-product fit with unit weights over all observed
/// cells. Throws PreconditionError if nothing is observed.
MeanSurface fit_bivariate_mean(const LFDataset& data, int d_s = 10, int d_t = 5,
                               const std::vector<LambdaPair>& lambda_grid = default_lambda_pairs());

/// Pointwise least squares of Y(s_r) on (1, T) followed by GCV-smoothing of
/// each coefficient curve. Throws PreconditionError when some grid point has
/// fewer than two distinct observed visit times.
MeanSurface fit_varying_coefficient_mean(const LFDataset& data, int d_s = 10,
                                         const std::vector<double>& lambda_grid = default_lambda_grid());

/// Pooled univariate penalized fit in s, ignoring T.
MeanSurface fit_constant_mean(const LFDataset& data, int d_s = 10,
                              const std::vector<double>& lambda_grid = default_lambda_grid());

}  // namespace lfda
