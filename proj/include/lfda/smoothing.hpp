#pragma once

// Penalized least-squares smoothers on B-spline bases with GCV selection of the
// smoothing parameters.
//
// All fits minimize
//
//   sum_i w_i (y_i - B(x_i)' beta)^2  +  beta' (lambda1 S1 + lambda2 S2) beta
//
// where S1 = P1 (x) I and S2 = I (x) P2 are the curvature penalties in each
// direction.

#include "lfda/splines.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace lfda {

namespace detail {
class RotatedSystem;
}

struct Observation2D {
  double x1 = 0.0;
  double x2 = 0.0;
  double value = 0.0;
  double weight = 1.0;
};

struct LambdaPair {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

/// 11 log-spaced values in [1e-6, 1e3].
std::vector<double> default_lambda_grid();
/// Cartesian product of default_lambda_grid() with itself.
std::vector<LambdaPair> default_lambda_pairs();

/// Tensor-product spline surface f(x1, x2) = B1(x1)' C B2(x2).
class SmoothedSurface {
 public:
  SmoothedSurface() = default;
  SmoothedSurface(BSplineBasis basis1, BSplineBasis basis2, Eigen::MatrixXd coef, bool symmetrize = false);

  double operator()(double x1, double x2) const;
  /// Matrix with entry (a, b) = f(xs1(a), xs2(b)).
  Eigen::MatrixXd evaluate_grid(const Eigen::VectorXd& xs1, const Eigen::VectorXd& xs2) const;

  const BSplineBasis& basis1() const { return basis1_; }
  const BSplineBasis& basis2() const { return basis2_; }
  /// d1 x d2 coefficients; coef(q1, q2) multiplies B1_q1 B2_q2.
  const Eigen::MatrixXd& coef() const { return coef_; }
  bool symmetrized() const { return symmetrize_; }

 private:
  BSplineBasis basis1_;
  BSplineBasis basis2_;
  Eigen::MatrixXd coef_;
  bool symmetrize_ = false;
};

struct Penalized2DFit {
  BSplineBasis basis1;
  BSplineBasis basis2;
  Eigen::VectorXd coeffs;  // Kronecker order: q1 * d2 + q2
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double gcv = 0.0;
  double edf = 0.0;
  double rss = 0.0;  // weighted residual sum of squares
  std::size_t n_obs = 0;

  SmoothedSurface surface(bool symmetrize = false) const;
};

/// Normal equations of a tensor-product design, accumulated once and reused
/// across smoothing parameters.
class PenalizedSystem2D {
 public:
  PenalizedSystem2D(const std::vector<Observation2D>& obs, int d1, int d2);

  Penalized2DFit solve(double lambda1, double lambda2) const;

  /// Half the negative gradient of the criterion at beta,
  /// X'W(y - X beta) - (lambda1 S1 + lambda2 S2) beta.
  Eigen::VectorXd stationarity_residual(const Penalized2DFit& fit) const;
  const Eigen::VectorXd& xtwy() const { return xtwy_; }
  /// Weighted mean of y^2; the scale used for near-tie detection in GCV.
  double mean_square() const { return ywy_ / weight_sum_; }

 private:
  BSplineBasis basis1_;
  BSplineBasis basis2_;
  Eigen::MatrixXd xtwx_;
  Eigen::VectorXd xtwy_;
  Eigen::MatrixXd s1_;
  Eigen::MatrixXd s2_;
  double ywy_ = 0.0;
  double weight_sum_ = 0.0;
  std::size_t n_obs_ = 0;
  std::shared_ptr<const detail::RotatedSystem> rotated_;
};

/// Throws PreconditionError if all weights are zero or any weight is negative,
/// NumericalError for non-finite data or an unsolvable system.
Penalized2DFit fit_penalized_2d(const std::vector<Observation2D>& obs, int d1, int d2, double lambda1,
                                double lambda2);

/// Minimizes GCV = n RSS / (n - edf)^2 over the grid; near-ties go to the
/// larger lambda1 + lambda2.
Penalized2DFit gcv_select(const std::vector<Observation2D>& obs, int d1, int d2,
                          const std::vector<LambdaPair>& lambda_grid);

struct CovarianceSmooth {
  SmoothedSurface surface;  // symmetrized
  double lambda = 0.0;
  double gcv = 0.0;
  double edf = 0.0;
};

/// Smooth off-diagonal covariance triples with a single smoothing parameter
/// shared by both directions. The fit uses the triples and their transposes.
/// Throws PreconditionError if any triple lies on the diagonal.
CovarianceSmooth smooth_covariance_surface(const std::vector<Observation2D>& triples, int dim,
                                           const std::vector<double>& lambda_grid = default_lambda_grid());

/// Univariate penalized spline fit.
struct PenalizedCurveFit {
  BSplineBasis basis;
  Eigen::VectorXd coeffs;
  double lambda = 0.0;
  double gcv = 0.0;
  double edf = 0.0;
  double rss = 0.0;

  double operator()(double x) const { return basis.eval(x).dot(coeffs); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& xs) const;
};

PenalizedCurveFit fit_penalized_1d(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                   int dim, double lambda);

PenalizedCurveFit gcv_select_1d(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, int dim,
                                const std::vector<double>& lambda_grid = default_lambda_grid());

}  // namespace lfda
