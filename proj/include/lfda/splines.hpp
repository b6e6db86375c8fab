#pragma once

#include <Eigen/Dense>

namespace lfda {

/// Clamped B-spline basis on [0,1] with equispaced interior knots.
///
/// The knot vector repeats 0 and 1 (degree + 1) times, so the first basis
/// function equals 1 at x = 0 and the last equals 1 at x = 1. The number of
/// interior knots is dim - degree - 1.
class BSplineBasis {
 public:
  BSplineBasis() = default;
  BSplineBasis(int dim, int degree = 3);

  int dim() const { return dim_; }
  int degree() const { return degree_; }
  const Eigen::VectorXd& knots() const { return knots_; }

  /// All dim basis values at x; at most degree + 1 are nonzero.
  /// Throws DomainError if x is outside [0,1].
  Eigen::VectorXd eval(double x) const;

  /// Derivative of the given order of every basis function at x.
  Eigen::VectorXd eval_derivative(double x, int order) const;

  /// Rows are basis evaluations at each point.
  Eigen::MatrixXd design(const Eigen::VectorXd& xs) const;

  /// Index of the first possibly-nonzero basis function at x; the nonzero
  /// block has length degree + 1.
  int first_active(double x) const;

  bool operator==(const BSplineBasis& other) const { return dim_ == other.dim_ && degree_ == other.degree_; }

 private:
  int span(double x) const;
  // Values of the degree-p functions on the active span, length p + 1.
  Eigen::VectorXd span_values(int span, double x, int p) const;

  int dim_ = 0;
  int degree_ = 3;
  Eigen::VectorXd knots_;
};

/// Curvature penalty P with P(q, q') = integral of B_q'' B_q'' over [0,1],
/// integrated exactly with Gauss-Legendre rules on each knot span.
/// Throws PreconditionError for degree < 2.
Eigen::MatrixXd curvature_penalty(const BSplineBasis& basis);

/// Kronecker-ordered tensor row: entry q1 * dim_t + q2 = B_{s,q1}(s) B_{t,q2}(t).
Eigen::VectorXd tensor_row(const BSplineBasis& basis_s, const BSplineBasis& basis_t, double s, double t);

}  // namespace lfda
