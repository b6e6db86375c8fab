#include "lfda/splines.hpp"

#include "lfda/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>
#include <utility>

namespace lfda {

namespace {

// Golub-Welsch nodes and weights for an n-point Gauss-Legendre rule on [-1,1].
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  Eigen::VectorXd weights = 2.0 * eig.eigenvectors().row(0).transpose().array().square();
  return {eig.eigenvalues(), weights};
}

}  // namespace

BSplineBasis::BSplineBasis(int dim, int degree) : dim_(dim), degree_(degree) {
  if (degree < 0) throw PreconditionError("spline degree must be nonnegative");
  if (dim < degree + 1)
    throw PreconditionError("spline dimension " + std::to_string(dim) + " too small for degree " +
                            std::to_string(degree));
  const int interior = dim - degree - 1;
  knots_.resize(dim + degree + 1);
  for (int i = 0; i <= degree; ++i) {
    knots_(i) = 0.0;
    knots_(dim + i) = 1.0;
  }
  for (int i = 1; i <= interior; ++i) knots_(degree + i) = static_cast<double>(i) / (interior + 1);
}

int BSplineBasis::span(double x) const {
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("spline argument outside [0,1]: " + std::to_string(x));
  if (x >= 1.0) return dim_ - 1;
  int lo = degree_, hi = dim_;  // knots_(lo) <= x < knots_(hi)
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (x < knots_(mid))
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}

int BSplineBasis::first_active(double x) const { return span(x) - degree_; }

Eigen::VectorXd BSplineBasis::span_values(int i, double x, int p) const {
  Eigen::VectorXd N = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd left(p + 1), right(p + 1);
  N(0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left(j) = x - knots_(i + 1 - j);
    right(j) = knots_(i + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = N(r) / (right(r + 1) + left(j - r));
      N(r) = saved + right(r + 1) * temp;
      saved = left(j - r) * temp;
    }
    N(j) = saved;
  }
  return N;
}

Eigen::VectorXd BSplineBasis::eval(double x) const { return eval_derivative(x, 0); }

Eigen::VectorXd BSplineBasis::eval_derivative(double x, int order) const {
  const int i = span(x);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
  if (order > degree_) return out;
  const int p0 = degree_ - order;
  const int n_knots = static_cast<int>(knots_.size());

  // Degree p0 values embedded in a full-length vector, then raised to degree
  // `degree_` with the derivative recursion once per order.
  Eigen::VectorXd current = Eigen::VectorXd::Zero(n_knots - p0 - 1);
  current.segment(i - p0, p0 + 1) = span_values(i, x, p0);
  for (int q = p0 + 1; q <= degree_; ++q) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(n_knots - q - 1);
    for (int j = 0; j < next.size(); ++j) {
      const double d1 = knots_(j + q) - knots_(j);
      const double d2 = knots_(j + q + 1) - knots_(j + 1);
      double v = 0.0;
      if (d1 > 0.0) v += q * current(j) / d1;
      if (d2 > 0.0) v -= q * current(j + 1) / d2;
      next(j) = v;
    }
    current = std::move(next);
  }
  out = current;
  return out;
}

Eigen::MatrixXd BSplineBasis::design(const Eigen::VectorXd& xs) const {
  Eigen::MatrixXd X(xs.size(), dim_);
  for (Eigen::Index r = 0; r < xs.size(); ++r) X.row(r) = eval(xs(r)).transpose();
  return X;
}

Eigen::MatrixXd curvature_penalty(const BSplineBasis& basis) {
  if (basis.degree() < 2) throw PreconditionError("curvature penalty needs degree >= 2");
  const int n = basis.dim();
  const auto [nodes, weights] = gauss_legendre(basis.degree() + 1);
  const Eigen::VectorXd& knots = basis.knots();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 0; k + 1 < knots.size(); ++k) {
    const double a = knots(k), b = knots(k + 1);
    if (!(b > a)) continue;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (Eigen::Index g = 0; g < nodes.size(); ++g) {
      const Eigen::VectorXd d2 = basis.eval_derivative(mid + half * nodes(g), 2);
      P.noalias() += (half * weights(g)) * d2 * d2.transpose();
    }
  }
  return 0.5 * (P + P.transpose());
}

Eigen::VectorXd tensor_row(const BSplineBasis& basis_s, const BSplineBasis& basis_t, double s, double t) {
  const Eigen::VectorXd bs = basis_s.eval(s);
  const Eigen::VectorXd bt = basis_t.eval(t);
  Eigen::VectorXd row(bs.size() * bt.size());
  for (Eigen::Index q1 = 0; q1 < bs.size(); ++q1) row.segment(q1 * bt.size(), bt.size()) = bs(q1) * bt;
  return row;
}

}  // namespace lfda
