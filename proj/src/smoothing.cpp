#include "lfda/smoothing.hpp"

#include "lfda/error.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <unordered_map>

namespace lfda {

namespace {

struct LocalBasis {
  int first = 0;
  Eigen::VectorXd values;  // degree + 1 entries starting at `first`
};

// Basis values are cached per distinct abscissa; data on grids repeat them.
class BasisCache {
 public:
  explicit BasisCache(const BSplineBasis& basis) : basis_(basis) {}

  const LocalBasis& operator()(double x) {
    auto it = cache_.find(x);
    if (it != cache_.end()) return it->second;
    LocalBasis lb;
    lb.first = basis_.first_active(x);
    lb.values = basis_.eval(x).segment(lb.first, basis_.degree() + 1);
    return cache_.emplace(x, std::move(lb)).first->second;
  }

 private:
  const BSplineBasis& basis_;
  std::unordered_map<double, LocalBasis> cache_;
};

struct Cell {
  double weight = 0.0;
  double weighted_value = 0.0;
  double weighted_square = 0.0;
};

struct PairHash {
  std::size_t operator()(const std::pair<double, double>& p) const {
    std::uint64_t a, b;
    std::memcpy(&a, &p.first, sizeof a);
    std::memcpy(&b, &p.second, sizeof b);
    return std::hash<std::uint64_t>{}(a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL));
  }
};

struct Solution {
  Eigen::VectorXd beta;
  double rss = 0.0;
  double edf = 0.0;
  double gcv = 0.0;
};

// Whether candidate GCV `g` replaces the incumbent `best`, preferring the
// smoother fit among near-ties.
bool better(double g, double sum, double best, double best_sum, double scale) {
  const double tol = 1e-8 * std::abs(best) + 1e-12 * scale;
  if (g < best - tol) return true;
  return std::abs(g - best) <= tol && sum > best_sum;
}

void validate(double value, double weight) {
  if (!std::isfinite(value) || !std::isfinite(weight)) throw NumericalError("non-finite observation");
  if (weight < 0.0) throw PreconditionError("negative observation weight");
}

}  // namespace

namespace detail {

// Normal equations rotated into the eigenbasis of the penalties. For tensor
// products, P1 (x) I and I (x) P2 are diagonalized together by U1 (x) U2, so
// any (lambda1, lambda2) gives a diagonal penalty in the rotated coordinates.
// Null-space eigenvalues are set to exactly zero so that null-space functions
// are reproduced regardless of lambda.
class RotatedSystem {
 public:
  RotatedSystem(const Eigen::MatrixXd& xtwx, const Eigen::VectorXd& xtwy, double ywy, double weight_sum,
                std::size_t n_obs, const Eigen::MatrixXd& P1, const Eigen::MatrixXd& P2)
      : xtwx_(xtwx), xtwy_(xtwy), ywy_(ywy), weight_sum_(weight_sum), n_obs_(n_obs) {
    const auto [U1, e1] = penalty_eigen(P1);
    const auto [U2, e2] = penalty_eigen(P2);
    const Eigen::Index d1 = e1.size(), d2 = e2.size();
    rotation_ = Eigen::kroneckerProduct(U1, U2);
    pen1_.resize(d1 * d2);
    pen2_.resize(d1 * d2);
    for (Eigen::Index i = 0; i < d1; ++i)
      for (Eigen::Index j = 0; j < d2; ++j) {
        pen1_(i * d2 + j) = e1(i);
        pen2_(i * d2 + j) = e2(j);
      }
    gram_ = rotation_.transpose() * xtwx * rotation_;
    gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
    rhs_ = rotation_.transpose() * xtwy;
  }

  // Solves (X'WX / W + lambda1 S1 + lambda2 S2) beta = X'Wy / W with a
  // symmetric diagonal scaling before the Cholesky factorization.
  Solution solve(double lambda1, double lambda2) const {
    const Eigen::Index p = gram_.rows();
    Eigen::MatrixXd A = gram_;
    A.diagonal() += lambda1 * pen1_ + lambda2 * pen2_;
    Eigen::VectorXd scale(p);
    for (Eigen::Index i = 0; i < p; ++i) scale(i) = A(i, i) > 0.0 ? 1.0 / std::sqrt(A(i, i)) : 1.0;
    A = scale.asDiagonal() * A * scale.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
      A.diagonal().array() += 1e-10 * A.trace() / static_cast<double>(p);
      llt.compute(A);
      if (llt.info() != Eigen::Success) throw NumericalError("penalized normal equations are singular");
    }
    const Eigen::VectorXd gamma = scale.asDiagonal() * llt.solve(scale.asDiagonal() * rhs_);
    Solution sol;
    sol.beta = rotation_ * gamma;
    if (!sol.beta.allFinite()) throw NumericalError("penalized fit produced non-finite coefficients");
    const Eigen::MatrixXd scaled_gram = scale.asDiagonal() * gram_ * scale.asDiagonal();
    sol.edf = llt.solve(scaled_gram).trace();
    sol.rss = std::max(0.0, ywy_ - 2.0 * sol.beta.dot(xtwy_) + sol.beta.dot(xtwx_ * sol.beta));
    const double n = static_cast<double>(n_obs_);
    sol.gcv = n > sol.edf ? n * sol.rss / ((n - sol.edf) * (n - sol.edf)) : std::numeric_limits<double>::infinity();
    return sol;
  }

  double mean_square() const { return ywy_ / weight_sum_; }

 private:
  static std::pair<Eigen::MatrixXd, Eigen::VectorXd> penalty_eigen(const Eigen::MatrixXd& P) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P);
    Eigen::VectorXd e = eig.eigenvalues();
    const double cutoff = 1e-9 * std::max(e.cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < e.size(); ++i)
      if (e(i) < cutoff) e(i) = 0.0;
    return {eig.eigenvectors(), e};
  }

  Eigen::MatrixXd xtwx_;
  Eigen::VectorXd xtwy_;
  double ywy_;
  double weight_sum_;
  std::size_t n_obs_;
  Eigen::MatrixXd rotation_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd rhs_;
  Eigen::VectorXd pen1_;
  Eigen::VectorXd pen2_;
};

}  // namespace detail

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(std::pow(10.0, -6.0 + 0.9 * i));
  return grid;
}

std::vector<LambdaPair> default_lambda_pairs() {
  std::vector<LambdaPair> pairs;
  for (double a : default_lambda_grid())
    for (double b : default_lambda_grid()) pairs.push_back({a, b});
  return pairs;
}

SmoothedSurface::SmoothedSurface(BSplineBasis basis1, BSplineBasis basis2, Eigen::MatrixXd coef, bool symmetrize)
    : basis1_(std::move(basis1)), basis2_(std::move(basis2)), coef_(std::move(coef)), symmetrize_(symmetrize) {
  if (coef_.rows() != basis1_.dim() || coef_.cols() != basis2_.dim())
    throw PreconditionError("surface coefficients do not match the bases");
  if (symmetrize_ && !(basis1_ == basis2_)) throw PreconditionError("symmetrized surface needs identical bases");
}

double SmoothedSurface::operator()(double x1, double x2) const {
  const double f = basis1_.eval(x1).dot(coef_ * basis2_.eval(x2));
  if (!symmetrize_) return f;
  return 0.5 * (f + basis1_.eval(x2).dot(coef_ * basis2_.eval(x1)));
}

Eigen::MatrixXd SmoothedSurface::evaluate_grid(const Eigen::VectorXd& xs1, const Eigen::VectorXd& xs2) const {
  const Eigen::MatrixXd F = basis1_.design(xs1) * coef_ * basis2_.design(xs2).transpose();
  if (!symmetrize_) return F;
  const Eigen::MatrixXd Ft = basis1_.design(xs2) * coef_ * basis2_.design(xs1).transpose();
  return 0.5 * (F + Ft.transpose());
}

SmoothedSurface Penalized2DFit::surface(bool symmetrize) const {
  Eigen::MatrixXd C = Eigen::Map<const Eigen::MatrixXd>(coeffs.data(), basis2.dim(), basis1.dim()).transpose();
  return SmoothedSurface(basis1, basis2, std::move(C), symmetrize);
}

PenalizedSystem2D::PenalizedSystem2D(const std::vector<Observation2D>& obs, int d1, int d2)
    : basis1_(d1), basis2_(d2) {
  std::unordered_map<std::pair<double, double>, Cell, PairHash> cells;
  for (const auto& o : obs) {
    validate(o.value, o.weight);
    if (o.weight == 0.0) continue;
    Cell& c = cells[{o.x1, o.x2}];
    c.weight += o.weight;
    c.weighted_value += o.weight * o.value;
    c.weighted_square += o.weight * o.value * o.value;
    weight_sum_ += o.weight;
    ++n_obs_;
  }
  if (n_obs_ == 0) throw PreconditionError("all observation weights are zero");

  const int p = d1 * d2;
  xtwx_ = Eigen::MatrixXd::Zero(p, p);
  xtwy_ = Eigen::VectorXd::Zero(p);
  BasisCache cache1(basis1_), cache2(basis2_);
  const int k1 = basis1_.degree() + 1, k2 = basis2_.degree() + 1;
  Eigen::VectorXi idx(k1 * k2);
  Eigen::VectorXd val(k1 * k2);
  for (const auto& [x, c] : cells) {
    const LocalBasis& b1 = cache1(x.first);
    const LocalBasis& b2 = cache2(x.second);
    for (int a = 0; a < k1; ++a)
      for (int b = 0; b < k2; ++b) {
        idx(a * k2 + b) = (b1.first + a) * d2 + (b2.first + b);
        val(a * k2 + b) = b1.values(a) * b2.values(b);
      }
    for (int u = 0; u < idx.size(); ++u) {
      xtwy_(idx(u)) += val(u) * c.weighted_value;
      const double wu = c.weight * val(u);
      for (int v = 0; v < idx.size(); ++v) xtwx_(idx(u), idx(v)) += wu * val(v);
    }
    ywy_ += c.weighted_square;
  }

  const Eigen::MatrixXd P1 = curvature_penalty(basis1_);
  const Eigen::MatrixXd P2 = curvature_penalty(basis2_);
  s1_ = Eigen::kroneckerProduct(P1, Eigen::MatrixXd::Identity(d2, d2));
  s2_ = Eigen::kroneckerProduct(Eigen::MatrixXd::Identity(d1, d1), P2);
  rotated_ = std::make_shared<const detail::RotatedSystem>(xtwx_, xtwy_, ywy_, weight_sum_, n_obs_, P1, P2);
}

Penalized2DFit PenalizedSystem2D::solve(double lambda1, double lambda2) const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw PreconditionError("smoothing parameters must be nonnegative");
  const Solution sol = rotated_->solve(lambda1, lambda2);
  Penalized2DFit fit;
  fit.basis1 = basis1_;
  fit.basis2 = basis2_;
  fit.coeffs = sol.beta;
  fit.lambda1 = lambda1;
  fit.lambda2 = lambda2;
  fit.gcv = sol.gcv;
  fit.edf = sol.edf;
  fit.rss = sol.rss;
  fit.n_obs = n_obs_;
  return fit;
}

Eigen::VectorXd PenalizedSystem2D::stationarity_residual(const Penalized2DFit& fit) const {
  return xtwy_ - xtwx_ * fit.coeffs - (fit.lambda1 * s1_ + fit.lambda2 * s2_) * fit.coeffs;
}

Penalized2DFit fit_penalized_2d(const std::vector<Observation2D>& obs, int d1, int d2, double lambda1,
                                double lambda2) {
  return PenalizedSystem2D(obs, d1, d2).solve(lambda1, lambda2);
}

Penalized2DFit gcv_select(const std::vector<Observation2D>& obs, int d1, int d2,
                          const std::vector<LambdaPair>& lambda_grid) {
  if (lambda_grid.empty()) throw PreconditionError("empty smoothing-parameter grid");
  const PenalizedSystem2D system(obs, d1, d2);
  Penalized2DFit best;
  bool have = false;
  double scale = 0.0;
  for (const auto& [l1, l2] : lambda_grid) {
    Penalized2DFit fit = system.solve(l1, l2);
    if (!have) {
      scale = system.mean_square();
      best = std::move(fit);
      have = true;
      continue;
    }
    if (better(fit.gcv, l1 + l2, best.gcv, best.lambda1 + best.lambda2, scale)) best = std::move(fit);
  }
  return best;
}

CovarianceSmooth smooth_covariance_surface(const std::vector<Observation2D>& triples, int dim,
                                           const std::vector<double>& lambda_grid) {
  if (lambda_grid.empty()) throw PreconditionError("empty smoothing-parameter grid");
  std::vector<Observation2D> both;
  both.reserve(2 * triples.size());
  for (const auto& o : triples) {
    if (o.x1 == o.x2) throw PreconditionError("covariance triples must exclude the diagonal");
    both.push_back(o);
    both.push_back({o.x2, o.x1, o.value, o.weight});
  }
  const PenalizedSystem2D system(both, dim, dim);
  std::vector<LambdaPair> pairs;
  for (double l : lambda_grid) pairs.push_back({l, l});

  Penalized2DFit best;
  bool have = false;
  double scale = 0.0;
  for (const auto& [l1, l2] : pairs) {
    Penalized2DFit fit = system.solve(l1, l2);
    if (!have) {
      scale = system.mean_square();
      best = std::move(fit);
      have = true;
      continue;
    }
    if (better(fit.gcv, l1 + l2, best.gcv, best.lambda1 + best.lambda2, scale)) best = std::move(fit);
  }
  return {best.surface(true), best.lambda1, best.gcv, best.edf};
}

Eigen::VectorXd PenalizedCurveFit::evaluate(const Eigen::VectorXd& xs) const { return basis.design(xs) * coeffs; }

namespace {

struct System1D {
  BSplineBasis basis;
  Eigen::MatrixXd xtwx;
  Eigen::VectorXd xtwy;
  std::shared_ptr<const detail::RotatedSystem> rotated;
  double ywy = 0.0;
  double weight_sum = 0.0;
  std::size_t n_obs = 0;

  System1D(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, int dim) : basis(dim) {
    if (x.size() != y.size() || x.size() != w.size()) throw PreconditionError("x, y and w lengths differ");
    xtwx = Eigen::MatrixXd::Zero(dim, dim);
    xtwy = Eigen::VectorXd::Zero(dim);
    BasisCache cache(basis);
    const int k = basis.degree() + 1;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      validate(y(i), w(i));
      if (w(i) == 0.0) continue;
      const LocalBasis& b = cache(x(i));
      for (int a = 0; a < k; ++a) {
        xtwy(b.first + a) += w(i) * b.values(a) * y(i);
        for (int c = 0; c < k; ++c) xtwx(b.first + a, b.first + c) += w(i) * b.values(a) * b.values(c);
      }
      ywy += w(i) * y(i) * y(i);
      weight_sum += w(i);
      ++n_obs;
    }
    if (n_obs == 0) throw PreconditionError("all observation weights are zero");
    rotated = std::make_shared<const detail::RotatedSystem>(xtwx, xtwy, ywy, weight_sum, n_obs, curvature_penalty(basis),
                                                            Eigen::MatrixXd::Zero(1, 1));
  }

  PenalizedCurveFit solve(double lambda) const {
    if (!(lambda >= 0.0)) throw PreconditionError("smoothing parameter must be nonnegative");
    const Solution sol = rotated->solve(lambda, 0.0);
    return {basis, sol.beta, lambda, sol.gcv, sol.edf, sol.rss};
  }
};

}  // namespace

PenalizedCurveFit fit_penalized_1d(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                   int dim, double lambda) {
  return System1D(x, y, w, dim).solve(lambda);
}

PenalizedCurveFit gcv_select_1d(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, int dim,
                                const std::vector<double>& lambda_grid) {
  if (lambda_grid.empty()) throw PreconditionError("empty smoothing-parameter grid");
  const System1D system(x, y, w, dim);
  const double scale = system.ywy / system.weight_sum;
  PenalizedCurveFit best = system.solve(lambda_grid.front());
  for (std::size_t i = 1; i < lambda_grid.size(); ++i) {
    PenalizedCurveFit fit = system.solve(lambda_grid[i]);
    if (better(fit.gcv, fit.lambda, best.gcv, best.lambda, scale)) best = std::move(fit);
  }
  return best;
}

}  // namespace lfda
