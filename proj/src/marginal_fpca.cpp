#include "lfda/marginal_fpca.hpp"

#include "lfda/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace lfda {

namespace {

struct WeightedEigen {
  Eigen::VectorXd values;  // descending
  Eigen::MatrixXd vectors;  // orthonormal eigenvectors of W^1/2 C W^1/2
};

WeightedEigen weighted_eigen(const Eigen::MatrixXd& covariance, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd sw = weights.cwiseSqrt();
  Eigen::MatrixXd A = sw.asDiagonal() * covariance * sw.asDiagonal();
  A = 0.5 * (A + A.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
  // Eigen returns ascending order.
  return {eig.eigenvalues().reverse(), eig.eigenvectors().rowwise().reverse()};
}

}  // namespace

RawMarginalCovariance pooled_raw_covariance(const LFDataset& demeaned) {
  const Eigen::Index R = demeaned.grid().size();
  const auto n = static_cast<Eigen::Index>(demeaned.total_visits());
  Eigen::MatrixXd Y(n, R), M(n, R);
  Eigen::Index row = 0;
  for (const auto& subject : demeaned.subjects())
    for (const auto& v : subject.visits) {
      M.row(row) = v.mask.cast<double>().transpose();
      Y.row(row) = v.mask.select(v.values, 0.0).transpose();
      ++row;
    }
  RawMarginalCovariance raw;
  raw.counts = M.transpose() * M;
  const Eigen::MatrixXd sums = Y.transpose() * Y;
  raw.matrix = (raw.counts.array() > 0).select(sums.array() / raw.counts.array().max(1.0), 0.0);
  return raw;
}

MarginalCovariance smooth_and_truncate(const RawMarginalCovariance& raw, const GridSpec& grid, int dim,
                                       const std::vector<double>& lambda_grid) {
  const Eigen::Index R = grid.size();
  if (raw.matrix.rows() != R || raw.matrix.cols() != R) throw PreconditionError("raw covariance does not match grid");
  const Eigen::VectorXd& s = grid.points();
  double count_sum = 0.0;
  int cells = 0;
  for (Eigen::Index a = 0; a < R; ++a)
    for (Eigen::Index b = a + 1; b < R; ++b)
      if (raw.counts(a, b) > 0) {
        count_sum += raw.counts(a, b);
        ++cells;
      }
  if (cells == 0) throw PreconditionError("no off-diagonal covariance entries are observed");
  const double mean_count = count_sum / cells;
  std::vector<Observation2D> triples;
  triples.reserve(cells);
  for (Eigen::Index a = 0; a < R; ++a)
    for (Eigen::Index b = a + 1; b < R; ++b)
      if (raw.counts(a, b) > 0) triples.push_back({s(a), s(b), raw.matrix(a, b), raw.counts(a, b) / mean_count});

  MarginalCovariance out;
  out.smooth = smooth_covariance_surface(triples, dim, lambda_grid);
  out.smoothed = out.smooth.surface.evaluate_grid(s, s);
  WeightedEigen eig = weighted_eigen(out.smoothed, grid.weights());
  out.eigenvalues = eig.values.cwiseMax(0.0);
  const Eigen::VectorXd isw = grid.weights().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd V = isw.asDiagonal() * eig.vectors;
  out.psd = V * out.eigenvalues.asDiagonal() * V.transpose();
  out.psd = 0.5 * (out.psd + out.psd.transpose()).eval();
  return out;
}

int select_by_pve(const Eigen::VectorXd& eigenvalues, double pve) {
  if (!(pve > 0.0 && pve <= 1.0)) throw PreconditionError("pve must lie in (0, 1]");
  const double total = eigenvalues.sum();
  if (!(total > 0.0)) throw PreconditionError("no variance");
  double cumulative = 0.0;
  int positive = 0;
  for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
    if (eigenvalues(k) <= 0.0) break;
    ++positive;
    cumulative += eigenvalues(k);
    if (cumulative / total > pve) return static_cast<int>(k + 1);
  }
  return positive;
}

void apply_sign_convention(Eigen::Ref<Eigen::VectorXd> f, const Eigen::VectorXd& weights) {
  const double integral = weights.dot(f);
  if (std::abs(integral) >= 1e-8) {
    if (integral < 0.0) f = -f;
    return;
  }
  Eigen::Index at = 0;
  f.cwiseAbs().maxCoeff(&at);
  if (f(at) < 0.0) f = -f;
}

EigenBasis eigenbasis(const Eigen::MatrixXd& covariance, const GridSpec& grid, double pve) {
  const Eigen::Index R = grid.size();
  if (covariance.rows() != R || covariance.cols() != R) throw PreconditionError("covariance does not match grid");
  const WeightedEigen eig = weighted_eigen(covariance, grid.weights());
  const Eigen::VectorXd positive = eig.values.cwiseMax(0.0);
  EigenBasis basis;
  basis.grid = grid;
  basis.K = select_by_pve(positive, pve);
  basis.total_variance = positive.sum();
  basis.lambda = positive.head(basis.K);
  basis.pve_achieved = basis.lambda.sum() / basis.total_variance;
  basis.phi = grid.weights().cwiseSqrt().cwiseInverse().asDiagonal() * eig.vectors.leftCols(basis.K);
  for (int k = 0; k < basis.K; ++k) apply_sign_convention(basis.phi.col(k), grid.weights());
  return basis;
}

double estimate_white_noise(const RawMarginalCovariance& raw, const Eigen::MatrixXd& smoothed, double trim) {
  if (!(trim >= 0.0 && trim < 0.5)) throw PreconditionError("trim fraction must lie in [0, 0.5)");
  const Eigen::Index R = raw.matrix.rows();
  const auto drop = static_cast<Eigen::Index>(std::floor(trim * static_cast<double>(R)));
  double gap = 0.0;
  int used = 0;
  for (Eigen::Index r = drop; r < R - drop; ++r)
    if (raw.counts(r, r) > 0) {
      gap += raw.matrix(r, r) - smoothed(r, r);
      ++used;
    }
  if (used == 0) return 0.0;
  return std::max(0.0, gap / used);
}

MarginalFPCA fit_marginal_fpca(const LFDataset& demeaned, const MarginalOptions& options) {
  MarginalFPCA fit;
  fit.raw = pooled_raw_covariance(demeaned);
  fit.covariance = smooth_and_truncate(fit.raw, demeaned.grid(), options.dim, options.lambda_grid);
  fit.basis = eigenbasis(fit.covariance.psd, demeaned.grid(), options.pve);
  fit.sigma2 = estimate_white_noise(fit.raw, fit.covariance.smoothed, options.trim);
  return fit;
}

}  // namespace lfda
