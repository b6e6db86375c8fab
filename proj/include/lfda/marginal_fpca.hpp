#pragma once

// Marginal covariance of the demeaned curves pooled over visits, its smoothed
// eigendecomposition and the white-noise variance.

#include "lfda/dataset.hpp"
#include "lfda/smoothing.hpp"

#include <Eigen/Dense>

#include <vector>

namespace lfda {

struct RawMarginalCovariance {
  Eigen::MatrixXd matrix;  // average cross-product; 0 where counts == 0
  Eigen::MatrixXd counts;  // number of visits with both cells observed
};

/// Entry (r, r') averages Y_ij(s_r) Y_ij(s_r') over visits observing both cells.
RawMarginalCovariance pooled_raw_covariance(const LFDataset& demeaned);

struct MarginalCovariance {
  CovarianceSmooth smooth;     // fit to the off-diagonal raw entries
  Eigen::MatrixXd smoothed;    // smooth evaluated on the grid
  Eigen::MatrixXd psd;         // smoothed with negative eigenvalues zeroed
  Eigen::VectorXd eigenvalues;  // of the weighted operator, descending, clamped at 0
};

/// Smooths off-diagonal raw entries (weights proportional to their counts),
/// evaluates on the grid and removes negative eigenvalues of the quadrature
/// weighted operator.
MarginalCovariance smooth_and_truncate(const RawMarginalCovariance& raw, const GridSpec& grid, int dim = 10,
                                       const std::vector<double>& lambda_grid = default_lambda_grid());

struct EigenBasis {
  GridSpec grid;
  Eigen::MatrixXd phi;     // R x K, column k is phi_k on the grid
  Eigen::VectorXd lambda;  // K eigenvalues, nonincreasing
  int K = 0;
  double pve_achieved = 0.0;
  double total_variance = 0.0;  // sum of all positive eigenvalues

  /// Quadrature inner products with each phi_k.
  Eigen::VectorXd project(const Eigen::VectorXd& f) const { return phi.transpose() * grid.weights().cwiseProduct(f); }
};

/// Smallest K whose cumulative eigenvalue fraction exceeds pve. Eigenvalues
/// must be sorted descending and nonnegative.
int select_by_pve(const Eigen::VectorXd& eigenvalues, double pve);

/// phi_k >= 0 in integral, or positive at its largest-magnitude point when the
/// integral vanishes.
void apply_sign_convention(Eigen::Ref<Eigen::VectorXd> f, const Eigen::VectorXd& weights);

/// Eigenfunctions of a covariance sampled on the grid, L2-orthonormal under the
/// grid quadrature. Throws PreconditionError("no variance") if there is no
/// positive eigenvalue.
EigenBasis eigenbasis(const Eigen::MatrixXd& covariance, const GridSpec& grid, double pve);

/// max(0, mean_r [raw(r, r) - smoothed(r, r)]) over grid points with observed
/// diagonal, dropping a fraction `trim` of the grid at each end.
double estimate_white_noise(const RawMarginalCovariance& raw, const Eigen::MatrixXd& smoothed, double trim = 0.0);

struct MarginalOptions {
  double pve = 0.95;
  int dim = 10;
  double trim = 0.0;
  std::vector<double> lambda_grid = default_lambda_grid();
};

struct MarginalFPCA {
  RawMarginalCovariance raw;
  MarginalCovariance covariance;
  EigenBasis basis;
  double sigma2 = 0.0;
};

MarginalFPCA fit_marginal_fpca(const LFDataset& demeaned, const MarginalOptions& options = {});

}  // namespace lfda
