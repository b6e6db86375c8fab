#pragma once

// Time-varying scores xi_ik(T): projection of demeaned curves on the marginal
// eigenfunctions, then per-component modelling of each score process, either
// by sparse FPCA with conditional-expectation scores or by a random
// intercept-and-slope model.

#include "lfda/dataset.hpp"
#include "lfda/marginal_fpca.hpp"
#include "lfda/smoothing.hpp"

#include <Eigen/Dense>

#include <map>
#include <string>
#include <variant>
#include <vector>

namespace lfda {

struct SubjectScores {
  std::string id;
  Eigen::VectorXd t;
  Eigen::VectorXd xi;
};

/// Projected scores of one eigenfunction, grouped by subject.
struct ScoreRecords {
  int k = 0;
  std::vector<SubjectScores> subjects;
};

/// Quadrature projections of each visit on phi_1..phi_K. Masked cells are
/// dropped and the remaining weights rescaled to the full interval length.
std::vector<ScoreRecords> project_scores(const LFDataset& demeaned, const EigenBasis& basis);

struct LongitudinalOptions {
  double pve = 0.95;
  int dim = 10;
  double trim = 0.0;
  GridSpec time_grid = GridSpec::equispaced(41);
  std::vector<double> lambda_grid = default_lambda_grid();
};

struct LongitudinalComponent {
  int k = 0;
  CovarianceSmooth G;         // smooth of the off-diagonal raw products
  GridSpec time_grid;
  Eigen::MatrixXd G_psd;      // on the time grid, negative eigenvalues removed
  Eigen::MatrixXd psi;        // time-grid points x L
  Eigen::VectorXd eta;        // L eigenvalues, nonincreasing
  int L = 0;
  double pve_achieved = 0.0;
  double sigma2_e = 0.0;
  std::map<std::string, Eigen::VectorXd> blup;  // subject -> zeta_hat (length L)

  /// psi_l(t) for all l, linearly interpolated on the time grid.
  Eigen::VectorXd psi_at(double t) const;
  /// m x L matrix of psi_l(t_j).
  Eigen::MatrixXd psi_at(const Eigen::VectorXd& ts) const;
  /// sum_l zeta_hat_il psi_l(t); throws PreconditionError for an unknown
  /// subject and DomainError for t outside [0,1].
  double predict(const std::string& subject_id, double t) const;
};

/// Sparse FPCA of one score process. Throws PreconditionError unless at least
/// two subjects have two or more visits at distinct times.
LongitudinalComponent fit_nonparametric(const ScoreRecords& scores, const LongitudinalOptions& options = {});

/// Conditional mean of zeta given xi ~ N(0, Psi diag(eta) Psi' + sigma2 I).
/// Throws NumericalError if the covariance stays singular after jitter.
Eigen::VectorXd blup_zeta(const Eigen::MatrixXd& psi, const Eigen::VectorXd& eta, double sigma2,
                          const Eigen::VectorXd& xi);

/// Fills component.blup for every subject in `scores`.
void blup_scores(LongitudinalComponent& component, const ScoreRecords& scores);

struct REMComponent {
  int k = 0;
  Eigen::Matrix2d sigma_b = Eigen::Matrix2d::Zero();  // cov of (b0, b1)
  double sigma2_e = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::map<std::string, Eigen::Vector2d> blup;

  double predict(const std::string& subject_id, double t) const;
};

/// E[b | y] for y = Z b + e, Z = [1, t], b ~ N(0, sigma_b), e ~ N(0, sigma2 I).
Eigen::Vector2d rem_blup(const Eigen::VectorXd& t, const Eigen::Matrix2d& sigma_b, double sigma2,
                         const Eigen::VectorXd& y);

/// Maximum-likelihood fit of xi_ik(T) = b0 + b1 T + e by Nelder-Mead over the
/// Cholesky factor of sigma_b and log sigma2_e, then BLUPs. Throws
/// PreconditionError for fewer than 3 subjects or no subject with 3 visits,
/// NumericalError if the optimizer does not converge.
REMComponent fit_rem(const ScoreRecords& scores, int max_iterations = 20000);

using ComponentModel = std::variant<LongitudinalComponent, REMComponent>;

double predict_xi(const ComponentModel& component, const std::string& subject_id, double t);

}  // namespace lfda
