#pragma once

// The fitted model as a whole: mean, marginal eigenbasis, per-component score
// models, and trajectory prediction Y_i(s, T) for any time T.

#include "lfda/dataset.hpp"
#include "lfda/longitudinal_fpca.hpp"
#include "lfda/marginal_fpca.hpp"
#include "lfda/mean_model.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace lfda {

enum class LongitudinalMethod { Nonparametric, REM };

struct FitOptions {
  MeanKind mean = MeanKind::Bivariate;
  LongitudinalMethod longitudinal = LongitudinalMethod::Nonparametric;
  double pve = 0.95;
  int d_s = 10;
  int d_t = 5;
  int cov_dim = 10;
  int time_grid = 41;
  double trim = 0.0;
};

struct FittedModel {
  FitOptions options;
  GridSpec grid;
  MeanSurface mean;
  EigenBasis basis;
  double sigma2 = 0.0;
  std::vector<ComponentModel> components;  // one per eigenfunction

  int K() const { return basis.K; }
  bool has_subject(const std::string& id) const;
  /// (xi_hat_i1(t), ..., xi_hat_iK(t)).
  Eigen::VectorXd xi(const std::string& subject_id, double t) const;
};

/// Runs mean, marginal FPCA and per-component longitudinal fits in order.
/// Failures are rethrown as FitError naming the stage.
FittedModel fit_model(const LFDataset& data, const FitOptions& options = {});

/// mu_hat(s_r, t) + sum_k xi_hat_ik(t) phi_k(s_r). Throws PreconditionError
/// for an unknown subject and DomainError for t outside [0,1].
Eigen::VectorXd reconstruct(const FittedModel& model, const std::string& subject_id, double t);

/// Pointwise average of the subject's training curves over observed cells;
/// cells never observed are NaN.
Eigen::VectorXd naive_predict(const LFDataset& train, const std::string& subject_id);

}  // namespace lfda
