#pragma once

// Bootstrap inference for the slope beta_T(s) of the varying-coefficient mean
// mu0(s) + beta_T(s) T: a test of beta_T = 0 and pointwise confidence bands.

#include "lfda/dataset.hpp"
#include "lfda/mean_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace lfda {

struct SlopeTestResult {
  double q_obs = 0.0;
  std::vector<double> q_null;  // successful replicates, in replicate order
  double p_value = 0.0;        // #{Q_b > Q_obs} / B
  int B = 0;                   // successful replicates
  int dropped = 0;
};

struct PointwiseBand {
  GridSpec grid;
  Eigen::VectorXd estimate;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double level = 0.95;
  int B = 0;
  int dropped = 0;
};

/// Q = integral of beta_T(s)^2 by grid quadrature.
double slope_statistic(const VaryingCoefficientMean& mean);
double slope_statistic(const LFDataset& data, int d_s = 10);

/// n subjects drawn with replacement; each draw keeps all its visits and gets
/// a fresh id "<id>#<draw>".
LFDataset resample_subjects(const LFDataset& data, std::mt19937_64& rng);

/// Residual bootstrap under H0: the null sample Y - beta_hat_T(s) T is built
/// once, subjects are resampled B times and the varying-coefficient mean is
/// refitted. Replicates that fail to fit are dropped; more than 5% dropped
/// throws NumericalError. Deterministic given the seed for any thread count.
SlopeTestResult bootstrap_slope_test(const LFDataset& data, int B = 1000, std::uint64_t seed = 1, int threads = 0,
                                     int d_s = 10);

/// Per-grid-point (1 - level)/2 and (1 + level)/2 quantiles of the slope
/// refitted on subject-resampled data. Requires B >= 20.
PointwiseBand bootstrap_slope_band(const LFDataset& data, int B = 1000, double level = 0.95, std::uint64_t seed = 1,
                                   int threads = 0, int d_s = 10);

}  // namespace lfda
