#pragma once

// Synthetic longitudinal functional data with two marginal components, the
// accuracy metrics used to assess a fit against the truth, and seeded
// replicate sweeps.

#include "lfda/dataset.hpp"
#include "lfda/prediction.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace lfda {

enum class XiModel { NP, REM, Exp };

struct ScenarioConfig {
  XiModel xi_model = XiModel::NP;
  int m_min = 8;
  int m_max = 12;
  double sigma2_e1 = 0.7;
  double sigma2_e2 = 0.3;
  double snr = 1.0;
  int n = 100;
  int n_sim = 100;
  std::uint64_t seed = 1;
  double pve = 0.95;
  int n_test = 10;
  FitOptions fit;  // fit.pve is overridden by pve
  /// Mean surface mu(s, T); empty means 1 + 2s + 3T + 4sT.
  std::function<double(double, double)> mean;

  /// Throws ConfigError.
  void validate() const;
};

/// Integrated variance of the two signal components.
inline constexpr double kSignalVariance = 4.5 + 3.0;

/// White-noise variance implied by the SNR definition
/// SNR = (signal + sigma2_e1 + sigma2_e2 + sigma2) / (sigma2_e1 + sigma2_e2 + sigma2) - 1.
/// Throws ConfigError if it would be negative or snr <= 0.
double solve_sigma2(const ScenarioConfig& config);

double default_mean(double s, double t);

/// Generated data plus everything needed to score a fit.
struct SimulatedData {
  LFDataset data;
  GridSpec time_grid;  // 41 equispaced visit times
  Eigen::MatrixXd phi;  // R x 2 true eigenfunctions
  std::function<double(double, double)> mean;
  std::map<std::string, Eigen::MatrixXd> xi;  // subject -> time-grid points x 2

  /// Noiseless curve mu(s, t) + sum_k xi_ik(t) phi_k(s) at a time-grid point.
  Eigen::VectorXd signal(const std::string& subject_id, double t) const;
};

/// Seeded draw: 101-point s-grid, m_i uniform on [m_min, m_max], visit times
/// drawn without replacement from the 41-point time grid.
SimulatedData generate_dataset(const ScenarioConfig& config, std::uint64_t seed);

struct ReplicateResult {
  int index = 0;
  bool ok = false;
  std::string error;
  int K = 0;
  double imse_mu = 0.0;
  std::array<double, 2> imse_phi{};
  std::array<double, 2> ipe_xi{};
  double in_ipe = 0.0;
  double out_ipe = 0.0;
  double in_ipe_naive = 0.0;
  double out_ipe_naive = 0.0;
  double wall_seconds = 0.0;
};

/// Scores a fitted model against the truth. The sign of each estimated
/// eigenfunction is aligned with the truth and applied to its scores too.
ReplicateResult compute_metrics(const FittedModel& model, const SimulatedData& truth, const TrainTestSplit& split);

struct ExperimentResult {
  std::vector<ReplicateResult> replicates;
  ReplicateResult mean;  // average over successful replicates
  int failed = 0;
};

/// Seed of replicate `index`; independent streams for distinct indices.
std::uint64_t replicate_seed(std::uint64_t seed, int index);

/// Worker count from an explicit request, else LFDA_THREADS, else hardware.
int resolve_threads(int requested);

/// Runs config.n_sim replicates on `threads` workers; results do not depend on
/// the worker count.
ExperimentResult run_experiment(const ScenarioConfig& config, int threads = 0);

/// Single replicate (generate, split, fit, score).
ReplicateResult run_replicate(const ScenarioConfig& config, int index);

}  // namespace lfda
