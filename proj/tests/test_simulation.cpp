#include "lfda/error.hpp"
#include "lfda/simulation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

using namespace lfda;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

bool same(const ReplicateResult& a, const ReplicateResult& b) {
  return a.ok == b.ok && a.K == b.K && a.imse_mu == b.imse_mu && a.imse_phi == b.imse_phi && a.ipe_xi == b.ipe_xi &&
         a.in_ipe == b.in_ipe && a.out_ipe == b.out_ipe && a.in_ipe_naive == b.in_ipe_naive &&
         a.out_ipe_naive == b.out_ipe_naive;
}

// A fitted model equal to the truth of a REM-generated data set: the bilinear
// mean is reproduced exactly by the tensor spline and the REM scores are
// linear in T.
FittedModel oracle_model(const SimulatedData& sim, double sign = 1.0) {
  const GridSpec& grid = sim.data.grid();
  std::vector<Subject> clean;
  for (const auto& s : sim.data.subjects()) {
    Subject c{s.id, {}};
    for (const auto& v : s.visits) {
      Eigen::VectorXd y(grid.size());
      for (Eigen::Index r = 0; r < grid.size(); ++r) y(r) = sim.mean(grid.points()(r), v.t);
      c.visits.push_back(Visit::observed(v.t, y));
    }
    clean.push_back(std::move(c));
  }
  FittedModel model;
  model.grid = grid;
  model.mean = fit_bivariate_mean(LFDataset(grid, std::move(clean)));
  model.basis.grid = grid;
  model.basis.phi = sign * sim.phi;
  model.basis.K = 2;
  model.basis.lambda = Eigen::Vector2d(4.5, 3.0);
  for (int k = 0; k < 2; ++k) {
    REMComponent rem;
    rem.k = k + 1;
    for (const auto& [id, xi] : sim.xi) {
      const double b0 = xi(0, k), b1 = xi(xi.rows() - 1, k) - xi(0, k);
      rem.blup[id] = sign * Eigen::Vector2d(b0, b1);
    }
    model.components.emplace_back(rem);
  }
  return model;
}

ScenarioConfig rem_config() {
  ScenarioConfig c;
  c.xi_model = XiModel::REM;
  c.n = 40;
  c.n_test = 5;
  return c;
}

}  // namespace

TEST(SolveSigma2, StandardConfigurations) {
  ScenarioConfig c;
  c.snr = 1.0;
  EXPECT_EQ(solve_sigma2(c), 6.5);
  c.snr = 5.0;
  EXPECT_EQ(solve_sigma2(c), 0.5);
  c.snr = 1.0;
  c.sigma2_e1 = 0.0;
  c.sigma2_e2 = 0.0;
  const double s2 = solve_sigma2(c);
  EXPECT_EQ(s2, 7.5);
  EXPECT_DOUBLE_EQ((kSignalVariance + s2) / s2 - 1.0, 1.0);
}

TEST(SolveSigma2, RejectsImpossibleSnr) {
  ScenarioConfig c;
  c.snr = 10.0;  // 0.75 < 0.7 + 0.3
  EXPECT_THROW(solve_sigma2(c), ConfigError);
  c.snr = 0.0;
  EXPECT_THROW(solve_sigma2(c), ConfigError);
  c.snr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ScenarioConfig, Validation) {
  ScenarioConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_test = c.n + 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ScenarioConfig{};
  c.m_min = 13;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ScenarioConfig{};
  c.m_max = 42;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ScenarioConfig{};
  c.sigma2_e1 = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ScenarioConfig{};
  c.pve = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Generator, LayoutAndVisitTimes) {
  ScenarioConfig c;
  c.n = 50;
  const SimulatedData sim = generate_dataset(c, 1);
  EXPECT_EQ(sim.data.grid().size(), 101);
  EXPECT_EQ(sim.data.num_subjects(), 50u);
  EXPECT_EQ(sim.data.subjects().front().id, "s0001");
  for (const auto& s : sim.data.subjects()) {
    EXPECT_GE(s.visits.size(), 8u);
    EXPECT_LE(s.visits.size(), 12u);
    std::set<double> times;
    for (const auto& v : s.visits) {
      times.insert(v.t);
      EXPECT_NEAR(v.t * 40.0, std::round(v.t * 40.0), 1e-9);
    }
    EXPECT_EQ(times.size(), s.visits.size());
  }
}

TEST(Generator, NonparametricScoreVariance) {
  ScenarioConfig c;
  c.n = 5000;
  c.n_test = 0;
  c.m_min = c.m_max = 1;
  const SimulatedData sim = generate_dataset(c, 2);
  // xi_1(0) = sqrt2 * zeta_11
  double ss = 0.0;
  for (const auto& [id, xi] : sim.xi) ss += xi(0, 0) * xi(0, 0) / 2.0;
  EXPECT_NEAR(ss / 5000.0, 3.0, 0.05 * 3.0);
}

TEST(Generator, ExponentialAutocorrelation) {
  ScenarioConfig c;
  c.xi_model = XiModel::Exp;
  c.n = 5000;
  c.n_test = 0;
  c.m_min = c.m_max = 1;
  const SimulatedData sim = generate_dataset(c, 3);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& [id, xi] : sim.xi)
    for (int a : {0, 10, 20}) {
      sxy += xi(a, 0) * xi(a + 20, 0);
      sxx += xi(a, 0) * xi(a, 0);
      syy += xi(a + 20, 0) * xi(a + 20, 0);
    }
  EXPECT_NEAR(sxy / std::sqrt(sxx * syy), std::sqrt(0.9), 0.02);
}

TEST(Generator, MissingnessAgainstFullDesign) {
  ScenarioConfig c;
  c.n = 2000;
  c.n_test = 0;
  const SimulatedData sim = generate_dataset(c, 4);
  const double missing = 1.0 - static_cast<double>(sim.data.total_visits()) / (41.0 * 2000.0);
  EXPECT_NEAR(missing, 0.75, 0.02);
}

TEST(Generator, SignalToNoiseSelfCheck) {
  for (double snr : {1.0, 5.0}) {
    ScenarioConfig c;
    c.n = 5000;
    c.n_test = 0;
    c.snr = snr;
    const SimulatedData sim = generate_dataset(c, 5);
    const GridSpec& grid = sim.data.grid();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(grid.size()), sq = sum;
    double count = 0.0;
    for (const auto& s : sim.data.subjects())
      for (const auto& v : s.visits) {
        Eigen::VectorXd d = v.values;
        for (Eigen::Index r = 0; r < grid.size(); ++r) d(r) -= sim.mean(grid.points()(r), v.t);
        sum += d;
        sq += d.cwiseAbs2();
        count += 1.0;
      }
    const Eigen::VectorXd var = sq / count - (sum / count).cwiseAbs2();
    const double noise = c.sigma2_e1 + c.sigma2_e2 + solve_sigma2(c);
    EXPECT_NEAR(grid.integrate(var) / noise - 1.0, snr, 0.05 * snr);
  }
}

TEST(Generator, SignalRequiresGridTime) {
  const SimulatedData sim = generate_dataset(rem_config(), 6);
  EXPECT_THROW(sim.signal("s0001", 0.013), PreconditionError);
  EXPECT_THROW(sim.signal("zzz", 0.5), PreconditionError);
  EXPECT_NO_THROW(sim.signal("s0001", 0.5));
}

TEST(Metrics, TruthScoresZero) {
  const SimulatedData sim = generate_dataset(rem_config(), 7);
  const TrainTestSplit split = split_last_visit(sim.data, 5, 8);
  const ReplicateResult r = compute_metrics(oracle_model(sim), sim, split);
  EXPECT_LT(r.imse_mu, 1e-14);
  EXPECT_EQ(r.imse_phi[0], 0.0);
  EXPECT_EQ(r.imse_phi[1], 0.0);
  EXPECT_LT(r.ipe_xi[0], 1e-20);
  EXPECT_LT(r.ipe_xi[1], 1e-20);
  EXPECT_LT(r.in_ipe, 1e-14);
  EXPECT_LT(r.out_ipe, 1e-14);
  EXPECT_GT(r.in_ipe_naive, 0.0);
}

TEST(Metrics, SignFlipIsAligned) {
  const SimulatedData sim = generate_dataset(rem_config(), 7);
  const TrainTestSplit split = split_last_visit(sim.data, 5, 8);
  const ReplicateResult r = compute_metrics(oracle_model(sim, -1.0), sim, split);
  EXPECT_EQ(r.imse_phi[0], 0.0);
  EXPECT_EQ(r.imse_phi[1], 0.0);
  EXPECT_LT(r.ipe_xi[0], 1e-20);
  EXPECT_LT(r.in_ipe, 1e-14);
}

TEST(Metrics, ConstantMeanOffset) {
  SimulatedData sim = generate_dataset(rem_config(), 7);
  const TrainTestSplit split = split_last_visit(sim.data, 5, 8);
  const FittedModel model = oracle_model(sim);
  const auto mu = sim.mean;
  sim.mean = [mu](double s, double t) { return mu(s, t) - 0.1; };
  EXPECT_NEAR(compute_metrics(model, sim, split).imse_mu, 0.01, 1e-12);
}

TEST(Metrics, MissingComponentCountsAsFullError) {
  const SimulatedData sim = generate_dataset(rem_config(), 7);
  const TrainTestSplit split = split_last_visit(sim.data, 5, 8);
  FittedModel model = oracle_model(sim);
  model.basis.K = 1;
  model.basis.phi.conservativeResize(Eigen::NoChange, 1);
  model.components.pop_back();
  const ReplicateResult r = compute_metrics(model, sim, split);
  EXPECT_NEAR(r.imse_phi[1], 1.0, 1e-3);
  EXPECT_GT(r.ipe_xi[1], 0.0);
}

TEST(Experiment, SeedsAreDistinct) {
  std::set<std::uint64_t> seeds;
  for (int i = 0; i < 1000; ++i) seeds.insert(replicate_seed(1, i));
  for (int i = 0; i < 1000; ++i) seeds.insert(replicate_seed(2, i));
  EXPECT_EQ(seeds.size(), 2000u);
}

TEST(Experiment, ThreadResolution) {
  EXPECT_EQ(resolve_threads(3), 3);
  ::setenv("LFDA_THREADS", "5", 1);
  EXPECT_EQ(resolve_threads(0), 5);
  ::unsetenv("LFDA_THREADS");
  EXPECT_GE(resolve_threads(0), 1);
}

TEST(Experiment, DeterministicAcrossRunsAndThreads) {
  ScenarioConfig c;
  c.n = 40;
  c.n_sim = 3;
  const ExperimentResult a = run_experiment(c, 1), b = run_experiment(c, 1), d = run_experiment(c, 3);
  ASSERT_EQ(a.failed, 0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_TRUE(same(a.replicates[i], b.replicates[i]));
    EXPECT_TRUE(same(a.replicates[i], d.replicates[i]));
    EXPECT_TRUE(same(a.replicates[i], run_replicate(c, i)));
  }
  EXPECT_TRUE(same(a.mean, d.mean));
}

TEST(Experiment, FailuresAreCountedAndExcluded) {
  ScenarioConfig c;
  c.n = 20;
  c.n_sim = 2;
  c.m_min = c.m_max = 2;
  c.fit.longitudinal = LongitudinalMethod::REM;  // needs a subject with three visits
  const ExperimentResult r = run_experiment(c, 1);
  EXPECT_EQ(r.failed, 2);
  EXPECT_FALSE(r.mean.ok);
  EXPECT_NE(r.replicates[0].error.find("longitudinal"), std::string::npos);
}

TEST(Experiment, MetricsNonnegativeAndOutOfSampleHarder) {
  ScenarioConfig c;
  c.n_sim = 10;
  const ExperimentResult r = run_experiment(c, 1);
  ASSERT_EQ(r.failed, 0);
  std::vector<double> in, out;
  for (const auto& x : r.replicates) {
    for (double v : {x.imse_mu, x.imse_phi[0], x.imse_phi[1], x.ipe_xi[0], x.ipe_xi[1], x.in_ipe, x.out_ipe,
                     x.in_ipe_naive, x.out_ipe_naive})
      EXPECT_GE(v, 0.0);
    in.push_back(x.in_ipe);
    out.push_back(x.out_ipe);
  }
  EXPECT_GE(median(out), median(in));
}
