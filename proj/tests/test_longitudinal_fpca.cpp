#include "lfda/error.hpp"
#include "lfda/longitudinal_fpca.hpp"
#include "lfda/mean_model.hpp"
#include "lfda/simulation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace lfda;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Visit times: m ~ U{m_min..m_max} distinct points of the 41-point grid.
Eigen::VectorXd draw_times(std::mt19937_64& rng, int m_min, int m_max) {
  std::vector<int> all(41), picked;
  std::iota(all.begin(), all.end(), 0);
  const int m = std::uniform_int_distribution<int>(m_min, m_max)(rng);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), m, rng);
  Eigen::VectorXd t(m);
  for (int j = 0; j < m; ++j) t(j) = picked[j] / 40.0;
  return t;
}

// xi(T) = z1 sqrt2 cos(2 pi T) + z2 sqrt2 sin(2 pi T) + e, var z = (3, 1.5).
ScoreRecords np_scores(int n, std::uint64_t seed, double sigma2_e) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  ScoreRecords out;
  out.k = 1;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd t = draw_times(rng, 8, 12);
    const double z1 = std::sqrt(3.0) * normal(rng), z2 = std::sqrt(1.5) * normal(rng);
    Eigen::VectorXd xi(t.size());
    for (Eigen::Index j = 0; j < t.size(); ++j)
      xi(j) = std::numbers::sqrt2 * (z1 * std::cos(kTwoPi * t(j)) + z2 * std::sin(kTwoPi * t(j))) +
              std::sqrt(sigma2_e) * normal(rng);
    out.subjects.push_back({"s" + std::to_string(i), t, xi});
  }
  return out;
}

ScoreRecords rem_scores(int n, std::uint64_t seed, const Eigen::Matrix2d& sigma_b, double sigma2_e) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const Eigen::Matrix2d L = sigma_b.llt().matrixL();
  ScoreRecords out;
  out.k = 1;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd t = draw_times(rng, 8, 12);
    Eigen::Vector2d z;
    z << normal(rng), normal(rng);
    const Eigen::Vector2d b = L * z;
    Eigen::VectorXd xi(t.size());
    for (Eigen::Index j = 0; j < t.size(); ++j) xi(j) = b(0) + b(1) * t(j) + std::sqrt(sigma2_e) * normal(rng);
    out.subjects.push_back({"s" + std::to_string(i), t, xi});
  }
  return out;
}

// E[zeta | xi] from the assembled joint covariance of (zeta, xi).
Eigen::VectorXd mvn_oracle(const Eigen::MatrixXd& psi, const Eigen::VectorXd& eta, double sigma2,
                           const Eigen::VectorXd& xi) {
  const Eigen::Index L = eta.size(), m = xi.size();
  Eigen::MatrixXd joint(L + m, L + m);
  joint.topLeftCorner(L, L) = eta.asDiagonal();
  joint.topRightCorner(L, m) = eta.asDiagonal() * psi.transpose();
  joint.bottomLeftCorner(m, L) = joint.topRightCorner(L, m).transpose();
  joint.bottomRightCorner(m, m) = psi * eta.asDiagonal() * psi.transpose();
  joint.bottomRightCorner(m, m).diagonal().array() += sigma2;
  return joint.topRightCorner(L, m) * joint.bottomRightCorner(m, m).inverse() * xi;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

EigenBasis basis_of(const GridSpec& grid, const Eigen::MatrixXd& phi) {
  EigenBasis b;
  b.grid = grid;
  b.phi = phi;
  b.K = static_cast<int>(phi.cols());
  b.lambda = Eigen::VectorXd::Ones(b.K);
  return b;
}

LFDataset one_visit_each(const GridSpec& grid, const std::vector<Eigen::VectorXd>& curves) {
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < curves.size(); ++i)
    subjects.push_back({"s" + std::to_string(i), {Visit::observed(0.5, curves[i])}});
  return LFDataset(grid, std::move(subjects));
}

}  // namespace

TEST(ProjectScores, OrthonormalBasisRecoversCoefficients) {
  const GridSpec grid = GridSpec::equispaced(101);
  const Eigen::VectorXd& s = grid.points();
  Eigen::MatrixXd phi(101, 3);
  phi.col(0).setOnes();
  phi.col(1) = std::numbers::sqrt2 * (kTwoPi * s.array()).sin().matrix();
  phi.col(2) = std::numbers::sqrt2 * (kTwoPi * s.array()).cos().matrix();
  // Orthonormalize under the trapezoid rule so the identities are exact.
  const Eigen::MatrixXd gram = phi.transpose() * grid.weights().asDiagonal() * phi;
  phi = (phi * Eigen::MatrixXd(gram.llt().matrixU()).inverse()).eval();
  const EigenBasis basis = basis_of(grid, phi);

  const auto scores = project_scores(one_visit_each(grid, {phi.col(1), 2.0 * phi.col(0) + 3.0 * phi.col(1)}), basis);
  ASSERT_EQ(scores.size(), 3u);
  EXPECT_NEAR(scores[0].subjects[0].xi(0), 0.0, 1e-8);
  EXPECT_NEAR(scores[1].subjects[0].xi(0), 1.0, 1e-8);
  EXPECT_NEAR(scores[2].subjects[0].xi(0), 0.0, 1e-8);
  EXPECT_NEAR(scores[0].subjects[1].xi(0), 2.0, 1e-8);
  EXPECT_NEAR(scores[1].subjects[1].xi(0), 3.0, 1e-8);
  EXPECT_EQ(scores[1].k, 2);
}

TEST(ProjectScores, OscillationOnConstantIntegratesToZero) {
  const GridSpec grid = GridSpec::equispaced(101);
  const EigenBasis basis = basis_of(grid, Eigen::MatrixXd::Ones(101, 1));
  const Eigen::VectorXd y = (2.0 * kTwoPi * grid.points().array()).sin().matrix();
  EXPECT_NEAR(project_scores(one_visit_each(grid, {y}), basis)[0].subjects[0].xi(0), 0.0, 1e-3);
}

TEST(ProjectScores, Linear) {
  const GridSpec grid = GridSpec::equispaced(51);
  const Eigen::MatrixXd phi = Eigen::MatrixXd::Random(51, 2);
  const EigenBasis basis = basis_of(grid, phi);
  const Eigen::VectorXd y = Eigen::VectorXd::Random(51), z = Eigen::VectorXd::Random(51);
  const auto s = project_scores(one_visit_each(grid, {y, z, 2.0 * y - 0.5 * z}), basis);
  for (int k = 0; k < 2; ++k) {
    const double combo = 2.0 * s[k].subjects[0].xi(0) - 0.5 * s[k].subjects[1].xi(0);
    EXPECT_NEAR(s[k].subjects[2].xi(0), combo, 1e-12);
  }
}

TEST(ProjectScores, MaskedCellsRenormalizeWeights) {
  const GridSpec grid = GridSpec::equispaced(11);
  Visit v = Visit::observed(0.2, Eigen::VectorXd::Constant(11, 3.0));
  v.mask.segment(2, 4).setConstant(false);
  v.values.segment(2, 4).setConstant(100.0);
  const LFDataset data(grid, {Subject{"a", {v}}});
  EXPECT_NEAR(project_scores(data, basis_of(grid, Eigen::MatrixXd::Ones(11, 1)))[0].subjects[0].xi(0), 3.0, 1e-12);
}

TEST(ProjectScores, GridMismatchThrows) {
  const GridSpec grid = GridSpec::equispaced(11);
  const LFDataset data = one_visit_each(grid, {Eigen::VectorXd::Ones(11)});
  EXPECT_THROW(project_scores(data, basis_of(GridSpec::equispaced(12), Eigen::MatrixXd::Ones(12, 1))),
               PreconditionError);
}

TEST(Nonparametric, RecoversTemporalEigenvalues) {
  const LongitudinalComponent c = fit_nonparametric(np_scores(500, 1, 0.0));
  ASSERT_EQ(c.L, 2);
  EXPECT_NEAR(c.eta(0), 3.0, 0.15 * 3.0);
  EXPECT_NEAR(c.eta(1), 1.5, 0.15 * 1.5);
  EXPECT_LT(c.sigma2_e, 0.1);
}

TEST(Nonparametric, RecoversScoreNoise) {
  const LongitudinalComponent c = fit_nonparametric(np_scores(500, 2, 0.7));
  EXPECT_NEAR(c.sigma2_e, 0.7, 0.25 * 0.7);
}

TEST(Nonparametric, RandomInterceptIsRankOne) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  ScoreRecords scores;
  for (int i = 0; i < 500; ++i) {
    const Eigen::VectorXd t = draw_times(rng, 8, 12);
    scores.subjects.push_back({"s" + std::to_string(i), t, Eigen::VectorXd::Constant(t.size(), normal(rng))});
  }
  const LongitudinalComponent c = fit_nonparametric(scores);
  EXPECT_EQ(c.L, 1);
  EXPECT_LT((c.G_psd.array() - 1.0).abs().maxCoeff(), 0.25);
  EXPECT_LT((c.psi.col(0).array() - 1.0).abs().maxCoeff(), 0.15);
}

TEST(Nonparametric, BasisInvariants) {
  const LongitudinalComponent c = fit_nonparametric(np_scores(200, 4, 0.5));
  const Eigen::VectorXd& w = c.time_grid.weights();
  const Eigen::MatrixXd gram = c.psi.transpose() * w.asDiagonal() * c.psi;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(c.L, c.L)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_TRUE(c.G_psd.isApprox(c.G_psd.transpose(), 0.0));
  const Eigen::VectorXd sw = w.cwiseSqrt();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sw.asDiagonal() * c.G_psd * sw.asDiagonal());
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
  for (int l = 1; l < c.L; ++l) EXPECT_GE(c.eta(l - 1), c.eta(l));
  EXPECT_GT(c.eta(c.L - 1), 0.0);
  EXPECT_EQ(c.blup.size(), 200u);
}

TEST(Nonparametric, NeedsRepeatedVisits) {
  ScoreRecords scores;
  Eigen::VectorXd t(2), xi(2);
  t << 0.1, 0.5;
  xi << 1.0, 2.0;
  scores.subjects.push_back({"a", t, xi});
  scores.subjects.push_back({"b", t.head(1), xi.head(1)});
  scores.subjects.push_back({"c", Eigen::VectorXd::Constant(2, 0.3), xi});  // same time twice
  EXPECT_THROW(fit_nonparametric(scores), PreconditionError);
}

TEST(Blup, ScalarClosedForm) {
  Eigen::MatrixXd psi(1, 1);
  psi << 0.8;
  Eigen::VectorXd eta(1), xi(1);
  eta << 2.0;
  xi << 1.7;
  const double expected = 2.0 * 0.8 * 1.7 / (2.0 * 0.8 * 0.8 + 0.3);
  EXPECT_NEAR(blup_zeta(psi, eta, 0.3, xi)(0), expected, 1e-12);
}

TEST(Blup, InterpolatesWithoutNoise) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd psi(4, 2);
  for (Eigen::Index i = 0; i < psi.size(); ++i) psi(i) = normal(rng);
  Eigen::VectorXd eta(2), xi(4);
  eta << 2.0, 0.5;
  Eigen::Vector2d zeta(1.3, -0.4);
  xi = psi * zeta;
  const Eigen::VectorXd z = blup_zeta(psi, eta, 0.0, xi);
  EXPECT_LT((psi * z - xi).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Blup, MatchesConditionalNormalOracle) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.05, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + trial % 5, L = 1 + (trial / 5) % 3;
    Eigen::MatrixXd psi(m, L);
    for (Eigen::Index i = 0; i < psi.size(); ++i) psi(i) = normal(rng);
    Eigen::VectorXd eta(L), xi(m);
    for (int l = 0; l < L; ++l) eta(l) = unif(rng);
    for (int j = 0; j < m; ++j) xi(j) = normal(rng);
    const double sigma2 = unif(rng);
    worst = std::max(worst, (blup_zeta(psi, eta, sigma2, xi) - mvn_oracle(psi, eta, sigma2, xi)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Blup, ShrinksTowardZero) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + trial % 6;
    Eigen::MatrixXd psi(m, 1);
    Eigen::VectorXd xi(m), eta(1);
    for (int j = 0; j < m; ++j) {
      psi(j) = normal(rng);
      xi(j) = normal(rng);
    }
    eta << 1.5;
    const double ls = psi.col(0).dot(xi) / psi.col(0).squaredNorm();
    EXPECT_LE(std::abs(blup_zeta(psi, eta, 0.4, xi)(0)), std::abs(ls) + 1e-15);
  }
}

TEST(Blup, DimensionMismatchThrows) {
  EXPECT_THROW(blup_zeta(Eigen::MatrixXd::Ones(3, 2), Eigen::VectorXd::Ones(2), 1.0, Eigen::VectorXd::Ones(2)),
               PreconditionError);
}

TEST(PredictXi, ZeroScoresAndErrors) {
  LongitudinalComponent c = fit_nonparametric(np_scores(100, 8, 0.3));
  c.blup["zero"] = Eigen::VectorXd::Zero(c.L);
  EXPECT_EQ(c.predict("zero", 0.37), 0.0);
  EXPECT_THROW(c.predict("nobody", 0.5), PreconditionError);
  EXPECT_THROW(c.predict("s0", 1.5), DomainError);
  const ComponentModel model = c;
  EXPECT_TRUE(std::isfinite(predict_xi(model, "s0", 1.0)));
  EXPECT_DOUBLE_EQ(predict_xi(model, "s0", 0.25), c.psi_at(0.25).dot(c.blup.at("s0")));
}

TEST(PredictXi, LinearInterpolationOfPsi) {
  LongitudinalComponent c = fit_nonparametric(np_scores(100, 9, 0.3));
  const double t = 0.0123;  // between grid points 0 and 0.025
  const double a = t / 0.025;
  const Eigen::VectorXd expected = (1.0 - a) * c.psi.row(0).transpose() + a * c.psi.row(1).transpose();
  EXPECT_LT((c.psi_at(t) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rem, RecoversCovariance) {
  Eigen::Matrix2d sigma_b;
  sigma_b << 2.5, 2.0, 2.0, 3.0;
  const REMComponent c = fit_rem(rem_scores(500, 10, sigma_b, 0.7));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) EXPECT_NEAR(c.sigma_b(a, b), sigma_b(a, b), 0.2 * sigma_b(a, b));
  EXPECT_NEAR(c.sigma2_e, 0.7, 0.1);
  EXPECT_GE(c.sigma_b.determinant(), -1e-12);
}

TEST(Rem, NoSlopeBoundary) {
  Eigen::Matrix2d sigma_b;
  sigma_b << 2.0, 0.0, 0.0, 1e-14;
  const REMComponent c = fit_rem(rem_scores(300, 11, sigma_b, 0.0));
  EXPECT_LT(c.sigma_b(1, 1), 0.05);
  EXPECT_NEAR(c.sigma_b(0, 0), 2.0, 0.4);
}

TEST(Rem, BlupMatchesConditionalNormalOracle) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + trial % 5;
    Eigen::VectorXd t(m), y(m);
    for (int j = 0; j < m; ++j) {
      t(j) = (j + 0.5 * std::abs(normal(rng))) / m;
      y(j) = normal(rng);
    }
    Eigen::Matrix2d A;
    A << normal(rng), 0.0, normal(rng), normal(rng);
    const Eigen::Matrix2d sigma_b = A * A.transpose() + 0.01 * Eigen::Matrix2d::Identity();
    const double sigma2 = 0.1 + std::abs(normal(rng));
    Eigen::MatrixXd Z(m, 2);
    Z.col(0).setOnes();
    Z.col(1) = t;
    Eigen::MatrixXd V = Z * sigma_b * Z.transpose();
    V.diagonal().array() += sigma2;
    const Eigen::Vector2d oracle = sigma_b * Z.transpose() * V.inverse() * y;
    worst = std::max(worst, (rem_blup(t, sigma_b, sigma2, y) - oracle).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Rem, FittedBlupsAgreeWithDirectFormula) {
  Eigen::Matrix2d sigma_b;
  sigma_b << 1.0, 0.3, 0.3, 0.8;
  const ScoreRecords scores = rem_scores(60, 13, sigma_b, 0.5);
  const REMComponent c = fit_rem(scores);
  for (const auto& s : scores.subjects)
    EXPECT_LT((c.blup.at(s.id) - rem_blup(s.t, c.sigma_b, c.sigma2_e, s.xi)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Rem, Predict) {
  REMComponent c;
  c.blup["a"] = Eigen::Vector2d(1.0, 2.0);
  EXPECT_DOUBLE_EQ(c.predict("a", 0.5), 2.0);
  EXPECT_DOUBLE_EQ(c.predict("a", 0.0), 1.0);
  EXPECT_THROW(c.predict("b", 0.5), PreconditionError);
  EXPECT_THROW(c.predict("a", -0.1), DomainError);
}

TEST(Rem, Preconditions) {
  Eigen::Matrix2d sigma_b = Eigen::Matrix2d::Identity();
  ScoreRecords two = rem_scores(2, 14, sigma_b, 0.1);
  EXPECT_THROW(fit_rem(two), PreconditionError);
  ScoreRecords pairs;
  Eigen::VectorXd t(2), xi(2);
  t << 0.1, 0.9;
  xi << 0.5, 1.0;
  for (int i = 0; i < 5; ++i) pairs.subjects.push_back({"s" + std::to_string(i), t, xi * i});
  EXPECT_THROW(fit_rem(pairs), PreconditionError);
}

TEST(Rem, AgreesWithNonparametricOnLinearScores) {
  Eigen::Matrix2d sigma_b;
  sigma_b << 2.5, 2.0, 2.0, 3.0;
  const ScoreRecords scores = rem_scores(300, 15, sigma_b, 0.3);
  const REMComponent rem = fit_rem(scores);
  const LongitudinalComponent np = fit_nonparametric(scores);
  std::vector<double> a, b;
  for (const auto& s : scores.subjects)
    for (double t : {0.0, 0.3, 0.7, 1.0}) {
      a.push_back(rem.predict(s.id, t));
      b.push_back(np.predict(s.id, t));
    }
  const Eigen::Map<Eigen::VectorXd> x(a.data(), a.size()), y(b.data(), b.size());
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  EXPECT_GT(xc.dot(yc) / (xc.norm() * yc.norm()), 0.95);
}

TEST(ScoreProxy, ErrorShrinksWithN) {
  // sup over visits of |projection with estimated (mu, phi) - projection with
  // the true ones|, median over replicates.
  std::vector<double> medians;
  for (int n : {100, 300, 500}) {
    std::vector<double> sup;
    for (int rep = 0; rep < 20; ++rep) {
      ScenarioConfig config;
      config.n = n;
      config.n_test = 0;
      const SimulatedData sim = generate_dataset(config, replicate_seed(100 + n, rep));
      const GridSpec& grid = sim.data.grid();
      const MeanSurface mean = fit_bivariate_mean(sim.data);
      const LFDataset demeaned = demean(sim.data, mean_curve_fn(mean, grid));
      const MarginalFPCA marginal = fit_marginal_fpca(demeaned);
      const Eigen::VectorXd& s = grid.points();
      const LFDataset true_demeaned = demean(sim.data, [&](double t) {
        Eigen::VectorXd m(s.size());
        for (Eigen::Index r = 0; r < s.size(); ++r) m(r) = sim.mean(s(r), t);
        return m;
      });
      const auto est = project_scores(demeaned, marginal.basis);
      const auto truth = project_scores(true_demeaned, basis_of(grid, sim.phi));
      double worst = 0.0;
      for (int k = 0; k < std::min(2, marginal.basis.K); ++k) {
        const Eigen::VectorXd d = marginal.basis.phi.col(k) - sim.phi.col(k);
        const double sign = grid.integrate(d.cwiseAbs2()) <= grid.integrate((d + 2.0 * sim.phi.col(k)).cwiseAbs2()) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < est[k].subjects.size(); ++i)
          worst = std::max(worst, (sign * est[k].subjects[i].xi - truth[k].subjects[i].xi).cwiseAbs().maxCoeff());
      }
      sup.push_back(worst);
    }
    medians.push_back(median(sup));
  }
  EXPECT_GT(medians[0], medians[1]);
  EXPECT_GT(medians[1], medians[2]);
}
