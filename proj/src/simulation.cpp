#include "lfda/simulation.hpp"

#include "lfda/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace lfda {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Eigen::MatrixXd exp_cholesky(const Eigen::VectorXd& tg, double variance, double rho) {
  const Eigen::Index n = tg.size();
  Eigen::MatrixXd C(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) C(a, b) = variance * std::pow(rho, std::abs(tg(a) - tg(b)));
  return C.llt().matrixL();
}

Eigen::Matrix2d chol2(double v0, double c, double v1) {
  Eigen::Matrix2d S;
  S << v0, c, c, v1;
  return S.llt().matrixL();
}

double sq_integral(const Eigen::VectorXd& w, const Eigen::VectorXd& f) { return w.dot(f.cwiseAbs2()); }

}  // namespace

void ScenarioConfig::validate() const {
  if (!(snr > 0.0)) throw ConfigError("snr must be positive");
  if (!(sigma2_e1 >= 0.0 && sigma2_e2 >= 0.0)) throw ConfigError("smooth-error variances must be nonnegative");
  if (m_min < 1 || m_max < m_min || m_max > 41) throw ConfigError("visit-count range must satisfy 1 <= m_min <= m_max <= 41");
  if (n < 3) throw ConfigError("need at least three subjects");
  if (n_test < 0 || n_test > n) throw ConfigError("n_test must lie in [0, n]");
  if (n_test > 0 && m_max < 2) throw ConfigError("held-out visits need subjects with two or more visits");
  if (n_sim < 1) throw ConfigError("n_sim must be at least 1");
  if (!(pve > 0.0 && pve <= 1.0)) throw ConfigError("pve must lie in (0, 1]");
  solve_sigma2(*this);
}

double solve_sigma2(const ScenarioConfig& config) {
  if (!(config.snr > 0.0)) throw ConfigError("snr must be positive");
  const double smooth = config.sigma2_e1 + config.sigma2_e2;
  const double sigma2 = kSignalVariance / config.snr - smooth;
  if (sigma2 < 0.0) throw ConfigError("snr implies a negative white-noise variance");
  return sigma2;
}

double default_mean(double s, double t) { return 1.0 + 2.0 * s + 3.0 * t + 4.0 * s * t; }

Eigen::VectorXd SimulatedData::signal(const std::string& subject_id, double t) const {
  const auto it = xi.find(subject_id);
  if (it == xi.end()) throw PreconditionError("unknown subject '" + subject_id + "'");
  const Eigen::VectorXd& tg = time_grid.points();
  const auto pos = std::lower_bound(tg.data(), tg.data() + tg.size(), t - 1e-12) - tg.data();
  if (pos >= tg.size() || std::abs(tg(pos) - t) > 1e-12) throw PreconditionError("time is not on the simulation grid");
  const Eigen::VectorXd& s = data.grid().points();
  Eigen::VectorXd y = phi * it->second.row(pos).transpose();
  for (Eigen::Index r = 0; r < s.size(); ++r) y(r) += mean(s(r), t);
  return y;
}

SimulatedData generate_dataset(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  const double sigma2 = solve_sigma2(config);
  SimulatedData sim;
  const GridSpec grid = GridSpec::equispaced(101);
  sim.time_grid = GridSpec::equispaced(41);
  sim.mean = config.mean ? config.mean : default_mean;
  const Eigen::VectorXd& s = grid.points();
  const Eigen::VectorXd& tg = sim.time_grid.points();
  const Eigen::Index R = s.size(), NT = tg.size();
  sim.phi.resize(R, 2);
  sim.phi.col(0).setOnes();
  sim.phi.col(1) = std::numbers::sqrt2 * (kTwoPi * s.array()).sin();

  Eigen::MatrixXd mu(R, NT);
  for (Eigen::Index b = 0; b < NT; ++b)
    for (Eigen::Index r = 0; r < R; ++r) mu(r, b) = sim.mean(s(r), tg(b));

  // Temporal bases for the nonparametric model on the time grid.
  Eigen::MatrixXd np(NT, 4);
  np.col(0) = std::numbers::sqrt2 * (kTwoPi * tg.array()).cos();
  np.col(1) = std::numbers::sqrt2 * (kTwoPi * tg.array()).sin();
  np.col(2) = std::numbers::sqrt2 * (2.0 * kTwoPi * tg.array()).cos();
  np.col(3) = std::numbers::sqrt2 * (2.0 * kTwoPi * tg.array()).sin();
  const Eigen::Matrix2d rem1 = chol2(2.5, 2.0, 3.0), rem2 = chol2(2.0, 1.0, 1.5);
  Eigen::MatrixXd exp1, exp2;
  if (config.xi_model == XiModel::Exp) {
    exp1 = exp_cholesky(tg, 4.5, 0.9);
    exp2 = exp_cholesky(tg, 3.0, 0.5);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> visits(config.m_min, config.m_max);
  const double sd_e1 = std::sqrt(config.sigma2_e1), sd_e2 = std::sqrt(config.sigma2_e2), sd = std::sqrt(sigma2);
  std::vector<int> all(NT);
  std::iota(all.begin(), all.end(), 0);

  std::vector<Subject> subjects;
  subjects.reserve(config.n);
  for (int i = 0; i < config.n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", i + 1);
    const int m = visits(rng);
    std::vector<int> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked), m, rng);

    Eigen::MatrixXd xi(NT, 2);
    switch (config.xi_model) {
      case XiModel::NP: {
        const double z11 = std::sqrt(3.0) * normal(rng), z12 = std::sqrt(1.5) * normal(rng);
        const double z21 = std::sqrt(2.0) * normal(rng), z22 = normal(rng);
        xi.col(0) = z11 * np.col(0) + z12 * np.col(1);
        xi.col(1) = z21 * np.col(2) + z22 * np.col(3);
        break;
      }
      case XiModel::REM: {
        Eigen::Vector2d z1, z2;
        z1 << normal(rng), normal(rng);
        z2 << normal(rng), normal(rng);
        const Eigen::Vector2d b1 = rem1 * z1, b2 = rem2 * z2;
        xi.col(0) = b1(0) + b1(1) * tg.array();
        xi.col(1) = b2(0) + b2(1) * tg.array();
        break;
      }
      case XiModel::Exp: {
        Eigen::VectorXd z1(NT), z2(NT);
        for (Eigen::Index b = 0; b < NT; ++b) z1(b) = normal(rng);
        for (Eigen::Index b = 0; b < NT; ++b) z2(b) = normal(rng);
        xi.col(0) = exp1 * z1;
        xi.col(1) = exp2 * z2;
        break;
      }
    }

    Subject subject{id, {}};
    for (int b : picked) {
      const double e1 = sd_e1 * normal(rng), e2 = sd_e2 * normal(rng);
      Eigen::VectorXd y = mu.col(b) + (xi(b, 0) + e1) * sim.phi.col(0) + (xi(b, 1) + e2) * sim.phi.col(1);
      for (Eigen::Index r = 0; r < R; ++r) y(r) += sd * normal(rng);
      subject.visits.push_back(Visit::observed(tg(b), std::move(y)));
    }
    sim.xi.emplace(subject.id, std::move(xi));
    subjects.push_back(std::move(subject));
  }
  sim.data = LFDataset(grid, std::move(subjects));
  return sim;
}

ReplicateResult compute_metrics(const FittedModel& model, const SimulatedData& truth, const TrainTestSplit& split) {
  ReplicateResult out;
  out.ok = true;
  out.K = model.K();
  const Eigen::VectorXd& s = model.grid.points();
  const Eigen::VectorXd& ws = model.grid.weights();
  const Eigen::VectorXd& tg = truth.time_grid.points();
  const Eigen::VectorXd& wt = truth.time_grid.weights();

  Eigen::MatrixXd mu_true(s.size(), tg.size());
  for (Eigen::Index b = 0; b < tg.size(); ++b)
    for (Eigen::Index r = 0; r < s.size(); ++r) mu_true(r, b) = truth.mean(s(r), tg(b));
  const Eigen::MatrixXd diff = model.mean.evaluate_grid(s, tg) - mu_true;
  out.imse_mu = ws.dot(diff.cwiseAbs2() * wt);

  std::array<double, 2> sign{1.0, 1.0};
  for (int k = 0; k < 2; ++k) {
    if (k < model.K()) {
      const double plus = sq_integral(ws, model.basis.phi.col(k) - truth.phi.col(k));
      const double minus = sq_integral(ws, model.basis.phi.col(k) + truth.phi.col(k));
      sign[k] = plus <= minus ? 1.0 : -1.0;
      out.imse_phi[k] = std::min(plus, minus);
    } else {
      out.imse_phi[k] = sq_integral(ws, truth.phi.col(k));
    }
  }

  const auto& subjects = split.train.subjects();
  for (const auto& subject : subjects) {
    const Eigen::MatrixXd& xi = truth.xi.at(subject.id);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd err = -xi.col(k);
      if (k < model.K())
        for (Eigen::Index b = 0; b < tg.size(); ++b)
          err(b) += sign[k] * predict_xi(model.components[k], subject.id, tg(b));
      out.ipe_xi[k] += sq_integral(wt, err);
    }
  }
  for (double& v : out.ipe_xi) v /= static_cast<double>(subjects.size());

  std::size_t visits = 0;
  for (const auto& subject : subjects) {
    const Eigen::VectorXd naive = naive_predict(split.train, subject.id);
    for (const auto& v : subject.visits) {
      const Eigen::VectorXd star = truth.signal(subject.id, v.t);
      out.in_ipe += sq_integral(ws, reconstruct(model, subject.id, v.t) - star);
      out.in_ipe_naive += sq_integral(ws, naive - star);
      ++visits;
    }
  }
  out.in_ipe /= static_cast<double>(visits);
  out.in_ipe_naive /= static_cast<double>(visits);

  for (const auto& held : split.test) {
    const Eigen::VectorXd star = truth.signal(held.subject_id, held.visit.t);
    out.out_ipe += sq_integral(ws, reconstruct(model, held.subject_id, held.visit.t) - star);
    out.out_ipe_naive += sq_integral(ws, naive_predict(split.train, held.subject_id) - star);
  }
  if (!split.test.empty()) {
    out.out_ipe /= static_cast<double>(split.test.size());
    out.out_ipe_naive /= static_cast<double>(split.test.size());
  }
  return out;
}

std::uint64_t replicate_seed(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LFDA_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ReplicateResult run_replicate(const ScenarioConfig& config, int index) {
  ReplicateResult result;
  result.index = index;
  const auto start = std::chrono::steady_clock::now();
  try {
    const std::uint64_t seed = replicate_seed(config.seed, index);
    const SimulatedData sim = generate_dataset(config, seed);
    const TrainTestSplit split = split_last_visit(sim.data, static_cast<std::size_t>(config.n_test), ~seed);
    FitOptions options = config.fit;
    options.pve = config.pve;
    const FittedModel model = fit_model(split.train, options);
    result = compute_metrics(model, sim, split);
    result.index = index;
  } catch (const Error& e) {
    result.ok = false;
    result.error = e.what();
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

ExperimentResult run_experiment(const ScenarioConfig& config, int threads) {
  config.validate();
  ExperimentResult out;
  out.replicates.resize(config.n_sim);
  std::atomic<int> next{0};
  const int workers = std::min(resolve_threads(threads), config.n_sim);
  auto work = [&] {
    for (int i = next++; i < config.n_sim; i = next++) out.replicates[i] = run_replicate(config, i);
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  int ok = 0;
  ReplicateResult& m = out.mean;
  m.index = -1;
  for (const auto& r : out.replicates) {
    if (!r.ok) {
      ++out.failed;
      continue;
    }
    ++ok;
    m.K += r.K;
    m.imse_mu += r.imse_mu;
    for (int k = 0; k < 2; ++k) {
      m.imse_phi[k] += r.imse_phi[k];
      m.ipe_xi[k] += r.ipe_xi[k];
    }
    m.in_ipe += r.in_ipe;
    m.out_ipe += r.out_ipe;
    m.in_ipe_naive += r.in_ipe_naive;
    m.out_ipe_naive += r.out_ipe_naive;
    m.wall_seconds += r.wall_seconds;
  }
  m.ok = ok > 0;
  if (ok > 0) {
    const double d = ok;
    m.imse_mu /= d;
    for (int k = 0; k < 2; ++k) {
      m.imse_phi[k] /= d;
      m.ipe_xi[k] /= d;
    }
    m.in_ipe /= d;
    m.out_ipe /= d;
    m.in_ipe_naive /= d;
    m.out_ipe_naive /= d;
    m.wall_seconds /= d;
    m.K = static_cast<int>(std::lround(m.K / d));
  }
  return out;
}

}  // namespace lfda
