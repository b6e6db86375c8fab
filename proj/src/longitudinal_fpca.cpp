#include "lfda/longitudinal_fpca.hpp"

#include "lfda/error.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

namespace lfda {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time " + format_double(t) + " outside [0,1]");
}

}  // namespace

std::vector<ScoreRecords> project_scores(const LFDataset& demeaned, const EigenBasis& basis) {
  if (!(demeaned.grid() == basis.grid)) throw PreconditionError("eigenbasis grid does not match the data grid");
  const Eigen::VectorXd& w = demeaned.grid().weights();
  const double total = w.sum();
  std::vector<ScoreRecords> out(basis.K);
  for (int k = 0; k < basis.K; ++k) out[k].k = k + 1;
  for (const auto& subject : demeaned.subjects()) {
    const auto m = static_cast<Eigen::Index>(subject.visits.size());
    Eigen::MatrixXd scores(m, basis.K);
    Eigen::VectorXd t(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const Visit& v = subject.visits[j];
      const Eigen::VectorXd wj = v.mask.select(w, 0.0);
      const double observed = wj.sum();
      if (observed <= 0.0) throw PreconditionError("visit of subject '" + subject.id + "' has no observed cells");
      const Eigen::VectorXd wy = (total / observed) * wj.cwiseProduct(v.mask.select(v.values, 0.0));
      scores.row(j) = (basis.phi.transpose() * wy).transpose();
      t(j) = v.t;
    }
    for (int k = 0; k < basis.K; ++k) out[k].subjects.push_back({subject.id, t, scores.col(k)});
  }
  return out;
}

Eigen::VectorXd LongitudinalComponent::psi_at(double t) const {
  check_time(t);
  Eigen::VectorXd out(L);
  for (int l = 0; l < L; ++l) out(l) = time_grid.interpolate(psi.col(l), t);
  return out;
}

Eigen::MatrixXd LongitudinalComponent::psi_at(const Eigen::VectorXd& ts) const {
  Eigen::MatrixXd out(ts.size(), L);
  for (Eigen::Index j = 0; j < ts.size(); ++j) out.row(j) = psi_at(ts(j)).transpose();
  return out;
}

double LongitudinalComponent::predict(const std::string& subject_id, double t) const {
  const auto it = blup.find(subject_id);
  if (it == blup.end()) throw PreconditionError("no scores for subject '" + subject_id + "'");
  return psi_at(t).dot(it->second);
}

LongitudinalComponent fit_nonparametric(const ScoreRecords& scores, const LongitudinalOptions& options) {
  std::vector<Observation2D> triples;
  std::vector<double> diag_t, diag_v;
  int repeated = 0;
  for (const auto& subject : scores.subjects) {
    const Eigen::Index m = subject.t.size();
    bool has_pair = false;
    for (Eigen::Index j = 0; j < m; ++j) {
      diag_t.push_back(subject.t(j));
      diag_v.push_back(subject.xi(j) * subject.xi(j));
      for (Eigen::Index jj = j + 1; jj < m; ++jj) {
        // Repeated visit times would sit on the diagonal, which carries the noise.
        if (subject.t(j) == subject.t(jj)) continue;
        triples.push_back({subject.t(j), subject.t(jj), subject.xi(j) * subject.xi(jj)});
        has_pair = true;
      }
    }
    repeated += has_pair;
  }
  if (repeated < 2) throw PreconditionError("at least two subjects need visits at two distinct times");

  LongitudinalComponent c;
  c.k = scores.k;
  c.time_grid = options.time_grid;
  const Eigen::VectorXd& tg = c.time_grid.points();
  c.G = smooth_covariance_surface(triples, options.dim, options.lambda_grid);
  const Eigen::MatrixXd smoothed = c.G.surface.evaluate_grid(tg, tg);

  // Remove negative eigenvalues of the weighted operator, then take the
  // eigenbasis of what remains.
  const Eigen::VectorXd sw = c.time_grid.weights().cwiseSqrt();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sw.asDiagonal() * smoothed * sw.asDiagonal());
  if (eig.info() != Eigen::Success) throw NumericalError("temporal covariance eigendecomposition failed");
  const Eigen::MatrixXd V = sw.cwiseInverse().asDiagonal() * eig.eigenvectors();
  c.G_psd = V * eig.eigenvalues().cwiseMax(0.0).asDiagonal() * V.transpose();
  c.G_psd = 0.5 * (c.G_psd + c.G_psd.transpose()).eval();
  const EigenBasis e = eigenbasis(c.G_psd, c.time_grid, options.pve);
  c.psi = e.phi;
  c.eta = e.lambda;
  c.L = e.K;
  c.pve_achieved = e.pve_achieved;

  const Eigen::VectorXd dt = Eigen::Map<const Eigen::VectorXd>(diag_t.data(), diag_t.size());
  const Eigen::VectorXd dv = Eigen::Map<const Eigen::VectorXd>(diag_v.data(), diag_v.size());
  const PenalizedCurveFit diag =
      gcv_select_1d(dt, dv, Eigen::VectorXd::Ones(dt.size()), options.dim, options.lambda_grid);
  if (!(options.trim >= 0.0 && options.trim < 0.5)) throw PreconditionError("trim fraction must lie in [0, 0.5)");
  const auto drop = static_cast<Eigen::Index>(std::floor(options.trim * static_cast<double>(tg.size())));
  const Eigen::VectorXd gap = diag.evaluate(tg) - smoothed.diagonal();
  c.sigma2_e = std::max(0.0, gap.segment(drop, tg.size() - 2 * drop).mean());

  blup_scores(c, scores);
  return c;
}

Eigen::VectorXd blup_zeta(const Eigen::MatrixXd& psi, const Eigen::VectorXd& eta, double sigma2,
                          const Eigen::VectorXd& xi) {
  const Eigen::Index m = xi.size();
  if (psi.rows() != m || psi.cols() != eta.size()) throw PreconditionError("BLUP dimensions do not match");
  const Eigen::MatrixXd cross = psi * eta.asDiagonal();  // cov(xi, zeta)
  Eigen::MatrixXd sigma = cross * psi.transpose();
  sigma.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * std::max(sigma.trace() / static_cast<double>(m), 1e-300);
    sigma.diagonal().array() += jitter;
    llt.compute(sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("score covariance is singular");
  }
  return cross.transpose() * llt.solve(xi);
}

void blup_scores(LongitudinalComponent& component, const ScoreRecords& scores) {
  component.blup.clear();
  for (const auto& subject : scores.subjects)
    component.blup[subject.id] =
        blup_zeta(component.psi_at(subject.t), component.eta, component.sigma2_e, subject.xi);
}

double REMComponent::predict(const std::string& subject_id, double t) const {
  check_time(t);
  const auto it = blup.find(subject_id);
  if (it == blup.end()) throw PreconditionError("no scores for subject '" + subject_id + "'");
  return it->second(0) + it->second(1) * t;
}

Eigen::Vector2d rem_blup(const Eigen::VectorXd& t, const Eigen::Matrix2d& sigma_b, double sigma2,
                         const Eigen::VectorXd& y) {
  Eigen::MatrixXd Z(t.size(), 2);
  Z.col(0).setOnes();
  Z.col(1) = t;
  Eigen::MatrixXd V = Z * sigma_b * Z.transpose();
  V.diagonal().array() += sigma2;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0).all())
    throw NumericalError("random-effects covariance is singular");
  return sigma_b * Z.transpose() * ldlt.solve(y);
}

namespace {

// Per-subject sufficient statistics for y = Z b + e with Z = [1, t].
struct RemSubject {
  Eigen::Matrix2d ztz;
  Eigen::Vector2d zty;
  double yty = 0.0;
  double m = 0.0;
};

struct RemProblem {
  std::vector<RemSubject> subjects;
  double sigma2_floor = 0.0;
};

Eigen::Matrix2d cholesky_factor(const gsl_vector* x) {
  Eigen::Matrix2d L;
  L << gsl_vector_get(x, 0), 0.0, gsl_vector_get(x, 1), gsl_vector_get(x, 2);
  return L;
}

double sigma2_of(const gsl_vector* x, double floor) { return std::max(std::exp(gsl_vector_get(x, 3)), floor); }

// Negative log-likelihood up to constants, via the Woodbury identity with
// U = Z L, so only 2 x 2 systems appear.
double rem_objective(const gsl_vector* x, void* params) {
  const auto& problem = *static_cast<const RemProblem*>(params);
  const Eigen::Matrix2d L = cholesky_factor(x);
  const double s2 = sigma2_of(x, problem.sigma2_floor);
  double nll = 0.0;
  for (const auto& s : problem.subjects) {
    Eigen::Matrix2d M = L.transpose() * s.ztz * L;
    M.diagonal().array() += s2;
    const Eigen::Vector2d uty = L.transpose() * s.zty;
    const Eigen::LLT<Eigen::Matrix2d> llt(M);
    if (llt.info() != Eigen::Success) return GSL_POSINF;
    const double logdet_m = 2.0 * std::log(llt.matrixLLT().diagonal().prod());
    const double quad = (s.yty - uty.dot(llt.solve(uty))) / s2;
    nll += (s.m - 2.0) * std::log(s2) + logdet_m + quad;
  }
  return 0.5 * nll;
}

struct MinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* p) const { gsl_multimin_fminimizer_free(p); }
};
struct VectorDeleter {
  void operator()(gsl_vector* p) const { gsl_vector_free(p); }
};

}  // namespace

REMComponent fit_rem(const ScoreRecords& scores, int max_iterations) {
  if (scores.subjects.size() < 3) throw PreconditionError("random-effects fit needs at least three subjects");
  RemProblem problem;
  bool has_three = false;
  double sum_sq = 0.0, count = 0.0;
  for (const auto& subject : scores.subjects) {
    const Eigen::Index m = subject.t.size();
    Eigen::MatrixXd Z(m, 2);
    Z.col(0).setOnes();
    Z.col(1) = subject.t;
    problem.subjects.push_back({Z.transpose() * Z, Z.transpose() * subject.xi, subject.xi.squaredNorm(),
                                static_cast<double>(m)});
    has_three = has_three || std::set<double>(subject.t.data(), subject.t.data() + m).size() >= 3;
    sum_sq += subject.xi.squaredNorm();
    count += static_cast<double>(m);
  }
  if (!has_three) throw PreconditionError("random-effects fit needs a subject with three distinct visit times");
  const double scale = std::max(sum_sq / count, 1e-300);
  problem.sigma2_floor = 1e-8 * scale;

  static const bool quiet = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)quiet;

  gsl_multimin_function fn{&rem_objective, 4, &problem};
  std::unique_ptr<gsl_vector, VectorDeleter> x(gsl_vector_alloc(4)), step(gsl_vector_alloc(4));
  const double root = std::sqrt(scale / 2.0);
  gsl_vector_set(x.get(), 0, root);
  gsl_vector_set(x.get(), 1, 0.0);
  gsl_vector_set(x.get(), 2, root);
  gsl_vector_set(x.get(), 3, std::log(scale / 2.0));
  std::unique_ptr<gsl_multimin_fminimizer, MinimizerDeleter> minimizer(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 4));

  // Nelder-Mead can stall on a face of the simplex; restart from the optimum
  // until a fresh simplex no longer improves it.
  int iterations = 0;
  double previous = GSL_POSINF;
  for (int restart = 0; restart < 20; ++restart) {
    for (int i = 0; i < 3; ++i) gsl_vector_set(step.get(), i, 0.5 * root);
    gsl_vector_set(step.get(), 3, 1.0);
    gsl_multimin_fminimizer_set(minimizer.get(), &fn, x.get(), step.get());
    int status = GSL_CONTINUE;
    double best = GSL_POSINF;
    int stalled = 0;
    while (status == GSL_CONTINUE && iterations < max_iterations) {
      ++iterations;
      const int it = gsl_multimin_fminimizer_iterate(minimizer.get());
      if (it == GSL_ENOPROG) status = GSL_SUCCESS;
      if (it != GSL_SUCCESS) break;
      status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(minimizer.get()), 1e-9 * (1.0 + root));
      // On a boundary ridge the simplex can stop shrinking while the value is
      // flat to rounding; the restarts below confirm the optimum.
      if (minimizer->fval < best - 1e-12 * (1.0 + std::abs(best))) {
        best = minimizer->fval;
        stalled = 0;
      } else if (++stalled >= 500) {
        status = GSL_SUCCESS;
      }
    }
    if (status != GSL_SUCCESS) {
      std::ostringstream msg;
      msg << "random-effects likelihood did not converge for component " << scores.k << " after " << iterations
          << " iterations (objective " << minimizer->fval << ")";
      throw NumericalError(msg.str());
    }
    gsl_vector_memcpy(x.get(), minimizer->x);
    const double value = minimizer->fval;
    if (previous - value <= 1e-10 * (1.0 + std::abs(value))) break;
    previous = value;
  }

  REMComponent c;
  c.k = scores.k;
  const Eigen::Matrix2d L = cholesky_factor(x.get());
  c.sigma_b = L * L.transpose();
  c.sigma2_e = sigma2_of(x.get(), problem.sigma2_floor);
  c.log_likelihood = -minimizer->fval - 0.5 * count * std::log(2.0 * std::numbers::pi);
  c.iterations = iterations;
  for (std::size_t i = 0; i < scores.subjects.size(); ++i) {
    const RemSubject& s = problem.subjects[i];
    Eigen::Matrix2d M = L.transpose() * s.ztz * L;
    M.diagonal().array() += c.sigma2_e;
    c.blup[scores.subjects[i].id] = L * M.llt().solve(L.transpose() * s.zty);
  }
  return c;
}

double predict_xi(const ComponentModel& component, const std::string& subject_id, double t) {
  return std::visit([&](const auto& c) { return c.predict(subject_id, t); }, component);
}

}  // namespace lfda
