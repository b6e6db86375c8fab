#include "lfda/mean_model.hpp"

#include "lfda/error.hpp"

#include <set>

namespace lfda {

namespace {

void check_domain(double s, double t) {
  if (!(s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0))
    throw DomainError("mean evaluated outside [0,1]^2 at (" + format_double(s) + ", " + format_double(t) + ")");
}

void check_curve(const GridSpec& grid, const Eigen::VectorXd& f) {
  if (f.size() != grid.size()) throw PreconditionError("mean curve length does not match its grid");
}

}  // namespace

MeanSurface::MeanSurface(VaryingCoefficientMean vc) {
  check_curve(vc.grid, vc.mu0);
  check_curve(vc.grid, vc.beta_t);
  rep_ = std::move(vc);
}

MeanSurface::MeanSurface(ConstantMean c) {
  check_curve(c.grid, c.mu0);
  rep_ = std::move(c);
}

double MeanSurface::operator()(double s, double t) const {
  check_domain(s, t);
  switch (kind()) {
    case MeanKind::Bivariate: {
      const auto& f = bivariate();
      return tensor_row(f.basis1, f.basis2, s, t).dot(f.coeffs);
    }
    case MeanKind::VaryingCoefficient: {
      const auto& vc = varying_coefficient();
      return vc.grid.interpolate(vc.mu0, s) + t * vc.grid.interpolate(vc.beta_t, s);
    }
    case MeanKind::ConstantInT: {
      const auto& c = constant();
      return c.grid.interpolate(c.mu0, s);
    }
  }
  return 0.0;
}

Eigen::MatrixXd MeanSurface::evaluate_grid(const Eigen::VectorXd& ss, const Eigen::VectorXd& ts) const {
  for (double s : ss) check_domain(s, 0.0);
  for (double t : ts) check_domain(0.0, t);
  if (kind() == MeanKind::Bivariate) return bivariate().surface().evaluate_grid(ss, ts);
  Eigen::MatrixXd out(ss.size(), ts.size());
  for (Eigen::Index b = 0; b < ts.size(); ++b)
    for (Eigen::Index a = 0; a < ss.size(); ++a) out(a, b) = (*this)(ss(a), ts(b));
  return out;
}

Eigen::VectorXd MeanSurface::curve(const GridSpec& grid, double t) const {
  check_domain(0.0, t);
  if (kind() == MeanKind::VaryingCoefficient && varying_coefficient().grid == grid)
    return varying_coefficient().mu0 + t * varying_coefficient().beta_t;
  if (kind() == MeanKind::ConstantInT && constant().grid == grid) return constant().mu0;
  return evaluate_grid(grid.points(), Eigen::VectorXd::Constant(1, t)).col(0);
}

MeanCurveFn mean_curve_fn(const MeanSurface& mean, const GridSpec& grid) {
  return [mean, grid](double t) { return mean.curve(grid, t); };
}

MeanSurface fit_bivariate_mean(const LFDataset& data, int d_s, int d_t, const std::vector<LambdaPair>& lambda_grid) {
  const Eigen::VectorXd& s = data.grid().points();
  std::vector<Observation2D> obs;
  obs.reserve(data.total_visits() * s.size());
  for (const auto& subject : data.subjects())
    for (const auto& v : subject.visits)
      for (Eigen::Index r = 0; r < s.size(); ++r)
        if (v.mask(r)) obs.push_back({s(r), v.t, v.values(r), 1.0});
  if (obs.empty()) throw PreconditionError("no observed cells to fit the mean");
  return MeanSurface(gcv_select(obs, d_s, d_t, lambda_grid));
}

MeanSurface fit_varying_coefficient_mean(const LFDataset& data, int d_s, const std::vector<double>& lambda_grid) {
  const GridSpec& grid = data.grid();
  const Eigen::Index R = grid.size();
  if (data.distinct_times() < 2) throw PreconditionError("slope in T is unidentifiable with a single visit time");

  // Per grid point: sums for the 2x2 normal equations of Y on (1, T).
  Eigen::VectorXd n = Eigen::VectorXd::Zero(R), st = n, stt = n, sy = n, sty = n;
  std::vector<std::set<double>> times(R);
  for (const auto& subject : data.subjects())
    for (const auto& v : subject.visits)
      for (Eigen::Index r = 0; r < R; ++r) {
        if (!v.mask(r)) continue;
        n(r) += 1.0;
        st(r) += v.t;
        stt(r) += v.t * v.t;
        sy(r) += v.values(r);
        sty(r) += v.t * v.values(r);
        if (times[r].size() < 2) times[r].insert(v.t);
      }
  Eigen::VectorXd a(R), b(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    if (times[r].size() < 2)
      throw PreconditionError("grid point " + format_double(grid.points()(r)) + " has fewer than two visit times");
    const double tbar = st(r) / n(r), ybar = sy(r) / n(r);
    const double sxx = stt(r) - n(r) * tbar * tbar;
    b(r) = (sty(r) - n(r) * tbar * ybar) / sxx;
    a(r) = ybar - b(r) * tbar;
  }

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(R);
  const PenalizedCurveFit mu0 = gcv_select_1d(grid.points(), a, ones, d_s, lambda_grid);
  const PenalizedCurveFit beta = gcv_select_1d(grid.points(), b, ones, d_s, lambda_grid);
  return MeanSurface(VaryingCoefficientMean{grid, mu0.evaluate(grid.points()), beta.evaluate(grid.points()),
                                            mu0.lambda, beta.lambda});
}

MeanSurface fit_constant_mean(const LFDataset& data, int d_s, const std::vector<double>& lambda_grid) {
  const GridSpec& grid = data.grid();
  const Eigen::Index R = grid.size();
  // Count-weighted fit to pointwise means; same estimate as the pooled fit at a
  // given lambda.
  Eigen::VectorXd n = Eigen::VectorXd::Zero(R), sy = n;
  for (const auto& subject : data.subjects())
    for (const auto& v : subject.visits)
      for (Eigen::Index r = 0; r < R; ++r)
        if (v.mask(r)) {
          n(r) += 1.0;
          sy(r) += v.values(r);
        }
  if (n.sum() == 0.0) throw PreconditionError("no observed cells to fit the mean");
  const Eigen::VectorXd ybar = (n.array() > 0).select(sy.array() / n.array().max(1.0), 0.0);
  const PenalizedCurveFit fit = gcv_select_1d(grid.points(), ybar, n, d_s, lambda_grid);
  return MeanSurface(ConstantMean{grid, fit.evaluate(grid.points()), fit.lambda});
}

}  // namespace lfda
