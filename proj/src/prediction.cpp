#include "lfda/prediction.hpp"

#include "lfda/error.hpp"

#include <limits>

namespace lfda {

bool FittedModel::has_subject(const std::string& id) const {
  if (components.empty()) return false;
  return std::visit([&](const auto& c) { return c.blup.count(id) > 0; }, components.front());
}

Eigen::VectorXd FittedModel::xi(const std::string& subject_id, double t) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(components.size()));
  for (std::size_t k = 0; k < components.size(); ++k) out(k) = predict_xi(components[k], subject_id, t);
  return out;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw FitError(name, e.what());
  }
}

}  // namespace

FittedModel fit_model(const LFDataset& data, const FitOptions& options) {
  FittedModel model;
  model.options = options;
  model.grid = data.grid();
  model.mean = stage("mean", [&] {
    switch (options.mean) {
      case MeanKind::VaryingCoefficient:
        return fit_varying_coefficient_mean(data, options.d_s);
      case MeanKind::ConstantInT:
        return fit_constant_mean(data, options.d_s);
      case MeanKind::Bivariate:
        break;
    }
    return fit_bivariate_mean(data, options.d_s, options.d_t);
  });
  const LFDataset demeaned = demean(data, mean_curve_fn(model.mean, data.grid()));

  const MarginalFPCA marginal = stage("marginal", [&] {
    MarginalOptions mo;
    mo.pve = options.pve;
    mo.dim = options.cov_dim;
    mo.trim = options.trim;
    return fit_marginal_fpca(demeaned, mo);
  });
  model.basis = marginal.basis;
  model.sigma2 = marginal.sigma2;

  stage("longitudinal", [&] {
    const std::vector<ScoreRecords> scores = project_scores(demeaned, model.basis);
    LongitudinalOptions lo;
    lo.pve = options.pve;
    lo.dim = options.cov_dim;
    lo.trim = options.trim;
    lo.time_grid = GridSpec::equispaced(options.time_grid);
    for (const auto& s : scores) {
      if (options.longitudinal == LongitudinalMethod::REM)
        model.components.emplace_back(fit_rem(s));
      else
        model.components.emplace_back(fit_nonparametric(s, lo));
    }
    return 0;
  });
  return model;
}

Eigen::VectorXd reconstruct(const FittedModel& model, const std::string& subject_id, double t) {
  if (!model.has_subject(subject_id)) throw PreconditionError("unknown subject '" + subject_id + "'");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time " + format_double(t) + " outside [0,1]");
  return model.mean.curve(model.grid, t) + model.basis.phi * model.xi(subject_id, t);
}

Eigen::VectorXd naive_predict(const LFDataset& train, const std::string& subject_id) {
  const Subject& subject = train.subject(subject_id);
  const Eigen::Index R = train.grid().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(R), count = Eigen::VectorXd::Zero(R);
  for (const auto& v : subject.visits) {
    sum += v.mask.select(v.values, 0.0);
    count += v.mask.cast<double>().matrix();
  }
  return (count.array() > 0).select(sum.array() / count.array(), std::numeric_limits<double>::quiet_NaN());
}

}  // namespace lfda
