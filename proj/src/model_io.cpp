#include "lfda/model_io.hpp"

#include "lfda/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace lfda {

namespace {

using nlohmann::json;

// JSON has no literal for non-finite values.
json num(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

double num(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw SchemaError("expected a number, got " + j.dump());
}

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(std::string("model file: missing field '") + key + "'");
  return j.at(key);
}

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num(v(i)));
  return out;
}

Eigen::VectorXd vec(const json& j) {
  if (!j.is_array()) throw SchemaError("model file: expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(j[i]);
  return v;
}

// Row-major nested arrays.
json mat(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec(Eigen::VectorXd(m.row(r).transpose())));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", out}};
}

Eigen::MatrixXd mat(const json& j) {
  const auto rows = field(j, "rows").get<Eigen::Index>();
  const auto cols = field(j, "cols").get<Eigen::Index>();
  const json& data = field(j, "data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows)
    throw SchemaError("model file: matrix row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::VectorXd row = vec(data[static_cast<std::size_t>(r)]);
    if (row.size() != cols) throw SchemaError("model file: matrix column count mismatch");
    m.row(r) = row.transpose();
  }
  return m;
}

json basis(const BSplineBasis& b) { return {{"dim", b.dim()}, {"degree", b.degree()}}; }
BSplineBasis basis(const json& j) { return BSplineBasis(field(j, "dim").get<int>(), field(j, "degree").get<int>()); }

json grid(const GridSpec& g) { return vec(g.points()); }
GridSpec grid(const json& j) { return GridSpec(vec(j)); }

const char* mean_name(MeanKind k) {
  switch (k) {
    case MeanKind::VaryingCoefficient:
      return "varying-coefficient";
    case MeanKind::ConstantInT:
      return "constant";
    case MeanKind::Bivariate:
      break;
  }
  return "bivariate";
}

MeanKind mean_kind(const std::string& s) {
  if (s == "bivariate") return MeanKind::Bivariate;
  if (s == "varying-coefficient") return MeanKind::VaryingCoefficient;
  if (s == "constant") return MeanKind::ConstantInT;
  throw SchemaError("model file: unknown mean variant '" + s + "'");
}

json options(const FitOptions& o) {
  return {{"mean", mean_name(o.mean)},
          {"longitudinal", o.longitudinal == LongitudinalMethod::REM ? "rem" : "nonparametric"},
          {"pve", num(o.pve)},
          {"d_s", o.d_s},
          {"d_t", o.d_t},
          {"cov_dim", o.cov_dim},
          {"time_grid", o.time_grid},
          {"trim", num(o.trim)}};
}

FitOptions options(const json& j) {
  FitOptions o;
  o.mean = mean_kind(field(j, "mean").get<std::string>());
  const std::string method = field(j, "longitudinal").get<std::string>();
  if (method != "rem" && method != "nonparametric") throw SchemaError("model file: unknown method '" + method + "'");
  o.longitudinal = method == "rem" ? LongitudinalMethod::REM : LongitudinalMethod::Nonparametric;
  o.pve = num(field(j, "pve"));
  o.d_s = field(j, "d_s").get<int>();
  o.d_t = field(j, "d_t").get<int>();
  o.cov_dim = field(j, "cov_dim").get<int>();
  o.time_grid = field(j, "time_grid").get<int>();
  o.trim = num(field(j, "trim"));
  return o;
}

json mean(const MeanSurface& m) {
  json j = {{"variant", mean_name(m.kind())}};
  switch (m.kind()) {
    case MeanKind::Bivariate: {
      const Penalized2DFit& f = m.bivariate();
      j["basis_s"] = basis(f.basis1);
      j["basis_t"] = basis(f.basis2);
      j["coeffs"] = vec(f.coeffs);
      j["lambda_s"] = num(f.lambda1);
      j["lambda_t"] = num(f.lambda2);
      j["gcv"] = num(f.gcv);
      j["edf"] = num(f.edf);
      j["rss"] = num(f.rss);
      j["n_obs"] = f.n_obs;
      break;
    }
    case MeanKind::VaryingCoefficient: {
      const VaryingCoefficientMean& vc = m.varying_coefficient();
      j["grid"] = grid(vc.grid);
      j["mu0"] = vec(vc.mu0);
      j["beta_t"] = vec(vc.beta_t);
      j["lambda_mu0"] = num(vc.lambda_mu0);
      j["lambda_beta"] = num(vc.lambda_beta);
      break;
    }
    case MeanKind::ConstantInT: {
      const ConstantMean& c = m.constant();
      j["grid"] = grid(c.grid);
      j["mu0"] = vec(c.mu0);
      j["lambda"] = num(c.lambda);
      break;
    }
  }
  return j;
}

MeanSurface mean(const json& j) {
  switch (mean_kind(field(j, "variant").get<std::string>())) {
    case MeanKind::Bivariate: {
      Penalized2DFit f;
      f.basis1 = basis(field(j, "basis_s"));
      f.basis2 = basis(field(j, "basis_t"));
      f.coeffs = vec(field(j, "coeffs"));
      if (f.coeffs.size() != f.basis1.dim() * f.basis2.dim()) throw SchemaError("model file: mean coefficient count");
      f.lambda1 = num(field(j, "lambda_s"));
      f.lambda2 = num(field(j, "lambda_t"));
      f.gcv = num(field(j, "gcv"));
      f.edf = num(field(j, "edf"));
      f.rss = num(field(j, "rss"));
      f.n_obs = field(j, "n_obs").get<std::size_t>();
      return MeanSurface(std::move(f));
    }
    case MeanKind::VaryingCoefficient:
      return MeanSurface(VaryingCoefficientMean{grid(field(j, "grid")), vec(field(j, "mu0")), vec(field(j, "beta_t")),
                                                num(field(j, "lambda_mu0")), num(field(j, "lambda_beta"))});
    case MeanKind::ConstantInT:
      break;
  }
  return MeanSurface(ConstantMean{grid(field(j, "grid")), vec(field(j, "mu0")), num(field(j, "lambda"))});
}

json covariance_smooth(const CovarianceSmooth& c) {
  return {{"basis_1", basis(c.surface.basis1())}, {"basis_2", basis(c.surface.basis2())},
          {"coef", mat(c.surface.coef())},        {"symmetrized", c.surface.symmetrized()},
          {"lambda", num(c.lambda)},              {"gcv", num(c.gcv)},
          {"edf", num(c.edf)}};
}

CovarianceSmooth covariance_smooth(const json& j) {
  CovarianceSmooth c;
  c.surface = SmoothedSurface(basis(field(j, "basis_1")), basis(field(j, "basis_2")), mat(field(j, "coef")),
                              field(j, "symmetrized").get<bool>());
  c.lambda = num(field(j, "lambda"));
  c.gcv = num(field(j, "gcv"));
  c.edf = num(field(j, "edf"));
  return c;
}

json component(const ComponentModel& cm) {
  json j;
  if (const auto* np = std::get_if<LongitudinalComponent>(&cm)) {
    json blup = json::object();
    for (const auto& [id, z] : np->blup) blup[id] = vec(z);
    j = {{"method", "nonparametric"},
         {"k", np->k},
         {"G", covariance_smooth(np->G)},
         {"time_grid", grid(np->time_grid)},
         {"G_psd", mat(np->G_psd)},
         {"psi", mat(np->psi)},
         {"eta", vec(np->eta)},
         {"L", np->L},
         {"pve_achieved", num(np->pve_achieved)},
         {"sigma2_e", num(np->sigma2_e)},
         {"blup", blup}};
  } else {
    const auto& rem = std::get<REMComponent>(cm);
    json blup = json::object();
    for (const auto& [id, b] : rem.blup) blup[id] = vec(Eigen::VectorXd(b));
    j = {{"method", "rem"},
         {"estimator", "ML"},
         {"k", rem.k},
         {"sigma_b", mat(rem.sigma_b)},
         {"sigma2_e", num(rem.sigma2_e)},
         {"log_likelihood", num(rem.log_likelihood)},
         {"iterations", rem.iterations},
         {"blup", blup}};
  }
  return j;
}

ComponentModel component(const json& j) {
  const std::string method = field(j, "method").get<std::string>();
  if (method == "nonparametric") {
    LongitudinalComponent c;
    c.k = field(j, "k").get<int>();
    c.G = covariance_smooth(field(j, "G"));
    c.time_grid = grid(field(j, "time_grid"));
    c.G_psd = mat(field(j, "G_psd"));
    c.psi = mat(field(j, "psi"));
    c.eta = vec(field(j, "eta"));
    c.L = field(j, "L").get<int>();
    if (c.psi.rows() != c.time_grid.size() || c.psi.cols() != c.L || c.eta.size() != c.L)
      throw SchemaError("model file: inconsistent component dimensions");
    c.pve_achieved = num(field(j, "pve_achieved"));
    c.sigma2_e = num(field(j, "sigma2_e"));
    for (const auto& [id, z] : field(j, "blup").items()) {
      c.blup[id] = vec(z);
      if (c.blup[id].size() != c.L) throw SchemaError("model file: BLUP length for '" + id + "'");
    }
    return c;
  }
  if (method == "rem") {
    if (field(j, "estimator") != "ML") throw SchemaError("model file: REM estimator must be ML");
    REMComponent c;
    c.k = field(j, "k").get<int>();
    const Eigen::MatrixXd sb = mat(field(j, "sigma_b"));
    if (sb.rows() != 2 || sb.cols() != 2) throw SchemaError("model file: sigma_b must be 2 x 2");
    c.sigma_b = sb;
    c.sigma2_e = num(field(j, "sigma2_e"));
    c.log_likelihood = num(field(j, "log_likelihood"));
    c.iterations = field(j, "iterations").get<int>();
    for (const auto& [id, b] : field(j, "blup").items()) {
      const Eigen::VectorXd v = vec(b);
      if (v.size() != 2) throw SchemaError("model file: BLUP length for '" + id + "'");
      c.blup[id] = v;
    }
    return c;
  }
  throw SchemaError("model file: unknown component method '" + method + "'");
}

}  // namespace

std::string serialize_model(const FittedModel& model) {
  json components = json::array();
  for (const auto& c : model.components) components.push_back(component(c));
  const json j = {{"schema_version", kModelSchemaVersion},
                  {"library_version", kLibraryVersion},
                  {"options", options(model.options)},
                  {"grid", grid(model.grid)},
                  {"mean", mean(model.mean)},
                  {"basis",
                   {{"grid", grid(model.basis.grid)},
                    {"phi", mat(model.basis.phi)},
                    {"lambda", vec(model.basis.lambda)},
                    {"K", model.basis.K},
                    {"pve_achieved", num(model.basis.pve_achieved)},
                    {"total_variance", num(model.basis.total_variance)}}},
                  {"sigma2", num(model.sigma2)},
                  {"components", components}};
  return j.dump(1) + "\n";
}

FittedModel deserialize_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  const json& version = field(j, "schema_version");
  if (!version.is_number_integer() || version.get<int>() != kModelSchemaVersion)
    throw SchemaError("model file has schema_version " + version.dump() + ", this build reads " +
                      std::to_string(kModelSchemaVersion));
  FittedModel m;
  try {
    m.options = options(field(j, "options"));
    m.grid = grid(field(j, "grid"));
    m.mean = mean(field(j, "mean"));
    const json& b = field(j, "basis");
    m.basis.grid = grid(field(b, "grid"));
    m.basis.phi = mat(field(b, "phi"));
    m.basis.lambda = vec(field(b, "lambda"));
    m.basis.K = field(b, "K").get<int>();
    m.basis.pve_achieved = num(field(b, "pve_achieved"));
    m.basis.total_variance = num(field(b, "total_variance"));
    m.sigma2 = num(field(j, "sigma2"));
    for (const auto& c : field(j, "components")) m.components.push_back(component(c));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model file: ") + e.what());
  }
  if (m.basis.phi.rows() != m.grid.size() || m.basis.phi.cols() != m.basis.K || m.basis.lambda.size() != m.basis.K ||
      static_cast<int>(m.components.size()) != m.basis.K)
    throw SchemaError("model file: inconsistent eigenbasis dimensions");
  return m;
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << serialize_model(model);
  if (!out) throw ConfigError("failed writing " + path.string());
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace lfda
