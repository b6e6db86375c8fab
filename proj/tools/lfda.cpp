// lfda: fit, predict, simulate, test-mean, export-components.
//
// Exit codes: 0 success, 2 fit failure, 3 predict failure, 4 bad flags,
// config or input files.

#include "lfda/error.hpp"
#include "lfda/inference.hpp"
#include "lfda/model_io.hpp"
#include "lfda/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace lfda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kFitFailure = 2;
constexpr int kPredictFailure = 3;
constexpr int kConfigFailure = 4;

// Carries the exit code out of a command.
struct CommandError : std::runtime_error {
  CommandError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

template <typename F>
auto guard(int code, F f) {
  try {
    return f();
  } catch (const CommandError&) {
    throw;
  } catch (const std::exception& e) {
    throw CommandError(code, e.what());
  }
}

std::string fmt(double x) { return std::isnan(x) ? std::string() : format_double(x); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError(kConfigFailure, "cannot write " + path.string());
  return out;
}

// Writes to the file, or stdout for "-".
template <typename F>
void emit(const std::string& path, F write) {
  if (path == "-") {
    write(std::cout);
  } else {
    std::ofstream out = open_out(path);
    write(out);
  }
}

LFDataset read_data(const std::string& path) { return guard(kConfigFailure, [&] { return load_csv(path); }); }

MeanKind parse_mean(const std::string& s) {
  if (s == "bivariate") return MeanKind::Bivariate;
  if (s == "varying-coefficient") return MeanKind::VaryingCoefficient;
  if (s == "constant") return MeanKind::ConstantInT;
  throw ConfigError("unknown mean '" + s + "'");
}

LongitudinalMethod parse_method(const std::string& s) {
  if (s == "fpca") return LongitudinalMethod::Nonparametric;
  if (s == "rem") return LongitudinalMethod::REM;
  throw ConfigError("unknown longitudinal method '" + s + "'");
}

struct FitFlags {
  std::string mean = "bivariate";
  std::string longitudinal = "fpca";
  double pve = 0.95;
  int d_s = 10;
  int d_t = 5;
  int time_grid = 41;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--pve", f.pve, "Fraction of variance explained")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--ds", f.d_s, "Spline basis size in s")->capture_default_str()->check(CLI::Range(4, 200));
  cmd->add_option("--dt", f.d_t, "Spline basis size in T")->capture_default_str()->check(CLI::Range(4, 200));
  cmd->add_option("--time-grid", f.time_grid, "Points of the visit-time grid")
      ->capture_default_str()
      ->check(CLI::Range(2, 10000));
  cmd->add_option("--mean", f.mean, "bivariate, varying-coefficient or constant")
      ->capture_default_str()
      ->check(CLI::IsMember({"bivariate", "varying-coefficient", "constant"}));
  cmd->add_option("--longitudinal", f.longitudinal, "fpca or rem")
      ->capture_default_str()
      ->check(CLI::IsMember({"fpca", "rem"}));
}

FitOptions fit_options(const FitFlags& f) {
  FitOptions o;
  o.mean = parse_mean(f.mean);
  o.longitudinal = parse_method(f.longitudinal);
  o.pve = f.pve;
  o.d_s = f.d_s;
  o.d_t = f.d_t;
  o.time_grid = f.time_grid;
  return o;
}

int component_dim(const ComponentModel& c) {
  if (const auto* np = std::get_if<LongitudinalComponent>(&c)) return np->L;
  return 2;
}

void export_components(const FittedModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  const GridSpec& grid = model.grid;
  const GridSpec time_grid = GridSpec::equispaced(model.options.time_grid);

  std::ofstream mean = open_out(dir / "mean.csv");
  mean << "s,t,mu\n";
  const Eigen::MatrixXd mu = model.mean.evaluate_grid(grid.points(), time_grid.points());
  for (Eigen::Index b = 0; b < time_grid.size(); ++b)
    for (Eigen::Index a = 0; a < grid.size(); ++a)
      mean << fmt(grid.points()(a)) << ',' << fmt(time_grid.points()(b)) << ',' << fmt(mu(a, b)) << '\n';

  std::ofstream phi = open_out(dir / "phi.csv");
  phi << "k,s,phi\n";
  for (int k = 0; k < model.K(); ++k)
    for (Eigen::Index r = 0; r < grid.size(); ++r)
      phi << k + 1 << ',' << fmt(grid.points()(r)) << ',' << fmt(model.basis.phi(r, k)) << '\n';

  std::ofstream lambda = open_out(dir / "lambda.csv");
  lambda << "k,lambda\n";
  for (int k = 0; k < model.K(); ++k) lambda << k + 1 << ',' << fmt(model.basis.lambda(k)) << '\n';

  std::ofstream psi = open_out(dir / "psi.csv");
  std::ofstream eta = open_out(dir / "eta.csv");
  std::ofstream rem = open_out(dir / "rem.csv");
  psi << "k,l,t,psi\n";
  eta << "k,l,eta\n";
  rem << "k,var_b0,cov_b0_b1,var_b1,sigma2_e\n";
  for (int k = 0; k < model.K(); ++k) {
    if (const auto* np = std::get_if<LongitudinalComponent>(&model.components[k])) {
      for (int l = 0; l < np->L; ++l) {
        eta << k + 1 << ',' << l + 1 << ',' << fmt(np->eta(l)) << '\n';
        for (Eigen::Index j = 0; j < np->time_grid.size(); ++j)
          psi << k + 1 << ',' << l + 1 << ',' << fmt(np->time_grid.points()(j)) << ',' << fmt(np->psi(j, l)) << '\n';
      }
    } else {
      const auto& r = std::get<REMComponent>(model.components[k]);
      rem << k + 1 << ',' << fmt(r.sigma_b(0, 0)) << ',' << fmt(r.sigma_b(0, 1)) << ',' << fmt(r.sigma_b(1, 1)) << ','
          << fmt(r.sigma2_e) << '\n';
    }
  }

  std::ofstream xi = open_out(dir / "xi.csv");
  xi << "subject,k,t,xi_hat\n";
  std::vector<std::string> ids;
  if (!model.components.empty()) {
    if (const auto* np = std::get_if<LongitudinalComponent>(&model.components[0]))
      for (const auto& kv : np->blup) ids.push_back(kv.first);
    else
      for (const auto& kv : std::get<REMComponent>(model.components[0]).blup) ids.push_back(kv.first);
  }
  for (const auto& id : ids)
    for (Eigen::Index j = 0; j < time_grid.size(); ++j) {
      const double t = time_grid.points()(j);
      const Eigen::VectorXd x = model.xi(id, t);
      for (int k = 0; k < model.K(); ++k) xi << id << ',' << k + 1 << ',' << fmt(t) << ',' << fmt(x(k)) << '\n';
    }
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "xi_model") {
      const std::string m = v.get<std::string>();
      if (m == "NP") c.xi_model = XiModel::NP;
      else if (m == "REM") c.xi_model = XiModel::REM;
      else if (m == "Exp") c.xi_model = XiModel::Exp;
      else throw ConfigError("xi_model must be NP, REM or Exp");
    } else if (key == "m_min") c.m_min = v.get<int>();
    else if (key == "m_max") c.m_max = v.get<int>();
    else if (key == "sigma2_e1") c.sigma2_e1 = v.get<double>();
    else if (key == "sigma2_e2") c.sigma2_e2 = v.get<double>();
    else if (key == "snr") c.snr = v.get<double>();
    else if (key == "n") c.n = v.get<int>();
    else if (key == "n_sim") c.n_sim = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "pve") c.pve = v.get<double>();
    else if (key == "n_test") c.n_test = v.get<int>();
    else if (key == "mean") c.fit.mean = parse_mean(v.get<std::string>());
    else if (key == "longitudinal") c.fit.longitudinal = parse_method(v.get<std::string>());
    else if (key == "d_s") c.fit.d_s = v.get<int>();
    else if (key == "d_t") c.fit.d_t = v.get<int>();
    else if (key == "time_grid") c.fit.time_grid = v.get<int>();
    else throw ConfigError("unknown scenario key '" + key + "'");
  }
  return c;
}

ScenarioConfig load_scenario(const std::string& path) {
  return guard(kConfigFailure, [&] {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    try {
      return scenario_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  });
}

void write_result_row(std::ostream& out, const std::string& label, int ok, const ReplicateResult& r) {
  out << label << ',' << ok << ',' << r.K << ',' << fmt(r.imse_mu) << ',' << fmt(r.imse_phi[0]) << ','
      << fmt(r.imse_phi[1]) << ',' << fmt(r.ipe_xi[0]) << ',' << fmt(r.ipe_xi[1]) << ',' << fmt(r.in_ipe) << ','
      << fmt(r.out_ipe) << ',' << fmt(r.in_ipe_naive) << ',' << fmt(r.out_ipe_naive) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal functional data analysis"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: LFDA_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);

  FitFlags fit_flags;
  std::string fit_input, fit_model_path = "model.json", fit_components;
  auto* fit = app.add_subcommand("fit", "Fit a model to a long-format CSV (subject,t,s,y)");
  fit->add_option("input", fit_input, "Data CSV")->required();
  fit->add_option("-o,--output", fit_model_path, "Model file")->capture_default_str();
  fit->add_option("--components", fit_components, "Also export component CSVs to this directory");
  add_fit_flags(fit, fit_flags);

  std::string pred_model, pred_subject, pred_train, pred_output = "-";
  std::vector<double> pred_t;
  bool pred_all = false, pred_naive = false;
  int pred_t_grid = 0;
  auto* predict = app.add_subcommand("predict", "Predict curves Y_i(s, t)");
  predict->add_option("model", pred_model, "Model file (not needed with --naive)");
  predict->add_option("--subject", pred_subject, "Subject id");
  predict->add_flag("--all-subjects", pred_all, "Predict every subject in the model or training data");
  predict->add_option("--t", pred_t, "Visit time(s) in [0,1]");
  predict->add_option("--t-grid", pred_t_grid, "Use this many equispaced times in [0,1]")->check(CLI::Range(2, 100000));
  predict->add_flag("--naive", pred_naive, "Average of the subject's training curves");
  predict->add_option("--train", pred_train, "Training CSV for --naive");
  predict->add_option("-o,--output", pred_output, "Prediction CSV, - for stdout")->capture_default_str();

  std::string sim_config, sim_output = "results.csv", sim_timing = "timing.csv", sim_data;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Run a seeded simulation scenario");
  simulate->add_option("config", sim_config, "Scenario JSON")->required();
  auto* sim_seed_opt = simulate->add_option("--seed", sim_seed, "Override the scenario seed");
  simulate->add_option("-o,--output", sim_output, "Per-replicate results CSV")->capture_default_str();
  simulate->add_option("--timing", sim_timing, "Wall-time CSV")->capture_default_str();
  simulate->add_option("--data", sim_data, "Also write the data set of replicate 0");

  std::string tm_input, tm_report = "-", tm_band;
  int tm_B = 1000, tm_ds = 10;
  double tm_level = 0.95;
  std::uint64_t tm_seed = 1;
  auto* test_mean = app.add_subcommand("test-mean", "Bootstrap test of a zero slope in the varying-coefficient mean");
  test_mean->add_option("input", tm_input, "Data CSV")->required();
  test_mean->add_option("-B,--replicates", tm_B, "Bootstrap replicates")->capture_default_str()->check(CLI::Range(1, 1000000));
  test_mean->add_option("--seed", tm_seed, "Seed")->capture_default_str();
  test_mean->add_option("--ds", tm_ds, "Spline basis size in s")->capture_default_str()->check(CLI::Range(4, 200));
  test_mean->add_option("--level", tm_level, "Band level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  test_mean->add_option("--report", tm_report, "JSON report, - for stdout")->capture_default_str();
  test_mean->add_option("--band", tm_band, "Pointwise band CSV");

  std::string ex_model, ex_dir = "components";
  auto* export_cmd = app.add_subcommand("export-components", "Write plot-ready CSVs of a fitted model");
  export_cmd->add_option("model", ex_model, "Model file")->required();
  export_cmd->add_option("-o,--output", ex_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  try {
    if (*fit) {
      const LFDataset data = read_data(fit_input);
      const FitOptions options = guard(kConfigFailure, [&] { return fit_options(fit_flags); });
      const FittedModel model = guard(kFitFailure, [&] { return fit_model(data, options); });
      save_model(model, fit_model_path);
      if (!fit_components.empty()) export_components(model, fit_components);
      json components = json::array();
      for (const auto& c : model.components) components.push_back(component_dim(c));
      json report = {{"K", model.K()},
                           {"L", components},
                           {"pve_achieved", model.basis.pve_achieved},
                           {"sigma2", model.sigma2},
                           {"subjects", data.num_subjects()},
                           {"model", fit_model_path}};
      if (options.longitudinal == LongitudinalMethod::REM) report["rem_estimator"] = "ML";
      std::cout << report.dump(1) << '\n';
    } else if (*predict) {
      if (pred_all == !pred_subject.empty())
        throw CommandError(kConfigFailure, "give exactly one of --subject and --all-subjects");
      if (pred_t.empty() == (pred_t_grid == 0)) throw CommandError(kConfigFailure, "give exactly one of --t and --t-grid");
      if (pred_t_grid > 0) {
        const Eigen::VectorXd g = GridSpec::equispaced(pred_t_grid).points();
        pred_t.assign(g.data(), g.data() + g.size());
      }
      LFDataset train;
      FittedModel model;
      std::vector<std::string> ids;
      if (pred_naive) {
        if (pred_train.empty()) throw CommandError(kConfigFailure, "--naive needs --train");
        train = read_data(pred_train);
        for (const auto& s : train.subjects()) ids.push_back(s.id);
      } else {
        if (pred_model.empty()) throw CommandError(kConfigFailure, "model file required");
        model = guard(kPredictFailure, [&] { return load_model(pred_model); });
        if (!model.components.empty()) {
          if (const auto* np = std::get_if<LongitudinalComponent>(&model.components[0]))
            for (const auto& kv : np->blup) ids.push_back(kv.first);
          else
            for (const auto& kv : std::get<REMComponent>(model.components[0]).blup) ids.push_back(kv.first);
        }
      }
      if (!pred_all) ids = {pred_subject};
      const GridSpec& grid = pred_naive ? train.grid() : model.grid;
      std::ostringstream out;
      out << "subject,t,s,y_hat\n";
      guard(kPredictFailure, [&] {
        for (const auto& id : ids)
          for (double t : pred_t) {
            if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time " + format_double(t) + " outside [0,1]");
            const Eigen::VectorXd y = pred_naive ? naive_predict(train, id) : reconstruct(model, id, t);
            for (Eigen::Index r = 0; r < grid.size(); ++r)
              out << id << ',' << fmt(t) << ',' << fmt(grid.points()(r)) << ',' << fmt(y(r)) << '\n';
          }
        return 0;
      });
      emit(pred_output, [&](std::ostream& o) { o << out.str(); });
    } else if (*simulate) {
      ScenarioConfig config = load_scenario(sim_config);
      if (*sim_seed_opt) config.seed = sim_seed;
      guard(kConfigFailure, [&] {
        config.validate();
        return 0;
      });
      if (!sim_data.empty()) write_csv(generate_dataset(config, replicate_seed(config.seed, 0)).data, sim_data);
      const ExperimentResult result = guard(kFitFailure, [&] { return run_experiment(config, threads); });
      std::ofstream out = open_out(sim_output);
      out << "replicate,ok,K,imse_mu,imse_phi1,imse_phi2,ipe_xi1,ipe_xi2,in_ipe,out_ipe,in_ipe_naive,out_ipe_naive\n";
      for (const auto& r : result.replicates) {
        write_result_row(out, std::to_string(r.index), r.ok, r);
        if (!r.ok) std::cerr << "replicate " << r.index << " failed: " << r.error << '\n';
      }
      write_result_row(out, "mean", config.n_sim - result.failed, result.mean);
      std::ofstream timing = open_out(sim_timing);
      timing << "replicate,wall_seconds\n";
      for (const auto& r : result.replicates) timing << r.index << ',' << fmt(r.wall_seconds) << '\n';
      timing << "mean," << fmt(result.mean.wall_seconds) << '\n';
      std::cout << json{{"replicates", config.n_sim}, {"failed", result.failed}, {"results", sim_output},
                        {"timing", sim_timing}}
                       .dump(1)
                << '\n';
    } else if (*test_mean) {
      const LFDataset data = read_data(tm_input);
      const SlopeTestResult test =
          guard(kFitFailure, [&] { return bootstrap_slope_test(data, tm_B, tm_seed, threads, tm_ds); });
      const json report = {
          {"q_obs", test.q_obs}, {"p_value", test.p_value}, {"B", test.B}, {"dropped_replicates", test.dropped}};
      emit(tm_report, [&](std::ostream& o) { o << report.dump(1) << '\n'; });
      if (!tm_band.empty()) {
        const PointwiseBand band =
            guard(kFitFailure, [&] { return bootstrap_slope_band(data, tm_B, tm_level, tm_seed, threads, tm_ds); });
        std::ofstream out = open_out(tm_band);
        out << "s,estimate,lower,upper\n";
        for (Eigen::Index r = 0; r < band.grid.size(); ++r)
          out << fmt(band.grid.points()(r)) << ',' << fmt(band.estimate(r)) << ',' << fmt(band.lower(r)) << ','
              << fmt(band.upper(r)) << '\n';
      }
    } else if (*export_cmd) {
      const FittedModel model = guard(kConfigFailure, [&] { return load_model(ex_model); });
      export_components(model, ex_dir);
    }
  } catch (const CommandError& e) {
    std::cerr << "lfda: " << e.what() << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "lfda: " << e.what() << '\n';
    return kConfigFailure;
  }
  return 0;
}
