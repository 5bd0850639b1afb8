// Command-line front end: fit, simulate, study.
//
// Exit codes: 0 success / converged fit, 2 fit finished but flagged
// (not converged or covariance withheld), 1 error.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmlgamm/pmlgamm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace pmlgamm;

namespace {

int g_verbosity = 0;

void log_line(int level, const std::string& msg) {
  if (level > g_verbosity) return;
  std::cerr << "pmlgamm: " << msg << '\n';
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_band(const fs::path& path, const FunctionBand& band) {
  std::ostringstream out;
  out << "grid,estimate,lower,upper\n" << std::setprecision(17);
  for (std::size_t g = 0; g < band.grid.size(); ++g) {
    out << band.grid[g] << ',' << band.estimate[g] << ',' << band.lower[g] << ','
        << band.upper[g] << '\n';
  }
  write_text(path, out.str());
}

void dump_basis(const fs::path& dir, const ModelDesign& design) {
  for (std::size_t s = 0; s < design.num_smooths(); ++s) {
    const auto& basis = design.smooths()[s].basis;
    std::ostringstream knots, pen;
    knots << "knot\n" << std::setprecision(17);
    for (Eigen::Index j = 0; j < basis.knots.size(); ++j) knots << basis.knots(j) << '\n';
    pen << std::setprecision(17);
    for (Eigen::Index r = 0; r < basis.penalty.rows(); ++r) {
      for (Eigen::Index c = 0; c < basis.penalty.cols(); ++c) {
        pen << (c ? "," : "") << basis.penalty(r, c);
      }
      pen << '\n';
    }
    const std::string tag = "x" + std::to_string(design.smooths()[s].covariate + 1);
    write_text(dir / ("knots_" + tag + ".csv"), knots.str());
    write_text(dir / ("penalty_" + tag + ".csv"), pen.str());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("PMLGAMM_SEED");
  if (!v || !*v) return std::nullopt;
  std::uint64_t s = 0;
  const std::string str(v);
  auto [ptr, ec] = std::from_chars(str.data(), str.data() + str.size(), s);
  if (ec != std::errc() || ptr != str.data() + str.size()) {
    throw ConfigError("PMLGAMM_SEED is not an unsigned integer: '" + str + "'");
  }
  return s;
}

struct FitArgs {
  std::string data;
  std::string model = "pml";
  std::string family = "poisson";
  int quad_points = 9;
  int num_basis = 10;
  std::string knots = "quantile";
  std::string logdet = "rank";
  std::string out_dir = ".";
  bool band = false;
  int band_smooth = 1;
  int band_points = 100;
  bool dump_basis = false;
  int max_iter = 0;
  std::vector<double> lambda;
  bool debug = false;
};

int cmd_fit(const FitArgs& a) {
  // Flags are resolved before any data are read or fitted.
  const Family family = parse_family(a.family);
  const KnotStrategy strategy = parse_knot_strategy(a.knots);
  const PenaltyLogDet logdet = parse_penalty_logdet(a.logdet);
  if (a.model != "gam" && a.model != "gamm-laplace" && a.model != "pml") {
    throw ConfigError("unknown model '" + a.model + "'");
  }
  (void)gauss_hermite(a.quad_points);
  if (a.band_points < 2) throw ConfigError("--band-points must be >= 2");
  if (!a.lambda.empty() && a.model != "pml") throw ConfigError("--lambda applies to --model pml");
  const fs::path out_dir(a.out_dir);

  const Dataset data = read_dataset_csv(a.data);
  data.validate_responses(family);
  const ModelFrame frame(data, family, ModelDesign::default_specs(data, a.num_basis, strategy));
  const auto p = static_cast<Eigen::Index>(frame.design.num_smooths());
  if (a.band_smooth < 1 || a.band_smooth > p) throw ConfigError("--band-smooth out of range");
  if (!a.lambda.empty() && static_cast<Eigen::Index>(a.lambda.size()) != p) {
    throw ConfigError("--lambda needs " + std::to_string(p) + " values");
  }
  fs::create_directories(out_dir);
  log_line(1, "read " + std::to_string(frame.num_rows()) + " rows in " +
                  std::to_string(frame.num_groups()) + " groups; coefficient dimension " +
                  std::to_string(frame.dim()));
  if (a.dump_basis) dump_basis(out_dir, frame.design);

  const auto s = static_cast<std::size_t>(a.band_smooth - 1);
  const auto& basis = frame.design.smooths()[s].basis;
  const auto grid = uniform_grid(basis.lower(), basis.upper(), a.band_points);

  json j;
  j["model"] = a.model;
  j["family"] = std::string(family_name(family));
  j["groups"] = frame.num_groups();
  j["rows"] = frame.num_rows();
  j["penalty_logdet"] = a.logdet;
  bool ok = true;
  std::optional<FunctionBand> band;

  GamOptions gopt;
  gopt.logdet_mode = logdet;
  if (a.max_iter > 0) gopt.max_outer_iterations = a.max_iter;

  if (a.model == "gam") {
    const GamFit fit = fit_gam(frame, gopt);
    j["lambda_hat"] = to_json(fit.lambda_hat);
    j["beta"] = to_json(fit.beta);
    j["laml"] = fit.laml_value;
    j["iterations"] = fit.outer_iterations;
    j["converged"] = fit.converged;
    j["message"] = fit.message;
    ok = fit.converged;
    if (a.band) band = wald_band(fit, frame.design, grid, s);
  } else if (a.model == "gamm-laplace") {
    GammLaplaceOptions opt;
    opt.logdet_mode = logdet;
    if (a.max_iter > 0) opt.max_outer_iterations = a.max_iter;
    const GammLaplaceFit fit = fit_gamm_laplace(frame, opt);
    j["sigma_hat"] = fit.sigma_hat;
    j["beta_hat"] = to_json(fit.beta_hat);
    j["lambda_hat"] = to_json(fit.lambda_hat);
    j["objective"] = fit.objective;
    j["iterations"] = fit.outer_iterations;
    j["converged"] = fit.converged;
    j["message"] = fit.message;
    j["covariance_available"] = fit.covariance.has_value();
    ok = fit.converged && fit.covariance.has_value();
    if (a.band && fit.covariance) band = wald_band(fit, frame.design, grid, s);
  } else {
    GamFit stage1;
    if (a.lambda.empty()) {
      stage1 = fit_gam(frame, gopt);
      log_line(1, "stage 1 lambda_hat computed in " + std::to_string(stage1.outer_iterations) +
                      " iterations");
      if (!stage1.converged) {
        ok = false;
        log_line(0, "warning: stage 1 did not converge: " + stage1.message);
      }
    } else {
      stage1.lambda_hat = Eigen::Map<const Eigen::VectorXd>(a.lambda.data(), p);
      for (double l : a.lambda)
        if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("--lambda values must be positive");
      stage1.log_lambda_hat = stage1.lambda_hat.array().log().matrix();
      stage1.beta = gam_mode(frame, PenaltyState(frame.design, stage1.lambda_hat),
                             Eigen::VectorXd::Zero(frame.dim()))
                        .beta;
      stage1.converged = true;
    }
    PmlOptions opt;
    opt.quad_points = a.quad_points;
    if (a.max_iter > 0) opt.max_iterations = a.max_iter;
    const PmlFit fit = fit_pml(frame, stage1, opt);
    j["sigma_hat"] = fit.sigma_hat;
    j["sigma_se"] = number_or_null(fit.sigma_se);
    j["beta_hat"] = to_json(fit.beta_hat);
    j["lambda_used"] = to_json(fit.lambda_used);
    j["k"] = fit.k;
    j["objective"] = fit.objective;
    j["iterations"] = fit.iterations;
    j["gradient_norm"] = fit.gradient_norm;
    j["converged"] = fit.converged;
    j["message"] = fit.message;
    j["covariance_available"] = fit.covariance.has_value();
    ok = ok && fit.converged && fit.covariance.has_value();
    if (a.debug) {
      PmlObjective obj(frame, fit.lambda_used, fit.k);
      const Eigen::VectorXd theta = pml_theta(fit.log_sigma_hat, fit.beta_hat);
      json d;
      d["objective_exp_form"] = obj.value(theta);
      d["objective_literal_form"] = number_or_null(obj.literal_variant(theta));
      d["group_log_integrals"] = obj.group_log_integrals(theta);
      j["debug"] = d;
    }
    if (a.band && fit.covariance) band = wald_band(fit, frame.design, grid, s);
  }

  if (band) write_band(out_dir / "band.csv", *band);
  write_text(out_dir / "fit.json", j.dump(2) + "\n");
  log_line(0, std::string(ok ? "fit converged" : "fit flagged: see fit.json") + "; wrote " +
                  (out_dir / "fit.json").string());
  return ok ? 0 : 2;
}

struct SimulateArgs {
  int m = 0;
  int n = 0;
  double sigma = 1.0;
  std::string family = "poisson";
  std::string f_true = "sin2pi";
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

int cmd_simulate(const SimulateArgs& a) {
  const Family family = parse_family(a.family);
  const TrueFunction f = true_function(a.f_true);
  std::uint64_t seed = 20240101;
  if (a.seed) seed = *a.seed;
  else if (auto e = env_seed()) seed = *e;
  const Dataset data = simulate_dataset(a.m, a.n, a.sigma, f, family, seed);
  fs::create_directories(a.out_dir);
  std::ostringstream out;
  write_dataset_csv(out, data);
  write_text(fs::path(a.out_dir) / "dataset.csv", out.str());
  log_line(0, "wrote " + std::to_string(a.m * a.n) + " rows (seed " + std::to_string(seed) + ")");
  return 0;
}

struct StudyArgs {
  std::string config;
  std::string out_dir = ".";
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_study(const StudyArgs& a) {
  StudyConfig cfg = read_study_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  else if (!cfg.seed_given) {
    if (auto e = env_seed()) cfg.seed = *e;
  }
  if (a.threads > 0) cfg.threads = a.threads;
  cfg.validate();
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const auto records = run_study(cfg, [](int m, int n, std::size_t done, std::size_t total) {
    std::cerr << "pmlgamm: cell m=" << m << " n=" << n << " done (" << done << "/" << total
              << ")\n";
  });
  std::ostringstream rec, sum;
  write_records_csv(rec, records, cfg.record_runtime);
  write_summary_csv(sum, aggregate(records));
  write_text(dir / "study_records.csv", rec.str());
  write_text(dir / "study_summary.csv", sum.str());
  if (cfg.dump_grid) {
    std::ostringstream grid;
    write_grid_csv(grid, records, cfg);
    write_text(dir / "study_grid.csv", grid.str());
  }
  log_line(0, "wrote " + std::to_string(records.size()) + " records to " + dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized adaptive-quadrature GAMM fitting"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("-v,--verbose", g_verbosity, "More log output (repeatable)");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a model to a dataset CSV");
  fit->add_option("--data", fa.data, "Dataset CSV (group,y,x1..xp)")->required();
  fit->add_option("--model", fa.model, "gam | gamm-laplace | pml")->capture_default_str();
  fit->add_option("--family", fa.family, "gaussian | poisson | bernoulli")->capture_default_str();
  fit->add_option("--quad-points,-k", fa.quad_points, "Gauss-Hermite points")->capture_default_str();
  fit->add_option("--num-basis", fa.num_basis, "Basis size per smooth")->capture_default_str();
  fit->add_option("--knots", fa.knots, "quantile | uniform")->capture_default_str();
  fit->add_option("--penalty-logdet", fa.logdet, "rank | unit")->capture_default_str();
  fit->add_option("--out-dir", fa.out_dir, "Output directory")->capture_default_str();
  fit->add_flag("--band", fa.band, "Write band.csv for one smooth");
  fit->add_option("--band-smooth", fa.band_smooth, "Smooth for --band (1-based)")
      ->capture_default_str();
  fit->add_option("--band-points", fa.band_points, "Grid size for --band")->capture_default_str();
  fit->add_flag("--dump-basis", fa.dump_basis, "Write knots and penalty matrices");
  fit->add_option("--max-iter", fa.max_iter, "Iteration cap for the outer optimizer");
  fit->add_option("--lambda", fa.lambda, "Smoothing parameters for pml (skips stage 1)")
      ->delimiter(',');
  fit->add_flag("--debug", fa.debug, "Extra diagnostics in fit.json");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Simulate a dataset from the study design");
  sim->add_option("--m", sa.m, "Number of groups")->required();
  sim->add_option("--n", sa.n, "Observations per group")->required();
  sim->add_option("--sigma", sa.sigma, "Random-effect SD")->capture_default_str();
  sim->add_option("--family", sa.family, "gaussian | poisson | bernoulli")->capture_default_str();
  sim->add_option("--f-true", sa.f_true, "sin2pi | linear | zero")->capture_default_str();
  sim->add_option("--seed", sa.seed, "RNG seed (default: $PMLGAMM_SEED, then 20240101)");
  sim->add_option("--out-dir", sa.out_dir, "Output directory")->capture_default_str();

  StudyArgs st;
  auto* study = app.add_subcommand("study", "Run a simulation study");
  study->add_option("--config", st.config, "key = value config file")->required();
  study->add_option("--out-dir", st.out_dir, "Output directory")->capture_default_str();
  study->add_option("--threads", st.threads, "Worker threads (overrides config)");
  study->add_option("--seed", st.seed, "Seed (overrides config and $PMLGAMM_SEED)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*fit) return cmd_fit(fa);
    if (*sim) return cmd_simulate(sa);
    if (*study) return cmd_study(st);
  } catch (const std::exception& e) {
    std::cerr << "pmlgamm: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
