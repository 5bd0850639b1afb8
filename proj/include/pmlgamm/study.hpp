#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pmlgamm/band.hpp"
#include "pmlgamm/dataset.hpp"
#include "pmlgamm/errors.hpp"
#include "pmlgamm/family.hpp"
#include "pmlgamm/gam.hpp"
#include "pmlgamm/gamm_laplace.hpp"
#include "pmlgamm/model.hpp"
#include "pmlgamm/pml.hpp"

namespace pmlgamm {

// ---------------------------------------------------------------------------
// True smooth functions

struct TrueFunction {
  std::string name;
  std::function<double(double)> f;
};

inline TrueFunction true_function(const std::string& name) {
  if (name == "sin2pi") return {name, [](double x) { return std::sin(2.0 * std::numbers::pi * x); }};
  if (name == "linear") return {name, [](double x) { return 2.0 * x - 1.0; }};
  if (name == "zero") return {name, [](double) { return 0.0; }};
  throw ConfigError("unknown true function '" + name + "' (sin2pi, linear, zero)");
}

// ---------------------------------------------------------------------------
// Random streams

/// SplitMix64 finalizer; used to derive independent per-replicate seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for the replicate keyed by (m, n, replicate); independent of the
/// order in which work items are scheduled.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t m, std::uint64_t n,
                                    std::uint64_t replicate) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ m);
  h = mix64(h ^ (n << 20));
  h = mix64(h ^ (replicate << 40));
  return h;
}

/// Equal-sized groups: u_i ~ N(0, sigma^2), x_ij ~ U(0,1), y_ij drawn from
/// the family at eta = f(x_ij) + u_i.
inline Dataset simulate_dataset(int m, int n, double sigma_true, const TrueFunction& f_true,
                                Family family, std::uint64_t seed) {
  if (m < 1 || n < 1) throw ConfigError("m and n must be >= 1");
  if (!(sigma_true >= 0.0) || !std::isfinite(sigma_true)) {
    throw ConfigError("sigma must be finite and nonnegative");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Group> groups;
  groups.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    Group g;
    g.group_id = i + 1;
    const double u = sigma_true * normal(rng);
    for (int j = 0; j < n; ++j) {
      Row r;
      const double x = unif(rng);
      const double eta = f_true.f(x) + u;
      switch (family) {
        case Family::Gaussian:
          r.y = eta + normal(rng);
          break;
        case Family::Poisson:
          r.y = static_cast<double>(std::poisson_distribution<long>(std::exp(eta))(rng));
          break;
        case Family::Bernoulli:
          r.y = unif(rng) < detail::logistic(eta) ? 1.0 : 0.0;
          break;
      }
      r.x = {x};
      g.rows.push_back(std::move(r));
    }
    groups.push_back(std::move(g));
  }
  return Dataset(std::move(groups));
}

// ---------------------------------------------------------------------------
// Study configuration

enum class Method { GAM, GAMM, PML };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::GAM: return "GAM";
    case Method::GAMM: return "GAMM";
    case Method::PML: return "PML";
  }
  return "?";
}

struct StudyConfig {
  std::vector<int> m_grid{5, 10, 20, 50, 100};
  std::vector<int> n_grid{3, 10};
  int replicates = 200;
  Family family = Family::Poisson;
  double sigma_true = 1.0;
  std::string f_true = "sin2pi";
  int num_basis = 10;
  KnotStrategy knot_strategy = KnotStrategy::Quantile;
  int quad_points = 9;
  std::uint64_t seed = 20240101;
  int grid_points = 100;
  double grid_lower = 0.05;
  double grid_upper = 0.95;
  PenaltyLogDet logdet_mode = PenaltyLogDet::Rank;
  int threads = 1;
  bool record_runtime = false;
  bool dump_grid = false;
  // Compare f_hat(x) - mean_obs f_hat with f(x) - mean_obs f, the part of f
  // that does not depend on the intercept; false compares f_hat with f.
  bool center_f = false;
  bool seed_given = false;  // set when the config file names a seed

  void validate() const {
    if (replicates < 1) throw ConfigError("replicates must be >= 1");
    if (m_grid.empty() || n_grid.empty()) throw ConfigError("m_grid and n_grid must be nonempty");
    for (int v : m_grid)
      if (v < 1) throw ConfigError("m_grid entries must be >= 1");
    for (int v : n_grid)
      if (v < 1) throw ConfigError("n_grid entries must be >= 1");
    if (!(sigma_true >= 0.0)) throw ConfigError("sigma_true must be >= 0");
    if (grid_points < 1) throw ConfigError("grid_points must be >= 1");
    if (!(grid_lower < grid_upper) || grid_lower < 0.0 || grid_upper > 1.0) {
      throw ConfigError("grid bounds must satisfy 0 <= grid_lower < grid_upper <= 1");
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
    (void)true_function(f_true);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string tok;
  std::istringstream ss(v);
  while (std::getline(ss, tok, ',')) {
    std::istringstream ts(tok);
    std::string piece;
    while (ts >> piece) {
      int x = 0;
      if (!parse_number(piece, x)) throw ConfigError("config key '" + key + "': bad integer '" + piece + "'");
      out.push_back(x);
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

template <class T>
T parse_scalar(const std::string& key, const std::string& v) {
  T x{};
  if (!parse_number(v, x)) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and
/// malformed values are errors naming the key.
inline StudyConfig parse_study_config(std::istream& in) {
  StudyConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    try {
      if (key == "m_grid") cfg.m_grid = detail::parse_int_list(key, val);
      else if (key == "n_grid") cfg.n_grid = detail::parse_int_list(key, val);
      else if (key == "replicates") cfg.replicates = detail::parse_scalar<int>(key, val);
      else if (key == "family") cfg.family = parse_family(val);
      else if (key == "sigma_true") cfg.sigma_true = detail::parse_scalar<double>(key, val);
      else if (key == "f_true") { (void)true_function(val); cfg.f_true = val; }
      else if (key == "num_basis" || key == "d_s") cfg.num_basis = detail::parse_scalar<int>(key, val);
      else if (key == "knot_strategy") cfg.knot_strategy = parse_knot_strategy(val);
      else if (key == "quad_points" || key == "k") cfg.quad_points = detail::parse_scalar<int>(key, val);
      else if (key == "seed") {
        cfg.seed = detail::parse_scalar<std::uint64_t>(key, val);
        cfg.seed_given = true;
      }
      else if (key == "grid_points") cfg.grid_points = detail::parse_scalar<int>(key, val);
      else if (key == "grid_lower") cfg.grid_lower = detail::parse_scalar<double>(key, val);
      else if (key == "grid_upper") cfg.grid_upper = detail::parse_scalar<double>(key, val);
      else if (key == "penalty_logdet") cfg.logdet_mode = parse_penalty_logdet(val);
      else if (key == "threads") cfg.threads = detail::parse_scalar<int>(key, val);
      else if (key == "record_runtime") cfg.record_runtime = detail::parse_bool(key, val);
      else if (key == "dump_grid") cfg.dump_grid = detail::parse_bool(key, val);
      else if (key == "center_f") cfg.center_f = detail::parse_bool(key, val);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      if (msg.find("'" + key + "'") != std::string::npos) throw;
      throw ConfigError("config key '" + key + "': " + msg);
    }
  }
  cfg.validate();
  return cfg;
}

inline StudyConfig read_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_study_config(in);
}

// ---------------------------------------------------------------------------
// Records

struct StudyRecord {
  int replicate = 0;
  int m = 0;
  int n = 0;
  Method method = Method::GAM;
  double bias_f = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> bias_sigma;  // absent for GAM
  double coverage_f = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  double runtime_ms = 0.0;
  std::vector<double> grid_error;  // f_hat - f on the grid, when requested
};

namespace detail {

inline void band_metrics(const FunctionBand& band, const TrueFunction& f, double f_offset,
                         StudyRecord& rec, bool keep_grid) {
  double bias = 0.0;
  int covered = 0;
  for (std::size_t g = 0; g < band.grid.size(); ++g) {
    const double truth = f.f(band.grid[g]) - f_offset;
    bias += band.estimate[g] - truth;
    if (band.lower[g] <= truth && truth <= band.upper[g]) ++covered;
    if (keep_grid) rec.grid_error.push_back(band.estimate[g] - truth);
  }
  rec.bias_f = bias / static_cast<double>(band.grid.size());
  rec.coverage_f = static_cast<double>(covered) / static_cast<double>(band.grid.size());
}

}  // namespace detail

/// Simulates one replicate and fits GAM, Laplace GAMM and PML to the same data.
/// Failures yield records with converged = false rather than exceptions.
inline std::vector<StudyRecord> run_replicate(const StudyConfig& cfg, int m, int n, int replicate) {
  using clock = std::chrono::steady_clock;
  const TrueFunction f_true = true_function(cfg.f_true);
  const auto grid = uniform_grid(cfg.grid_lower, cfg.grid_upper, cfg.grid_points);
  const Dataset data = simulate_dataset(m, n, cfg.sigma_true, f_true, cfg.family,
                                        substream_seed(cfg.seed, static_cast<std::uint64_t>(m),
                                                       static_cast<std::uint64_t>(n),
                                                       static_cast<std::uint64_t>(replicate)));
  std::vector<StudyRecord> out;
  for (Method meth : {Method::GAM, Method::GAMM, Method::PML}) {
    StudyRecord rec;
    rec.replicate = replicate;
    rec.m = m;
    rec.n = n;
    rec.method = meth;
    if (meth != Method::GAM) rec.bias_sigma = std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(rec));
  }

  std::optional<ModelFrame> frame;
  try {
    SmoothSpec spec{0, cfg.num_basis, cfg.knot_strategy, std::make_pair(0.0, 1.0)};
    frame.emplace(data, cfg.family, std::vector<SmoothSpec>{spec});
  } catch (const std::exception&) {
    return out;  // too few distinct covariate values etc.
  }

  Eigen::RowVectorXd centre;
  double f_offset = 0.0;
  if (cfg.center_f) {
    const auto xs = data.covariate(0);
    centre = smooth_centre(frame->design, 0, xs);
    for (double x : xs) f_offset += f_true.f(x);
    f_offset /= static_cast<double>(xs.size());
  }

  GamOptions gam_opt;
  gam_opt.logdet_mode = cfg.logdet_mode;
  std::optional<GamFit> gam;
  {
    const auto t0 = clock::now();
    try {
      gam = fit_gam(*frame, gam_opt);
      detail::band_metrics(wald_band(*gam, frame->design, grid, 0, centre), f_true,
                             f_offset, out[0], cfg.dump_grid);
      out[0].converged = gam->converged;
    } catch (const std::exception&) {
      out[0].converged = false;
    }
    out[0].runtime_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }
  {
    const auto t0 = clock::now();
    try {
      GammLaplaceOptions opt;
      opt.logdet_mode = cfg.logdet_mode;
      const auto fit = fit_gamm_laplace(*frame, opt);
      out[1].bias_sigma = fit.sigma_hat - cfg.sigma_true;
      if (fit.covariance) {
        detail::band_metrics(wald_band(fit, frame->design, grid, 0, centre), f_true,
                               f_offset, out[1], cfg.dump_grid);
      }
      out[1].converged = fit.converged && fit.covariance.has_value();
    } catch (const std::exception&) {
      out[1].converged = false;
    }
    out[1].runtime_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }
  if (gam) {
    const auto t0 = clock::now();
    try {
      PmlOptions opt;
      opt.quad_points = cfg.quad_points;
      const auto fit = fit_pml(*frame, *gam, opt);
      out[2].bias_sigma = fit.sigma_hat - cfg.sigma_true;
      if (fit.covariance) {
        detail::band_metrics(wald_band(fit, frame->design, grid, 0, centre), f_true,
                               f_offset, out[2], cfg.dump_grid);
      }
      out[2].converged = fit.converged && fit.covariance.has_value();
    } catch (const std::exception&) {
      out[2].converged = false;
    }
    out[2].runtime_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }
  return out;
}

/// Called with (m, n, completed cells, total cells) whenever all replicates of
/// a cell have finished.
using StudyProgress = std::function<void(int, int, std::size_t, std::size_t)>;

/// All (m, n, replicate) work items over a pool of cfg.threads workers.
/// Output order is (m, n, replicate, method) regardless of scheduling.
inline std::vector<StudyRecord> run_study(const StudyConfig& cfg, const StudyProgress& progress = {}) {
  cfg.validate();
  struct Item {
    int m, n, rep;
    std::size_t cell;
  };
  std::vector<Item> items;
  std::vector<std::pair<int, int>> cells;
  for (int m : cfg.m_grid)
    for (int n : cfg.n_grid) {
      for (int r = 1; r <= cfg.replicates; ++r) items.push_back({m, n, r, cells.size()});
      cells.emplace_back(m, n);
    }
  std::vector<std::vector<StudyRecord>> results(items.size());
  std::vector<int> remaining(cells.size(), cfg.replicates);
  std::size_t cells_done = 0;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= items.size()) return;
      const auto& it = items[idx];
      results[idx] = run_replicate(cfg, it.m, it.n, it.rep);
      std::lock_guard lock(mu);
      if (--remaining[it.cell] == 0) {
        ++cells_done;
        if (progress) progress(it.m, it.n, cells_done, cells.size());
      }
    }
  };
  const int nthreads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(items.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<StudyRecord> out;
  out.reserve(items.size() * 3);
  for (auto& r : results)
    for (auto& rec : r) out.push_back(std::move(rec));
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct SummaryStat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
};

struct SummaryRow {
  int m = 0;
  int n = 0;
  Method method = Method::GAM;
  int records = 0;
  int converged = 0;
  SummaryStat bias_f;
  SummaryStat bias_sigma;
  SummaryStat coverage_f;
  bool missing = true;  // no converged replicates

  double convergence_rate() const {
    return records ? static_cast<double>(converged) / records : 0.0;
  }
};

/// Mean and Monte Carlo standard error sd / sqrt(R) of finite values.
inline SummaryStat mean_se(const std::vector<double>& v) {
  SummaryStat s;
  if (v.empty()) return s;
  const double R = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= R;
  s.mean = mean;
  if (v.size() == 1) {
    s.se = 0.0;
    return s;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  s.se = std::sqrt(ss / (R - 1.0) / R);
  return s;
}

/// Summary keyed by (m, n, method), over converged replicates only.
inline std::vector<SummaryRow> aggregate(const std::vector<StudyRecord>& records) {
  if (records.empty()) throw ContractError("aggregate needs at least one record");
  std::map<std::tuple<int, int, int>, std::vector<const StudyRecord*>> cells;
  for (const auto& r : records) cells[{r.m, r.n, static_cast<int>(r.method)}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, recs] : cells) {
    SummaryRow row;
    row.m = std::get<0>(key);
    row.n = std::get<1>(key);
    row.method = static_cast<Method>(std::get<2>(key));
    row.records = static_cast<int>(recs.size());
    std::vector<double> bf, bs, cv;
    for (const auto* r : recs) {
      if (!r->converged) continue;
      ++row.converged;
      if (std::isfinite(r->bias_f)) bf.push_back(r->bias_f);
      if (r->bias_sigma && std::isfinite(*r->bias_sigma)) bs.push_back(*r->bias_sigma);
      if (std::isfinite(r->coverage_f)) cv.push_back(r->coverage_f);
    }
    row.missing = row.converged == 0;
    row.bias_f = mean_se(bf);
    row.bias_sigma = mean_se(bs);
    row.coverage_f = mean_se(cv);
    out.push_back(row);
  }
  return out;
}

inline const SummaryRow* find_summary(const std::vector<SummaryRow>& rows, int m, int n,
                                      Method method) {
  for (const auto& r : rows)
    if (r.m == m && r.n == n && r.method == method) return &r;
  return nullptr;
}

// ---------------------------------------------------------------------------
// CSV output

namespace detail {

inline void put_number(std::ostream& out, double v) {
  if (std::isfinite(v)) out << v;
}

}  // namespace detail

inline void write_records_csv(std::ostream& out, const std::vector<StudyRecord>& records,
                              bool with_runtime) {
  out << "replicate,m,n,method,bias_f,bias_sigma,coverage_f,converged,runtime_ms\n";
  out << std::setprecision(12);
  for (const auto& r : records) {
    out << r.replicate << ',' << r.m << ',' << r.n << ',' << method_name(r.method) << ',';
    detail::put_number(out, r.bias_f);
    out << ',';
    if (r.bias_sigma) detail::put_number(out, *r.bias_sigma);
    out << ',';
    detail::put_number(out, r.coverage_f);
    out << ',' << (r.converged ? 1 : 0) << ',';
    if (with_runtime) out << std::fixed << std::setprecision(3) << r.runtime_ms
                          << std::defaultfloat << std::setprecision(12);
    out << '\n';
  }
}

inline const char* kSummaryHeader =
    "m,n,method,records,converged,convergence_rate,bias_f_mean,bias_f_se,bias_sigma_mean,"
    "bias_sigma_se,coverage_f_mean,coverage_f_se";

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  out << std::setprecision(12);
  for (const auto& r : rows) {
    out << r.m << ',' << r.n << ',' << method_name(r.method) << ',' << r.records << ','
        << r.converged << ',' << r.convergence_rate();
    for (const auto* s : {&r.bias_f, &r.bias_sigma, &r.coverage_f}) {
      out << ',';
      detail::put_number(out, s->mean);
      out << ',';
      detail::put_number(out, s->se);
    }
    out << '\n';
  }
}

/// Per-gridpoint errors, one row per (record, grid point).
inline void write_grid_csv(std::ostream& out, const std::vector<StudyRecord>& records,
                           const StudyConfig& cfg) {
  const auto grid = uniform_grid(cfg.grid_lower, cfg.grid_upper, cfg.grid_points);
  out << "replicate,m,n,method,x,error\n" << std::setprecision(12);
  for (const auto& r : records)
    for (std::size_t g = 0; g < r.grid_error.size(); ++g) {
      out << r.replicate << ',' << r.m << ',' << r.n << ',' << method_name(r.method) << ','
          << grid[g] << ',' << r.grid_error[g] << '\n';
    }
}

}  // namespace pmlgamm
