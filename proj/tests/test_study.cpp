#include <cmath>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "pmlgamm/study.hpp"

using namespace pmlgamm;

namespace {

StudyConfig small_config() {
  StudyConfig cfg;
  cfg.m_grid = {10, 20};
  cfg.n_grid = {3};
  cfg.replicates = 2;
  return cfg;
}

std::string records_csv(const std::vector<StudyRecord>& recs, bool runtime = false) {
  std::ostringstream out;
  write_records_csv(out, recs, runtime);
  return out.str();
}

std::string config_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_study_config(in);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

StudyRecord rec(int m, Method meth, double bias_f, std::optional<double> bs, double cov, bool ok) {
  StudyRecord r;
  r.m = m;
  r.n = 3;
  r.method = meth;
  r.bias_f = bias_f;
  r.bias_sigma = bs;
  r.coverage_f = cov;
  r.converged = ok;
  return r;
}

}  // namespace

TEST(Simulate, ShapesAndRanges) {
  const Dataset d = simulate_dataset(7, 4, 1.0, true_function("sin2pi"), Family::Poisson, 3);
  EXPECT_EQ(d.num_groups(), 7u);
  EXPECT_EQ(d.num_rows(), 28u);
  for (const auto& g : d.groups())
    for (const auto& r : g.rows) {
      EXPECT_GE(r.x[0], 0.0);
      EXPECT_LT(r.x[0], 1.0);
      EXPECT_TRUE(valid_response(Family::Poisson, r.y));
    }
  EXPECT_THROW(simulate_dataset(0, 4, 1.0, true_function("zero"), Family::Poisson, 1), ConfigError);
  EXPECT_THROW(simulate_dataset(3, 4, -1.0, true_function("zero"), Family::Poisson, 1), ConfigError);
}

TEST(Simulate, GaussianZeroSigmaHasNoGroupEffect) {
  // y - f(x) is pure unit noise; group means of residuals should be small on average
  const Dataset d = simulate_dataset(400, 25, 0.0, true_function("zero"), Family::Gaussian, 5);
  double var_means = 0.0;
  for (const auto& g : d.groups()) {
    double s = 0.0;
    for (const auto& r : g.rows) s += r.y;
    const double mean = s / 25.0;
    var_means += mean * mean / 400.0;
  }
  EXPECT_NEAR(var_means, 1.0 / 25.0, 0.01);
}

TEST(Simulate, SeedsAreKeyedNotOrdered) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t m : {5, 10})
    for (std::uint64_t n : {3, 10})
      for (std::uint64_t r = 1; r <= 50; ++r) seen.insert(substream_seed(1, m, n, r));
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_EQ(substream_seed(9, 5, 3, 2), substream_seed(9, 5, 3, 2));
  EXPECT_NE(substream_seed(9, 5, 3, 2), substream_seed(10, 5, 3, 2));
}

TEST(RunStudy, RecordCountsAndOrder) {
  const auto recs = run_study(small_config());
  ASSERT_EQ(recs.size(), 2u * 1u * 2u * 3u);
  EXPECT_EQ(recs[0].m, 10);
  EXPECT_EQ(recs[0].replicate, 1);
  EXPECT_EQ(recs[0].method, Method::GAM);
  EXPECT_EQ(recs[2].method, Method::PML);
  EXPECT_EQ(recs.back().m, 20);
  for (const auto& r : recs) EXPECT_EQ(r.method == Method::GAM, !r.bias_sigma.has_value());
}

TEST(RunStudy, DeterministicAcrossThreadCounts) {
  auto cfg = small_config();
  cfg.threads = 1;
  const std::string a = records_csv(run_study(cfg));
  cfg.threads = 3;
  const std::string b = records_csv(run_study(cfg));
  EXPECT_EQ(a, b);
}

TEST(RunStudy, CentringChangesOnlyTheTarget) {
  auto cfg = small_config();
  cfg.m_grid = {20};
  cfg.replicates = 1;
  const auto plain = run_replicate(cfg, 20, 3, 1);
  cfg.center_f = true;
  const auto centred = run_replicate(cfg, 20, 3, 1);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(plain[k].bias_sigma.has_value(), centred[k].bias_sigma.has_value());
    if (plain[k].bias_sigma) {
      EXPECT_EQ(*plain[k].bias_sigma, *centred[k].bias_sigma);
    }
    EXPECT_NE(plain[k].bias_f, centred[k].bias_f);
  }
}

TEST(RecordsCsv, HeaderEmptyCellsAndRuntime) {
  const std::vector<StudyRecord> recs{rec(5, Method::GAM, 0.25, std::nullopt, 0.5, true),
                                      rec(5, Method::PML, -0.5, 0.125, 1.0, false)};
  const std::string csv = records_csv(recs);
  EXPECT_EQ(csv,
            "replicate,m,n,method,bias_f,bias_sigma,coverage_f,converged,runtime_ms\n"
            "0,5,3,GAM,0.25,,0.5,1,\n"
            "0,5,3,PML,-0.5,0.125,1,0,\n");
  EXPECT_NE(records_csv(recs, true).find(",1,0.000\n"), std::string::npos);
}

TEST(Aggregate, MeansAndMonteCarloErrorsOverConvergedOnly) {
  const std::vector<StudyRecord> recs{
      rec(5, Method::PML, 1.0, 0.5, 0.9, true), rec(5, Method::PML, 3.0, 1.5, 1.0, true),
      rec(5, Method::PML, 100.0, 100.0, 0.0, false), rec(5, Method::GAM, 2.0, std::nullopt, 0.4, true)};
  const auto rows = aggregate(recs);
  const auto* pml = find_summary(rows, 5, 3, Method::PML);
  ASSERT_NE(pml, nullptr);
  EXPECT_EQ(pml->records, 3);
  EXPECT_EQ(pml->converged, 2);
  EXPECT_DOUBLE_EQ(pml->bias_f.mean, 2.0);
  EXPECT_DOUBLE_EQ(pml->bias_f.se, 1.0);  // sd sqrt(2) over sqrt(2)
  EXPECT_DOUBLE_EQ(pml->bias_sigma.mean, 1.0);
  EXPECT_DOUBLE_EQ(pml->coverage_f.mean, 0.95);
  const auto* gam = find_summary(rows, 5, 3, Method::GAM);
  ASSERT_NE(gam, nullptr);
  EXPECT_EQ(gam->bias_f.se, 0.0);
  EXPECT_TRUE(std::isnan(gam->bias_sigma.mean));
  std::ostringstream out;
  write_summary_csv(out, rows);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "m,n,method,records,converged,convergence_rate,bias_f_mean,bias_f_se,bias_sigma_mean,"
            "bias_sigma_se,coverage_f_mean,coverage_f_se");
  EXPECT_NE(out.str().find("5,3,GAM,1,1,1,2,0,,,0.4,0\n"), std::string::npos);
  EXPECT_THROW(aggregate({}), ContractError);
}

TEST(StudyConfigParse, KeysAndDefaults) {
  std::istringstream in("# desk scale\nm_grid = 10, 50\nn_grid=3\nreplicates = 20  # smoke\n"
                        "family = bernoulli\nseed = 7\ncenter_f = true\n");
  const auto cfg = parse_study_config(in);
  EXPECT_EQ(cfg.m_grid, (std::vector<int>{10, 50}));
  EXPECT_EQ(cfg.n_grid, (std::vector<int>{3}));
  EXPECT_EQ(cfg.replicates, 20);
  EXPECT_EQ(cfg.family, Family::Bernoulli);
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_TRUE(cfg.seed_given);
  EXPECT_TRUE(cfg.center_f);
  EXPECT_EQ(cfg.quad_points, 9);
  EXPECT_EQ(cfg.grid_points, 100);
}

TEST(StudyConfigParse, ErrorsNameTheKey) {
  EXPECT_NE(config_error("replicates = many\n").find("'replicates'"), std::string::npos);
  EXPECT_NE(config_error("bogus = 1\n").find("'bogus'"), std::string::npos);
  EXPECT_NE(config_error("family = gamma\n").find("'family'"), std::string::npos);
  EXPECT_NE(config_error("m_grid = 5,x\n").find("'m_grid'"), std::string::npos);
  EXPECT_NE(config_error("just words\n").find("line 1"), std::string::npos);
  EXPECT_NE(config_error("grid_lower = 0.9\ngrid_upper = 0.1\n"), "");
}
