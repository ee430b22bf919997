#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "support.hpp"
#include "utvae/eval.hpp"

using namespace utvae;
using namespace utvae::eval;
namespace tu = utvae::tsupport;
using diff::Tensor;

namespace {

constexpr double kTrueAte = 0.973753;

data::SyntheticConfig synth(std::size_t n, double alpha, std::uint64_t seed) {
  data::SyntheticConfig c;
  c.n = n;
  c.alpha = alpha;
  c.seed = seed;
  return c;
}

// Answers every query with the same outcome mean, whatever the arm.
struct ConstantModel {
  std::size_t latent_dim() const { return 1; }
  bool ready_for_queries() const { return true; }
  Tensor treatment_prob(const Tensor& x) const { return Tensor::matrix(x.rows(), 1, 0.5); }
  Tensor aux_outcome_mean(const Tensor& x, const Tensor&) const { return Tensor::matrix(x.rows(), 1, 0.5); }
  Tensor sample_latent(const Tensor& x, const Tensor&, const Tensor&, const Tensor&) const {
    return Tensor::matrix(x.rows(), 1);
  }
  Tensor outcome_mean(const Tensor& z, const Tensor&) const { return Tensor::matrix(z.rows(), 1, 0.3); }
};

}  // namespace

TEST(Metrics, AteFromIte) {
  const std::vector<double> pred{1.0, 2.0, 3.0}, truth{0.5, 0.5, 2.0};
  const auto r = ate_from_ite(pred, truth);
  EXPECT_DOUBLE_EQ(r.ate_pred, 2.0);
  EXPECT_DOUBLE_EQ(r.ate_true, 1.0);
  EXPECT_DOUBLE_EQ(r.abs_err, 1.0);
  EXPECT_THROW(ate_from_ite(pred, std::vector<double>{1.0}), ValidationError);
  EXPECT_THROW(ate_from_ite(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST(Metrics, PeheExamples) {
  const std::vector<double> truth{0.1, -0.4, 0.9, 0.3};
  EXPECT_EQ(pehe_from_ite(truth, truth).pehe, 0.0);
  std::vector<double> shifted = truth;
  for (double& v : shifted) v += 0.5;
  EXPECT_NEAR(pehe_from_ite(shifted, truth).pehe, 0.5, 1e-15);
  EXPECT_NEAR(pehe_from_ite(std::vector<double>{1.0, -1.0}, std::vector<double>{0.0, 0.0}).pehe, 1.0, 1e-15);
}

TEST(Metrics, PeheDominatesAteError) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(1 + trial % 17), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = normal(rng);
      b[i] = normal(rng) + (trial % 3);
    }
    const double pehe = pehe_from_ite(a, b).pehe;
    const double err = ate_from_ite(a, b).abs_err;
    EXPECT_GE(pehe + 1e-12, err);
    EXPECT_GE(err, 0.0);
  }
}

TEST(Metrics, RequireOracle) {
  data::Dataset ds;
  EXPECT_THROW(require_oracle(ds), ValidationError);
}

TEST(ModelMetrics, ConstantModelMissesByTheTrueAte) {
  const auto ds = data::gen_synthetic(synth(1000, 0.75, 2));
  std::mt19937_64 rng(3);
  const auto m = model_metrics(ConstantModel{}, ds, {.mc_samples = 10}, rng);
  EXPECT_EQ(m.ate.ate_pred, 0.0);
  EXPECT_NEAR(m.ate.abs_err, kTrueAte, 0.02);
  EXPECT_GE(m.pehe.pehe, m.ate.abs_err);
}

TEST(ModelMetrics, OracleModelIsAccurate) {
  const auto cfg = synth(1000, 0.75, 4);
  const auto ds = data::gen_synthetic(cfg);
  std::mt19937_64 rng(5);
  const auto r = model_ate(tu::SyntheticOracleModel{cfg}, ds, {.mc_samples = 100}, rng);
  EXPECT_LT(r.abs_err, 0.01);
  EXPECT_NEAR(r.ate_true, kTrueAte, 0.02);
}

TEST(ModelMetrics, InvariantToRowOrder) {
  const auto ds = data::gen_synthetic(synth(300, 0.75, 6));
  std::vector<std::size_t> rev(ds.size());
  std::iota(rev.begin(), rev.end(), 0);
  std::reverse(rev.begin(), rev.end());
  const auto flipped = ds.subset(rev);
  // The constant model ignores its noise, so the comparison is exact up to summation order.
  std::mt19937_64 r1(7), r2(7);
  const auto a = model_ate(ConstantModel{}, ds, {.mc_samples = 3}, r1);
  const auto b = model_ate(ConstantModel{}, flipped, {.mc_samples = 3}, r2);
  EXPECT_NEAR(a.abs_err, b.abs_err, 1e-12);
  // A stochastic model's error is order-invariant up to Monte Carlo noise.
  const auto cfg = synth(300, 0.75, 6);
  std::mt19937_64 r3(8), r4(9);
  const auto c = model_ate(tu::SyntheticOracleModel{cfg}, ds, {.mc_samples = 400}, r3);
  const auto d = model_ate(tu::SyntheticOracleModel{cfg}, flipped, {.mc_samples = 400}, r4);
  EXPECT_NEAR(c.ate_pred, d.ate_pred, 0.01);
  EXPECT_NEAR(c.ate_true, d.ate_true, 1e-12);
}

TEST(ModelMetrics, DeterministicGivenSeedAndSampleCount) {
  const auto ds = data::normalize(data::gen_synthetic(synth(200, 0.75, 10)));
  nets::ArchConfig arch = tu::small_arch(1, true);
  arch.x_binary = {false};
  nets::CevaeModel m(arch, 11);
  m.mark_trained();
  std::mt19937_64 r1(12), r2(12);
  const auto a = model_metrics(m, ds, {.mc_samples = 7}, r1);
  const auto b = model_metrics(m, ds, {.mc_samples = 7}, r2);
  EXPECT_EQ(a.ate.abs_err, b.ate.abs_err);
  EXPECT_EQ(a.pehe.pehe, b.pehe.pehe);
}

TEST(Ipw, FourPointWorldByEnumeration) {
  // x in {a, b} with p(a) = 1/2, e(a) = 1/4, e(b) = 3/4. Rows are replicated in
  // proportion to p(x, t), so the empirical means are exact expectations.
  const double y1[2] = {2.0, 5.0}, y0[2] = {1.0, -1.0}, e_of[2] = {0.25, 0.75};
  const int reps[2][2] = {{3, 1}, {1, 3}};  // [x][t]
  std::vector<int> t;
  std::vector<double> y, e;
  for (int x = 0; x < 2; ++x)
    for (int tt = 0; tt < 2; ++tt)
      for (int k = 0; k < reps[x][tt]; ++k) {
        t.push_back(tt);
        y.push_back(tt ? y1[x] : y0[x]);
        e.push_back(e_of[x]);
      }
  const auto r = ipw_ate(t, y, e, PropensitySource::kOracleProxy);
  double sum_y1 = 0.0, sum_y0 = 0.0;
  for (int x = 0; x < 2; ++x) {
    const double px = 0.5;
    sum_y1 += px * e_of[x] * y1[x] / e_of[x];
    sum_y0 += px * (1 - e_of[x]) * y0[x] / (1 - e_of[x]);
  }
  EXPECT_NEAR(sum_y1, 0.5 * (y1[0] + y1[1]), 1e-12);
  EXPECT_NEAR(r.mu1_hat, 0.5 * (y1[0] + y1[1]), 1e-12);
  EXPECT_NEAR(r.mu0_hat, 0.5 * (y0[0] + y0[1]), 1e-12);
  EXPECT_NEAR(r.mu0_hat, sum_y0, 1e-12);
  EXPECT_NEAR(r.ate_hat, r.mu1_hat - r.mu0_hat, 1e-15);
  EXPECT_EQ(r.source, PropensitySource::kOracleProxy);
}

TEST(Ipw, BalancedRandomizationIsDifferenceInMeans) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal;
  const std::size_t n = 400;
  std::vector<int> t(n);
  std::vector<double> y(n), e(n, 0.5);
  double s1 = 0, s0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = i % 2;
    y[i] = normal(rng) + t[i];
    (t[i] ? s1 : s0) += y[i];
  }
  const auto r = ipw_ate(t, y, e, PropensitySource::kEstimated);
  EXPECT_NEAR(r.ate_hat, 2 * s1 / n - 2 * s0 / n, 1e-12);
  EXPECT_NEAR(r.ate_hat, s1 / (n / 2) - s0 / (n / 2), 1e-12);
}

TEST(Ipw, RejectsDegeneratePropensities) {
  const std::vector<int> t{1, 0};
  const std::vector<double> y{1.0, 0.0};
  EXPECT_THROW(ipw_ate(t, y, std::vector<double>{1.0, 0.5}, PropensitySource::kEstimated), DomainError);
  EXPECT_THROW(ipw_ate(t, y, std::vector<double>{0.5, 0.0}, PropensitySource::kEstimated), DomainError);
  EXPECT_THROW(ipw_ate(t, y, std::vector<double>{0.5}, PropensitySource::kEstimated), ValidationError);
}

TEST(Ipw, OracleProxyPropensityRecoversTrueAte) {
  const auto cfg = synth(100000, 0.75, 14);
  const auto ds = data::gen_synthetic(cfg);
  const auto e = synthetic_proxy_propensity(ds, cfg);
  const auto r = ipw_ate(ds.t, ds.y, e, PropensitySource::kOracleProxy);
  EXPECT_NEAR(r.ate_hat, kTrueAte, 0.02);
}

TEST(Ipw, ProxyPropensityMarginalizesConfounder) {
  const auto cfg = synth(50, 0.75, 15);
  const auto ds = data::gen_synthetic(cfg);
  const auto e = synthetic_proxy_propensity(ds, cfg);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double p1 = data::synthetic_posterior_z1(ds.x(i, 0), cfg);
    EXPECT_NEAR(e[i], 0.75 * p1 + 0.25 * (1 - p1), 1e-15);
  }
  const auto ez = synthetic_confounder_propensity(ds, 0.75);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ez[i], (*ds.latent)[i] ? 0.75 : 0.25);
}

TEST(Ipw, OracleBeatsNaiveUnderStrongConfounding) {
  const auto cfg = synth(100000, 0.9, 16);
  const auto ds = data::gen_synthetic(cfg);
  const auto r = ipw_ate(ds.t, ds.y, synthetic_confounder_propensity(ds, 0.9), PropensitySource::kOracleConfounder);
  const double naive = naive_difference(ds);
  EXPECT_LT(std::abs(r.ate_hat - kTrueAte), std::abs(naive - kTrueAte));
}

TEST(Ipw, EstimatedPropensityOverload) {
  const auto ds = data::normalize(data::gen_synthetic(synth(3000, 0.75, 17)));
  const propensity::BallTree tree(ds.x);
  const auto est = propensity::estimate_propensity(tree, ds.t, {});
  const auto r = ipw_ate(ds, est);
  EXPECT_EQ(r.source, PropensitySource::kEstimated);
  EXPECT_TRUE(std::isfinite(r.ate_hat));
  EXPECT_EQ(r.ate_hat, ipw_ate(ds.t, ds.y, est.e, PropensitySource::kEstimated).ate_hat);
}

TEST(Ipw, SourceNames) {
  for (auto s : {PropensitySource::kOracleConfounder, PropensitySource::kOracleProxy, PropensitySource::kEstimated}) {
    EXPECT_EQ(parse_propensity_source(propensity_source_name(s)), s);
  }
  EXPECT_THROW(parse_propensity_source("guess"), ValidationError);
}

TEST(MetricCsv, HeaderAndRows) {
  MetricRow row{"synthetic", "utvae", 3, 1.5, 0.0125, 0.25, 12.5};
  EXPECT_EQ(metric_csv_line(row), "synthetic,utvae,3,1.5,0.0125,0.25,12.5");
  MetricRow cev{"ihdp", "cevae", 1};
  EXPECT_EQ(metric_csv_line(cev).substr(0, 14), "ihdp,cevae,1,,");
  const auto path = std::filesystem::temp_directory_path() / "utvae_test_metrics.csv";
  write_metric_csv({row, cev}, path);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, kMetricHeader);
  std::filesystem::remove(path);
}
