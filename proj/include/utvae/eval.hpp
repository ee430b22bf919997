#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "utvae/datagen.hpp"
#include "utvae/networks.hpp"
#include "utvae/propensity.hpp"

namespace utvae::eval {

using nets::CfQueryConfig;
using Rng = std::mt19937_64;

struct AteResult {
  double ate_pred = 0.0;
  double ate_true = 0.0;
  double abs_err = 0.0;
};

struct PeheResult {
  double pehe = 0.0;
};

// Population ATE error of predicted per-row effects against true ones.
AteResult ate_from_ite(std::span<const double> ite_pred, std::span<const double> ite_true);
// Root mean square of per-row effect errors.
PeheResult pehe_from_ite(std::span<const double> ite_pred, std::span<const double> ite_true);

// Throws ValidationError when the dataset carries no oracle.
const data::Oracle& require_oracle(const data::Dataset& ds);

struct EffectMetrics {
  AteResult ate;
  PeheResult pehe;
  nets::CounterfactualEstimate estimate;
};

// ATE and PEHE from one counterfactual pass over the rows of `ds`.
template <nets::CounterfactualModel M>
EffectMetrics model_metrics(const M& model, const data::Dataset& ds, const CfQueryConfig& cfg, Rng& rng) {
  const data::Oracle& oracle = require_oracle(ds);
  EffectMetrics m;
  m.estimate = nets::counterfactual_outcomes(model, ds.x, cfg, rng);
  const auto pred = m.estimate.ite();
  const auto truth = oracle.ite();
  m.ate = ate_from_ite(pred, truth);
  m.pehe = pehe_from_ite(pred, truth);
  return m;
}

template <nets::CounterfactualModel M>
AteResult model_ate(const M& model, const data::Dataset& ds, const CfQueryConfig& cfg, Rng& rng) {
  return model_metrics(model, ds, cfg, rng).ate;
}

template <nets::CounterfactualModel M>
PeheResult model_pehe(const M& model, const data::Dataset& ds, const CfQueryConfig& cfg, Rng& rng) {
  return model_metrics(model, ds, cfg, rng).pehe;
}

enum class PropensitySource {
  kOracleConfounder,  // p(T=1|z), needs the latent
  kOracleProxy,       // p(T=1|x) with z marginalized by Bayes' rule
  kEstimated,         // epsilon-ball estimate
};

std::string propensity_source_name(PropensitySource s);
PropensitySource parse_propensity_source(const std::string& s);

struct IpwResult {
  double mu1_hat = 0.0;
  double mu0_hat = 0.0;
  double ate_hat = 0.0;
  PropensitySource source = PropensitySource::kEstimated;
};

// mu1 = mean(T Y / e), mu0 = mean((1-T) Y / (1-e)).
// Throws DomainError for a propensity outside the open interval (0, 1).
IpwResult ipw_ate(std::span<const int> t, std::span<const double> y, std::span<const double> e,
                  PropensitySource source);
IpwResult ipw_ate(const data::Dataset& ds, const propensity::PropensityEstimate& est);

// Unadjusted difference of treated and control outcome means.
double naive_difference(const data::Dataset& ds);

// alpha z + (1 - alpha)(1 - z) per row. Needs the synthetic latent.
std::vector<double> synthetic_confounder_propensity(const data::Dataset& ds, double alpha);
// alpha p(z=1|x) + (1 - alpha) p(z=0|x) per row, from raw (unnormalized) x.
std::vector<double> synthetic_proxy_propensity(const data::Dataset& ds, const data::SyntheticConfig& cfg);

struct MetricRow {
  std::string dataset;
  std::string objective;
  std::uint64_t seed = 0;
  double epsilon = std::nan("");
  double ate_err = 0.0;
  double pehe = 0.0;
  double runtime_s = 0.0;
};

inline constexpr const char* kMetricHeader = "dataset,objective,seed,epsilon,ate_err,pehe,runtime_s";
std::string metric_csv_line(const MetricRow& row);
void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

}  // namespace utvae::eval
