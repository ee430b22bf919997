#include "utvae/eval.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "utvae/error.hpp"

namespace utvae::eval {

AteResult ate_from_ite(std::span<const double> ite_pred, std::span<const double> ite_true) {
  if (ite_pred.size() != ite_true.size() || ite_pred.empty()) {
    throw ValidationError("ate: prediction and oracle lengths differ or are empty");
  }
  AteResult r;
  for (std::size_t i = 0; i < ite_pred.size(); ++i) {
    r.ate_pred += ite_pred[i];
    r.ate_true += ite_true[i];
  }
  r.ate_pred /= static_cast<double>(ite_pred.size());
  r.ate_true /= static_cast<double>(ite_true.size());
  r.abs_err = std::abs(r.ate_pred - r.ate_true);
  return r;
}

PeheResult pehe_from_ite(std::span<const double> ite_pred, std::span<const double> ite_true) {
  if (ite_pred.size() != ite_true.size() || ite_pred.empty()) {
    throw ValidationError("pehe: prediction and oracle lengths differ or are empty");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < ite_pred.size(); ++i) {
    const double d = ite_pred[i] - ite_true[i];
    acc += d * d;
  }
  return {std::sqrt(acc / static_cast<double>(ite_pred.size()))};
}

const data::Oracle& require_oracle(const data::Dataset& ds) {
  if (!ds.oracle) throw ValidationError("evaluation needs oracle potential-outcome means");
  return *ds.oracle;
}

std::string propensity_source_name(PropensitySource s) {
  switch (s) {
    case PropensitySource::kOracleConfounder: return "oracle_z";
    case PropensitySource::kOracleProxy: return "oracle_x";
    case PropensitySource::kEstimated: return "estimated";
  }
  return "?";
}

PropensitySource parse_propensity_source(const std::string& s) {
  if (s == "oracle_z") return PropensitySource::kOracleConfounder;
  if (s == "oracle_x" || s == "oracle") return PropensitySource::kOracleProxy;
  if (s == "estimated") return PropensitySource::kEstimated;
  throw ValidationError("unknown propensity source '" + s + "' (oracle_x|oracle_z|estimated)");
}

IpwResult ipw_ate(std::span<const int> t, std::span<const double> y, std::span<const double> e,
                  PropensitySource source) {
  const std::size_t n = t.size();
  if (y.size() != n || e.size() != n || n == 0) throw ValidationError("ipw: input lengths differ or are empty");
  IpwResult r;
  r.source = source;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(e[i] > 0.0 && e[i] < 1.0)) {
      throw DomainError("ipw: propensity " + std::to_string(e[i]) + " at row " + std::to_string(i) +
                        " is outside (0, 1)");
    }
    if (t[i] == 1) {
      r.mu1_hat += y[i] / e[i];
    } else if (t[i] == 0) {
      r.mu0_hat += y[i] / (1.0 - e[i]);
    } else {
      throw ValidationError("ipw: treatment must be 0 or 1");
    }
  }
  r.mu1_hat /= static_cast<double>(n);
  r.mu0_hat /= static_cast<double>(n);
  r.ate_hat = r.mu1_hat - r.mu0_hat;
  return r;
}

IpwResult ipw_ate(const data::Dataset& ds, const propensity::PropensityEstimate& est) {
  return ipw_ate(ds.t, ds.y, est.e, PropensitySource::kEstimated);
}

double naive_difference(const data::Dataset& ds) {
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.t[i] == 1) {
      s1 += ds.y[i];
      ++n1;
    } else {
      s0 += ds.y[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) throw ValidationError("naive difference needs both treated and control rows");
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

std::vector<double> synthetic_confounder_propensity(const data::Dataset& ds, double alpha) {
  if (!ds.latent) throw ValidationError("confounder propensity needs the synthetic latent");
  std::vector<double> e;
  e.reserve(ds.size());
  for (int z : *ds.latent) e.push_back(alpha * z + (1.0 - alpha) * (1 - z));
  return e;
}

std::vector<double> synthetic_proxy_propensity(const data::Dataset& ds, const data::SyntheticConfig& cfg) {
  if (ds.dim() != 1) throw ValidationError("proxy propensity expects the 1-d synthetic proxy");
  std::vector<double> e;
  e.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double p1 = data::synthetic_posterior_z1(ds.x(i, 0), cfg);
    e.push_back(cfg.alpha * p1 + (1.0 - cfg.alpha) * (1.0 - p1));
  }
  return e;
}

std::string metric_csv_line(const MetricRow& row) {
  auto num = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  std::string line = row.dataset + ',' + row.objective + ',' + std::to_string(row.seed) + ',';
  if (!std::isnan(row.epsilon)) line += num(row.epsilon);
  return line + ',' + num(row.ate_err) + ',' + num(row.pehe) + ',' + num(row.runtime_s);
}

void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << kMetricHeader << '\n';
    for (const MetricRow& r : rows) out << metric_csv_line(r) << '\n';
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace utvae::eval
