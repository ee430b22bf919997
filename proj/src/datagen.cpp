#include "utvae/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "utvae/error.hpp"

namespace utvae::data {

namespace {

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

int parse_binary(double v, const std::string& what, std::size_t line) {
  if (v == 0.0) return 0;
  if (v == 1.0) return 1;
  throw ValidationError(what + " must be 0 or 1 on line " + std::to_string(line) + ", got " + std::to_string(v));
}

}  // namespace

VarianceForm parse_variance_form(const std::string& s) {
  if (s == "mixture") return VarianceForm::kMixture;
  if (s == "literal") return VarianceForm::kLiteral;
  throw ValidationError("unknown variance form '" + s + "' (mixture|literal)");
}

std::string variance_form_name(VarianceForm f) { return f == VarianceForm::kMixture ? "mixture" : "literal"; }

void SyntheticConfig::validate() const {
  if (n == 0) throw ValidationError("synthetic: n must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("synthetic: alpha must lie in the open interval (0, 1), got " + std::to_string(alpha));
  }
  if (!(rho_z1 > 0.0 && rho_z0 > 0.0)) throw ValidationError("synthetic: rho values must be > 0");
}

double SyntheticConfig::variance_given(int z) const {
  const double a = rho_z1 * rho_z1;
  const double b = rho_z0 * rho_z0;
  if (variance == VarianceForm::kMixture) return z ? a : b;
  return z ? a : a + b;
}

std::vector<double> Oracle::ite() const {
  std::vector<double> out(mu0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu1[i] - mu0[i];
  return out;
}

Tensor Dataset::t_column() const {
  Tensor out = Tensor::matrix(t.size(), 1);
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
  return out;
}

Tensor Dataset::y_column() const { return Tensor::column(y); }

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  const std::size_t d = dim();
  out.x = Tensor::matrix(rows.size(), d);
  out.y_binary = y_binary;
  out.x_binary = x_binary;
  out.normalization = normalization;
  out.t.reserve(rows.size());
  out.y.reserve(rows.size());
  if (oracle) out.oracle.emplace();
  if (latent) out.latent.emplace();
  if (potential) out.potential.emplace();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    if (i >= size()) throw ValidationError("subset: row " + std::to_string(i) + " out of range");
    for (std::size_t j = 0; j < d; ++j) out.x(k, j) = x(i, j);
    out.t.push_back(t[i]);
    out.y.push_back(y[i]);
    if (oracle) {
      out.oracle->mu0.push_back(oracle->mu0[i]);
      out.oracle->mu1.push_back(oracle->mu1[i]);
    }
    if (latent) out.latent->push_back((*latent)[i]);
    if (potential) {
      out.potential->y0.push_back(potential->y0[i]);
      out.potential->y1.push_back(potential->y1[i]);
    }
  }
  return out;
}

void Dataset::validate() const {
  const std::size_t n = t.size();
  if (y.size() != n || x.rows() != n || x.rank() != 2) throw ValidationError("dataset: row counts disagree");
  if (x_binary.size() != x.cols()) throw ValidationError("dataset: x_binary mask length mismatch");
  for (int v : t)
    if (v != 0 && v != 1) throw ValidationError("dataset: treatment must be 0 or 1");
  if (y_binary) {
    for (double v : y)
      if (v != 0.0 && v != 1.0) throw ValidationError("dataset: binary outcome must be 0 or 1");
  }
  if (oracle && (oracle->mu0.size() != n || oracle->mu1.size() != n)) {
    throw ValidationError("dataset: oracle length mismatch");
  }
}

// --- synthetic ---------------------------------------------------------------

double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double synthetic_outcome_prob(int t, int z) { return logistic(3.0 * (z + 2.0 * (2.0 * t - 1.0))); }

double synthetic_posterior_z1(double x, const SyntheticConfig& cfg) {
  const double l1 = log_normal_pdf(x, 1.0, cfg.variance_given(1));
  const double l0 = log_normal_pdf(x, 0.0, cfg.variance_given(0));
  return logistic(l1 - l0);
}

double synthetic_population_ate() {
  double ate = 0.0;
  for (int z = 0; z <= 1; ++z) ate += 0.5 * (synthetic_outcome_prob(1, z) - synthetic_outcome_prob(0, z));
  return ate;
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds;
  ds.x = Tensor::matrix(cfg.n, 1);
  ds.x_binary = {false};
  ds.y_binary = true;
  ds.oracle.emplace();
  ds.latent.emplace();
  ds.potential.emplace();
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const int z = unif(rng) < 0.5 ? 1 : 0;
    const double pt = cfg.alpha * z + (1.0 - cfg.alpha) * (1 - z);
    const int t = unif(rng) < pt ? 1 : 0;
    const double x = z + std::sqrt(cfg.variance_given(z)) * normal(rng);
    const double u = unif(rng);
    const int y0 = u < synthetic_outcome_prob(0, z) ? 1 : 0;
    const int y1 = u < synthetic_outcome_prob(1, z) ? 1 : 0;

    const double p1 = synthetic_posterior_z1(x, cfg);
    ds.x(i, 0) = x;
    ds.t.push_back(t);
    ds.y.push_back(t ? y1 : y0);
    ds.latent->push_back(z);
    ds.potential->y0.push_back(y0);
    ds.potential->y1.push_back(y1);
    ds.oracle->mu0.push_back(synthetic_outcome_prob(0, 1) * p1 + synthetic_outcome_prob(0, 0) * (1.0 - p1));
    ds.oracle->mu1.push_back(synthetic_outcome_prob(1, 1) * p1 + synthetic_outcome_prob(1, 0) * (1.0 - p1));
  }
  return ds;
}

void write_synthetic_csv(const Dataset& ds, const std::filesystem::path& path) {
  if (!ds.latent || !ds.oracle || ds.dim() != 1) {
    throw ValidationError("write_synthetic_csv: dataset lacks the synthetic columns");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "z,t,x,y,mu0,mu1\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << (*ds.latent)[i] << ',' << ds.t[i] << ',' << ds.x(i, 0) << ',' << ds.y[i] << ',' << ds.oracle->mu0[i]
        << ',' << ds.oracle->mu1[i] << '\n';
  }
  if (!out.flush()) throw Error("write failed for " + path.string());
}

Dataset read_synthetic_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (split_fields(line, ',') != std::vector<std::string>{"z", "t", "x", "y", "mu0", "mu1"}) {
    throw ValidationError(path.string() + ": expected header z,t,x,y,mu0,mu1");
  }
  Dataset ds;
  ds.x_binary = {false};
  ds.y_binary = true;
  ds.oracle.emplace();
  ds.latent.emplace();
  std::vector<double> xs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_fields(line, ',');
    if (f.size() != 6) throw ValidationError(path.string() + ": line " + std::to_string(lineno) + " has " +
                                             std::to_string(f.size()) + " columns, expected 6");
    double v[6];
    for (int k = 0; k < 6; ++k) {
      if (!parse_double(f[k], v[k])) {
        throw ValidationError(path.string() + ": malformed value on line " + std::to_string(lineno));
      }
    }
    ds.latent->push_back(parse_binary(v[0], "z", lineno));
    ds.t.push_back(parse_binary(v[1], "t", lineno));
    xs.push_back(v[2]);
    ds.y.push_back(parse_binary(v[3], "y", lineno));
    ds.oracle->mu0.push_back(v[4]);
    ds.oracle->mu1.push_back(v[5]);
  }
  const std::size_t rows = xs.size();
  ds.x = Tensor(diff::Shape{rows, 1}, std::move(xs));
  ds.validate();
  return ds;
}

// --- IHDP ------------------------------------------------------------------------

std::filesystem::path ihdp_replicate_path(const std::filesystem::path& dir, int replicate) {
  return dir / ("ihdp_npci_" + std::to_string(replicate) + ".csv");
}

Dataset load_ihdp(const std::filesystem::path& path, int replicate) {
  constexpr std::size_t kCovariates = 25;
  constexpr std::size_t kContinuous = 6;
  constexpr std::size_t kColumns = 5 + kCovariates;
  const std::filesystem::path file =
      std::filesystem::is_directory(path) ? ihdp_replicate_path(path, replicate) : path;
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open IHDP file " + file.string());

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const char sep = line.find(',') != std::string::npos ? ',' : ' ';
    auto f = split_fields(line, sep);
    if (sep == ' ') std::erase(f, std::string{});
    double first = 0.0;
    if (rows.empty() && !f.empty() && !parse_double(f[0], first)) continue;  // header
    if (f.size() != kColumns) {
      throw ValidationError(file.string() + ": line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                            " columns, expected " + std::to_string(kColumns));
    }
    std::vector<double> row(kColumns);
    for (std::size_t k = 0; k < kColumns; ++k) {
      if (!parse_double(f[k], row[k])) {
        throw ValidationError(file.string() + ": malformed value '" + f[k] + "' on line " + std::to_string(lineno));
      }
    }
    parse_binary(row[0], "treatment", lineno);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(file.string() + ": no data rows");

  const std::size_t n = rows.size();
  Dataset ds;
  ds.y_binary = false;
  ds.x = Tensor::matrix(n, kCovariates);
  ds.x_binary.assign(kCovariates, true);
  for (std::size_t j = 0; j < kContinuous; ++j) ds.x_binary[j] = false;
  ds.oracle.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    ds.t.push_back(static_cast<int>(rows[i][0]));
    ds.y.push_back(rows[i][1]);
    ds.oracle->mu0.push_back(rows[i][3]);
    ds.oracle->mu1.push_back(rows[i][4]);
    for (std::size_t j = 0; j < kCovariates; ++j) ds.x(i, j) = rows[i][5 + j];
  }
  for (std::size_t j = kContinuous; j < kCovariates; ++j) {
    std::set<double> values;
    for (std::size_t i = 0; i < n; ++i) values.insert(ds.x(i, j));
    const bool zero_one = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
    const bool one_two = std::all_of(values.begin(), values.end(), [](double v) { return v == 1.0 || v == 2.0; });
    if (one_two && !zero_one) {
      for (std::size_t i = 0; i < n; ++i) ds.x(i, j) -= 1.0;
    } else if (!zero_one) {
      throw ValidationError(file.string() + ": covariate x" + std::to_string(j + 1) + " is not binary");
    }
  }
  ds.validate();
  return ds;
}

Dataset remove_treated_fraction(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("treated removal fraction must be in [0, 1)");
  std::vector<std::size_t> treated;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.t[i] == 1) treated.push_back(i);
  Rng rng(seed);
  std::shuffle(treated.begin(), treated.end(), rng);
  const auto drop = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(treated.size())));
  std::vector<bool> removed(ds.size(), false);
  for (std::size_t k = 0; k < drop; ++k) removed[treated[k]] = true;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!removed[i]) keep.push_back(i);
  return ds.subset(keep);
}

// --- normalization -------------------------------------------------------------------

Normalization fit_normalization(const Dataset& train, const Warn& warn) {
  Normalization norm;
  norm.source_dim = train.dim();
  const std::size_t n = train.size();
  if (n == 0) throw ValidationError("normalize: empty dataset");
  for (std::size_t j = 0; j < train.dim(); ++j) {
    if (train.x_binary[j]) continue;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += train.x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (train.x(i, j) - mean) * (train.x(i, j) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (!(sd > 1e-12)) {
      norm.dropped.push_back(j);
      if (warn) warn("dropping zero-variance covariate column " + std::to_string(j));
      continue;
    }
    norm.continuous.push_back({j, mean, sd});
  }
  if (!train.y_binary) {
    double mean = 0.0;
    for (double v : train.y) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : train.y) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    norm.y_mean = mean;
    norm.y_std = sd > 1e-12 ? sd : 1.0;
  }
  norm.fitted = true;
  return norm;
}

Dataset apply_normalization(const Dataset& ds, const Normalization& norm) {
  if (!norm.fitted) throw ValidationError("normalize: normalization was not fitted");
  if (ds.dim() != norm.source_dim) throw ValidationError("normalize: column count differs from the fitted data");
  std::vector<bool> drop(ds.dim(), false);
  for (std::size_t j : norm.dropped) drop[j] = true;
  std::vector<const ColumnStats*> stats(ds.dim(), nullptr);
  for (const ColumnStats& s : norm.continuous) stats[s.column] = &s;

  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < ds.dim(); ++j)
    if (!drop[j]) kept.push_back(j);

  Dataset out = ds;
  out.x = Tensor::matrix(ds.size(), kept.size());
  out.x_binary.clear();
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t j = kept[k];
    out.x_binary.push_back(ds.x_binary[j]);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double v = ds.x(i, j);
      out.x(i, k) = stats[j] ? (v - stats[j]->mean) / stats[j]->std : v;
    }
  }
  if (!ds.y_binary) {
    for (double& v : out.y) v = (v - norm.y_mean) / norm.y_std;
  }
  out.normalization = norm;
  return out;
}

Dataset normalize(const Dataset& ds, const Warn& warn) { return apply_normalization(ds, fit_normalization(ds, warn)); }

// --- splits ---------------------------------------------------------------------------

SplitSpec SplitSpec::counts(std::size_t train, std::size_t val, std::size_t test, std::uint64_t seed) {
  SplitSpec s;
  s.train_count = train;
  s.val_count = val;
  s.test_count = test;
  s.seed = seed;
  return s;
}

SplitSpec SplitSpec::fractions(double train, double val, double test, std::uint64_t seed) {
  SplitSpec s;
  s.train_frac = train;
  s.val_frac = val;
  s.test_frac = test;
  s.seed = seed;
  return s;
}

SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  if (spec.train_count > 0) {
    n_train = spec.train_count;
    n_val = spec.val_count;
    n_test = spec.test_count;
    if (n_train + n_val + n_test != n) {
      throw ValidationError("split: counts " + std::to_string(n_train) + "+" + std::to_string(n_val) + "+" +
                            std::to_string(n_test) + " do not match " + std::to_string(n) + " rows");
    }
  } else {
    const double total = spec.train_frac + spec.val_frac + spec.test_frac;
    if (spec.train_frac <= 0.0 || spec.val_frac < 0.0 || spec.test_frac < 0.0 || std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("split: fractions must be non-negative and sum to 1");
    }
    n_train = static_cast<std::size_t>(std::floor(spec.train_frac * static_cast<double>(n)));
    n_val = static_cast<std::size_t>(std::floor(spec.val_frac * static_cast<double>(n)));
    n_test = n - n_train - n_val;
    if (n_train == 0) throw ValidationError("split: training split would be empty");
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(spec.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(spec.replicate));
  std::shuffle(perm.begin(), perm.end(), rng);
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return out;
}

Splits split(const Dataset& ds, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds.size(), spec);
  return Splits{ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

}  // namespace utvae::data
