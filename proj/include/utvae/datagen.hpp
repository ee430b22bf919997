#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "utvae/diff/tensor.hpp"

namespace utvae::data {

using diff::Tensor;
using Rng = std::mt19937_64;

// How the proxy variance depends on the confounder.
//   kMixture: rho_z1^2 * z + rho_z0^2 * (1 - z)      -> 9 and 25 at the defaults
//   kLiteral: rho_z1^2 + rho_z0^2 * (1 - z)          -> 9 and 34 at the defaults
enum class VarianceForm { kMixture, kLiteral };

VarianceForm parse_variance_form(const std::string& s);
std::string variance_form_name(VarianceForm f);

struct SyntheticConfig {
  std::size_t n = 4000;
  double alpha = 0.75;
  double rho_z1 = 3.0;
  double rho_z0 = 5.0;
  std::uint64_t seed = 0;
  VarianceForm variance = VarianceForm::kMixture;

  void validate() const;
  double variance_given(int z) const;
};

// True conditional potential-outcome means per row.
struct Oracle {
  std::vector<double> mu0;
  std::vector<double> mu1;

  std::vector<double> ite() const;
};

// Both potential outcomes of a simulated row, drawn from one shared uniform.
struct PotentialOutcomes {
  std::vector<int> y0;
  std::vector<int> y1;
};

struct ColumnStats {
  std::size_t column = 0;  // index in the pre-normalization layout
  double mean = 0.0;
  double std = 1.0;
};

// Per-column standardization fitted on a training split.
struct Normalization {
  std::vector<ColumnStats> continuous;  // kept continuous columns
  std::vector<std::size_t> dropped;     // zero-variance continuous columns
  std::size_t source_dim = 0;
  double y_mean = 0.0;
  double y_std = 1.0;
  bool fitted = false;
};

struct Dataset {
  Tensor x;  // [n, d]
  std::vector<int> t;
  std::vector<double> y;
  bool y_binary = true;
  std::vector<bool> x_binary;  // per column
  std::optional<Oracle> oracle;
  std::optional<std::vector<int>> latent;  // synthetic confounder, for auditing
  std::optional<PotentialOutcomes> potential;
  std::optional<Normalization> normalization;

  std::size_t size() const { return t.size(); }
  std::size_t dim() const { return x.cols(); }
  Tensor t_column() const;
  Tensor y_column() const;

  // Rows in the given order.
  Dataset subset(const std::vector<std::size_t>& rows) const;
  // Throws ValidationError on inconsistent sizes or non-binary T (or Y when binary).
  void validate() const;
};

// Logistic function, exposed so tests share the DGP definition.
double logistic(double v);

// p(y = 1 | t, z) of the synthetic outcome model.
double synthetic_outcome_prob(int t, int z);

// p(z = 1 | x) by Bayes' rule with p(z) = 1/2.
double synthetic_posterior_z1(double x, const SyntheticConfig& cfg);

// Population ATE of the synthetic process, by enumerating z in {0, 1}.
double synthetic_population_ate();

// Synthetic confounder / 1-d proxy process:
//   z ~ B(0.5); t|z ~ B(alpha z + (1-alpha)(1-z)); x|z ~ N(z, var(z));
//   y|t,z ~ B(logistic(3 (z + 2 (2t - 1)))).
// The oracle holds mu_t(x) = sum_z p(y=1|t,z) p(z|x).
Dataset gen_synthetic(const SyntheticConfig& cfg);

// Writes columns z,t,x,y,mu0,mu1.
void write_synthetic_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_synthetic_csv(const std::filesystem::path& path);

// IHDP layout: t, y_factual, y_cfactual, mu0, mu1, x1..x25, comma separated,
// optional header. Columns x1..x6 are continuous, x7..x25 binary; a binary
// column coded {1,2} is shifted to {0,1}. `path` is either a CSV file or a
// directory holding ihdp_npci_<replicate>.csv.
Dataset load_ihdp(const std::filesystem::path& path, int replicate);
std::filesystem::path ihdp_replicate_path(const std::filesystem::path& dir, int replicate);

// Removes round(fraction * n_treated) treated rows chosen uniformly with `seed`.
Dataset remove_treated_fraction(const Dataset& ds, double fraction, std::uint64_t seed);

using Warn = std::function<void(const std::string&)>;

// Fits standardization of continuous covariates (and continuous y) on `train`.
// Zero-variance continuous columns are recorded as dropped and `warn` is called.
Normalization fit_normalization(const Dataset& train, const Warn& warn = {});
// Applies a fitted normalization. Oracle means stay on the original scale.
Dataset apply_normalization(const Dataset& ds, const Normalization& norm);
// fit + apply on the same data.
Dataset normalize(const Dataset& ds, const Warn& warn = {});

struct SplitSpec {
  // Either explicit counts (when train_count > 0) or fractions summing to 1.
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t test_count = 0;
  double train_frac = 0.63;
  double val_frac = 0.27;
  double test_frac = 0.10;
  int replicate = 0;
  std::uint64_t seed = 0;

  static SplitSpec counts(std::size_t train, std::size_t val, std::size_t test, std::uint64_t seed = 0);
  static SplitSpec fractions(double train, double val, double test, std::uint64_t seed = 0);
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Disjoint, exhaustive, seeded partition of 0..n-1. Counts must sum to n.
SplitIndices split_indices(std::size_t n, const SplitSpec& spec);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

Splits split(const Dataset& ds, const SplitSpec& spec);

}  // namespace utvae::data
