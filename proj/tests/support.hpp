#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "utvae/datagen.hpp"
#include "utvae/networks.hpp"
#include "utvae/training.hpp"

namespace utvae::tsupport {

using diff::GradientMap;
using diff::ParameterSet;
using diff::Tensor;

// |a - n| / max(|a|, |n|, 1e-4)
inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
}

// Largest relative error between `grads` and central differences of `loss`
// over at most `per_param` randomly chosen entries of every parameter.
inline double fd_max_rel_error(ParameterSet& params, const std::function<double()>& loss, const GradientMap& grads,
                               std::mt19937_64& rng, std::size_t per_param = 6, double h = 1e-5) {
  double worst = 0.0;
  for (diff::Parameter& p : params) {
    auto& v = p.value().storage();
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_param, idx.size()));
    for (std::size_t i : idx) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = loss();
      v[i] = keep - h;
      const double down = loss();
      v[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_error(grads.at(p.id())[i], numeric));
    }
  }
  return worst;
}

inline nets::ArchConfig small_arch(std::size_t x_dim = 3, bool y_binary = true) {
  nets::ArchConfig a;
  a.x_dim = x_dim;
  a.x_binary.assign(x_dim, false);
  for (std::size_t j = 0; j < x_dim; j += 2) a.x_binary[j] = true;
  a.z_dim = 3;
  a.hidden_layers = 2;
  a.hidden_units = 8;
  a.y_binary = y_binary;
  return a;
}

// Random batch consistent with `arch`.
inline train::Batch random_batch(const nets::ArchConfig& arch, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  train::Batch b{Tensor::matrix(n, arch.x_dim), Tensor::matrix(n, 1), Tensor::matrix(n, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < arch.x_dim; ++j) b.x(i, j) = arch.x_binary[j] ? coin(rng) : normal(rng);
    b.t[i] = coin(rng);
    b.y[i] = arch.y_binary ? coin(rng) : normal(rng);
  }
  return b;
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 3.0);
  std::vector<double> w(n);
  for (double& v : w) v = u(rng);
  return w;
}

// Gradient-free model that answers counterfactual queries from the true
// synthetic process: z ~ p(z|x) through the noise, E[y|z,t] exact.
struct SyntheticOracleModel {
  data::SyntheticConfig cfg;

  std::size_t latent_dim() const { return 1; }
  bool ready_for_queries() const { return true; }
  Tensor treatment_prob(const Tensor& x) const { return Tensor::matrix(x.rows(), 1, 0.5); }
  Tensor aux_outcome_mean(const Tensor& x, const Tensor&) const { return Tensor::matrix(x.rows(), 1, 0.5); }
  Tensor sample_latent(const Tensor& x, const Tensor&, const Tensor&, const Tensor& noise) const {
    Tensor z = Tensor::matrix(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double u = 0.5 * std::erfc(-noise[i] / std::sqrt(2.0));
      z[i] = u < data::synthetic_posterior_z1(x(i, 0), cfg) ? 1.0 : 0.0;
    }
    return z;
  }
  Tensor outcome_mean(const Tensor& z, const Tensor& t) const {
    Tensor m = Tensor::matrix(z.rows(), 1);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      m[i] = data::synthetic_outcome_prob(static_cast<int>(t[i]), static_cast<int>(z[i]));
    }
    return m;
  }
};

}  // namespace utvae::tsupport
