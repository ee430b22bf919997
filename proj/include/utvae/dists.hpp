#pragma once

#include "utvae/diff/tape.hpp"

namespace utvae::dists {

using diff::Tensor;
using diff::Var;

// Added to softplus(raw) so a collapsed posterior cannot drive log(std) to -inf.
inline constexpr double kStdFloor = 1e-6;

// Diagonal Gaussian over the columns of a [batch, d] block.
struct GaussianDiag {
  Var mean;
  Var std;

  // std = softplus(raw_std) + kStdFloor.
  static GaussianDiag from_raw(Var mean, Var raw_std);
};

// Independent Bernoulli coordinates parameterized by logits.
struct BernoulliP {
  Var logit;

  Var prob() const;
};

// Standard normal prior over a d-dimensional latent.
struct StdNormalPrior {
  std::size_t dim = 1;
};

// Per-row log density, summed over coordinates: [batch, 1].
// Throws DomainError when any std is non-positive.
Var gaussian_log_prob(const GaussianDiag& g, Var x);
Var gaussian_log_prob(const GaussianDiag& g, const Tensor& x);

// Per-row y*logit - softplus(logit), summed over coordinates: [batch, 1].
// Throws DomainError when y has entries outside {0, 1}.
Var bernoulli_log_prob(const BernoulliP& b, const Tensor& y);

// Closed-form KL(g || N(0, I)) per row: [batch, 1].
Var kl_to_std_normal(const GaussianDiag& g);

// mean + std * noise. `noise` is drawn by the caller and carries no gradient.
Var reparam_sample(const GaussianDiag& g, const Tensor& noise);

}  // namespace utvae::dists
