#pragma once

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "utvae/diff/tape.hpp"
#include "utvae/dists.hpp"
#include "utvae/error.hpp"

namespace utvae::nets {

using diff::Activation;
using diff::ParamGroup;
using diff::Tensor;
using diff::Var;
using Rng = std::mt19937_64;

struct ArchConfig {
  std::size_t x_dim = 1;
  std::vector<bool> x_binary = {false};  // Bernoulli head if true, Gaussian otherwise
  std::size_t z_dim = 5;
  std::size_t hidden_layers = 3;
  std::size_t hidden_units = 200;
  bool y_binary = true;
  Activation activation = Activation::kElu;

  // Throws ValidationError on a broken invariant.
  void validate() const;

  std::vector<std::size_t> binary_columns() const;
  std::vector<std::size_t> continuous_columns() const;
};

// Affine map from the model's (standardized) outcome scale to the scale the
// data was reported on.
struct OutcomeScale {
  double mean = 0.0;
  double std = 1.0;
};

// Which parameter groups are differentiable on a tape.
struct LiveGroups {
  bool generative = true;
  bool inference = true;
  bool auxiliary = true;

  bool contains(ParamGroup g) const;
  static LiveGroups all() { return {}; }
  static LiveGroups none() { return {false, false, false}; }
  static LiveGroups only(ParamGroup g);
};

// Puts model parameters on a tape, once each. Parameters outside the live
// groups are entered as constants, which blocks their gradients.
class Binding {
 public:
  Binding(diff::Tape& tape, const diff::ParameterSet& params, LiveGroups live = LiveGroups::all());

  Var operator()(std::size_t param_index);
  diff::Tape& tape() { return tape_; }
  Var constant(Tensor t) { return tape_.constant(std::move(t)); }

 private:
  diff::Tape& tape_;
  const diff::ParameterSet& params_;
  LiveGroups live_;
  std::vector<std::size_t> node_;  // tape node per parameter, npos when unbound
};

// Fully connected stack. widths = {in, h1, ..., out}; every layer but the
// last is followed by the activation, the last one too if activate_last.
// A widths vector of length 1 is the identity.
class Mlp {
 public:
  struct Layer {
    std::size_t weight;  // index into the ParameterSet, [in, out]
    std::size_t bias;    // [1, out]
  };

  Mlp() = default;
  Mlp(diff::ParameterSet& params, const std::string& prefix, ParamGroup group,
      std::vector<std::size_t> widths, bool activate_last, Rng& rng);

  Var forward(Binding& bind, Var input, Activation act) const;

  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<std::size_t> widths_{0};
  std::vector<Layer> layers_;
  bool activate_last_ = false;
};

// Outcome distribution of a two-arm head: Bernoulli logits for binary y,
// unit-variance Gaussian mean otherwise.
struct OutcomeHead {
  bool binary = true;
  Var param;

  Var log_prob(const Tensor& y) const;
  Var mean() const;
};

struct GenerativeTerms {
  Var x;  // log p(x|z)
  Var t;  // log p(t|z)
  Var y;  // log p(y|t,z)

  Var total() const { return x + t + y; }
};

// Row-wise t*arm1 + (1-t)*arm0. Rows with t=1 send exactly zero adjoint to arm0 and vice versa.
Var select_arm(Var arm0, Var arm1, const Tensor& t);

// Throws ValidationError unless every entry is 0 or 1.
void require_binary_treatment(const Tensor& t);

// Causal effect VAE: generative p(x|z), p(t|z), p(y|t,z); inference
// q(z|x,t,y); auxiliary q(t|x), q(y|x,t). Treatment-conditioned networks
// have a separate arm per treatment value.
class CevaeModel {
 public:
  CevaeModel(ArchConfig arch, std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  diff::ParameterSet& params() { return params_; }
  const diff::ParameterSet& params() const { return params_; }

  const OutcomeScale& outcome_scale() const { return outcome_scale_; }
  void set_outcome_scale(OutcomeScale s) { outcome_scale_ = s; }

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  // --- differentiable pieces (rows of x, t, y are samples) ---
  GenerativeTerms generative_terms(Binding& bind, Var z, const Tensor& x, const Tensor& t,
                                   const Tensor& y) const;
  Var generative_log_prob(Binding& bind, Var z, const Tensor& x, const Tensor& t, const Tensor& y) const;
  dists::GaussianDiag inference_posterior(Binding& bind, const Tensor& x, const Tensor& t,
                                          const Tensor& y) const;
  dists::BernoulliP aux_treatment(Binding& bind, const Tensor& x) const;
  OutcomeHead aux_outcome(Binding& bind, const Tensor& x, const Tensor& t) const;
  OutcomeHead outcome_head(Binding& bind, Var z, const Tensor& t) const;

  // --- gradient-free queries used by counterfactual_outcomes ---
  std::size_t latent_dim() const { return arch_.z_dim; }
  bool ready_for_queries() const { return trained_; }
  Tensor treatment_prob(const Tensor& x) const;
  // Mean of q(y|x,t) on the model scale.
  Tensor aux_outcome_mean(const Tensor& x, const Tensor& t) const;
  // mean + std * noise under q(z|x,t,y).
  Tensor sample_latent(const Tensor& x, const Tensor& t, const Tensor& y, const Tensor& noise) const;
  // E[y | z, t] under p(y|t,z), mapped to the reporting scale.
  Tensor outcome_mean(const Tensor& z, const Tensor& t) const;

  // Networks, exposed for tests and checkpointing.
  const Mlp& gen_x() const { return gen_x_; }
  const Mlp& gen_t() const { return gen_t_; }
  const Mlp& gen_y(int arm) const { return arm ? gen_y1_ : gen_y0_; }
  const Mlp& inf_trunk() const { return inf_trunk_; }
  const Mlp& inf_z(int arm) const { return arm ? inf_z1_ : inf_z0_; }
  const Mlp& aux_t() const { return aux_t_; }
  const Mlp& aux_y_trunk() const { return aux_y_trunk_; }
  const Mlp& aux_y(int arm) const { return arm ? aux_y1_ : aux_y0_; }

 private:
  ArchConfig arch_;
  diff::ParameterSet params_;
  OutcomeScale outcome_scale_;
  bool trained_ = false;
  std::vector<std::size_t> bin_cols_;
  std::vector<std::size_t> cont_cols_;

  Mlp gen_x_, gen_t_, gen_y0_, gen_y1_;
  Mlp inf_trunk_, inf_z0_, inf_z1_;
  Mlp aux_t_, aux_y_trunk_, aux_y0_, aux_y1_;
};

// --- counterfactual query -------------------------------------------------

struct CfQueryConfig {
  std::size_t mc_samples = 100;
};

struct CounterfactualEstimate {
  std::vector<double> mu0;
  std::vector<double> mu1;

  std::vector<double> ite() const;
};

// What counterfactual_outcomes needs from a model. Tests plug in models
// wired to a known data-generating process through the same interface.
template <class M>
concept CounterfactualModel = requires(const M& m, const Tensor& a) {
  { m.latent_dim() } -> std::convertible_to<std::size_t>;
  { m.ready_for_queries() } -> std::convertible_to<bool>;
  { m.treatment_prob(a) } -> std::same_as<Tensor>;
  { m.aux_outcome_mean(a, a) } -> std::same_as<Tensor>;
  { m.sample_latent(a, a, a, a) } -> std::same_as<Tensor>;
  { m.outcome_mean(a, a) } -> std::same_as<Tensor>;
};

// Monte Carlo estimate of E[y | x, do(t=0)] and E[y | x, do(t=1)] for every
// row of x. Each of the L rounds samples t ~ q(t|x), plugs in the mean of
// q(y|x,t), samples z ~ q(z|x,t,y) and averages E[y|z,t] for both arms.
template <CounterfactualModel M>
CounterfactualEstimate counterfactual_outcomes(const M& model, const Tensor& x, const CfQueryConfig& cfg,
                                               Rng& rng) {
  if (cfg.mc_samples == 0) throw ValidationError("counterfactual_outcomes: mc_samples must be >= 1");
  if (!model.ready_for_queries()) {
    throw ValidationError("counterfactual_outcomes: model has not been trained or loaded");
  }
  const std::size_t n = x.rows();
  const std::size_t d = model.latent_dim();
  const Tensor p = model.treatment_prob(x);
  const Tensor t0 = Tensor::matrix(n, 1, 0.0);
  const Tensor t1 = Tensor::matrix(n, 1, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  CounterfactualEstimate est{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  Tensor t = Tensor::matrix(n, 1);
  Tensor noise = Tensor::matrix(n, d);
  for (std::size_t l = 0; l < cfg.mc_samples; ++l) {
    for (std::size_t i = 0; i < n; ++i) t[i] = unif(rng) < p[i] ? 1.0 : 0.0;
    for (double& e : noise.data()) e = normal(rng);
    const Tensor y = model.aux_outcome_mean(x, t);
    const Tensor z = model.sample_latent(x, t, y, noise);
    const Tensor m0 = model.outcome_mean(z, t0);
    const Tensor m1 = model.outcome_mean(z, t1);
    for (std::size_t i = 0; i < n; ++i) {
      est.mu0[i] += m0[i];
      est.mu1[i] += m1[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(cfg.mc_samples);
  for (std::size_t i = 0; i < n; ++i) {
    est.mu0[i] *= inv;
    est.mu1[i] *= inv;
  }
  return est;
}

// --- checkpoints ------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "UTVAE-CKPT-1";

void save_checkpoint(const CevaeModel& model, const std::filesystem::path& path);
// The loaded model is marked trained.
CevaeModel load_checkpoint(const std::filesystem::path& path);

}  // namespace utvae::nets
