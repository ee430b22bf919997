#include "utvae/networks.hpp"

#include <cmath>
#include <limits>

namespace utvae::nets {

namespace {

constexpr std::size_t kUnbound = std::numeric_limits<std::size_t>::max();

Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& cols) {
  Tensor out = Tensor::matrix(x.rows(), cols.size());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k) out(r, k) = x(r, cols[k]);
  return out;
}

Tensor one_minus(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = 1.0 - t[i];
  return out;
}

void require_rows(const Tensor& a, std::size_t rows, const char* what) {
  if (a.rank() != 2 || a.rows() != rows) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + " rows, got " +
                     diff::shape_string(a.shape()));
  }
}

}  // namespace

// --- ArchConfig ---------------------------------------------------------------

void ArchConfig::validate() const {
  if (x_dim == 0) throw ValidationError("arch: x_dim must be >= 1");
  if (x_binary.size() != x_dim) {
    throw ValidationError("arch: x_binary_mask has " + std::to_string(x_binary.size()) +
                          " entries for x_dim " + std::to_string(x_dim));
  }
  if (z_dim == 0) throw ValidationError("arch: z_dim must be >= 1");
  if (hidden_layers == 0) throw ValidationError("arch: hidden_layers must be >= 1");
  if (hidden_units == 0) throw ValidationError("arch: hidden_units must be >= 1");
}

std::vector<std::size_t> ArchConfig::binary_columns() const {
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < x_binary.size(); ++i)
    if (x_binary[i]) cols.push_back(i);
  return cols;
}

std::vector<std::size_t> ArchConfig::continuous_columns() const {
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < x_binary.size(); ++i)
    if (!x_binary[i]) cols.push_back(i);
  return cols;
}

// --- Binding -----------------------------------------------------------------

bool LiveGroups::contains(ParamGroup g) const {
  switch (g) {
    case ParamGroup::kGenerative:
      return generative;
    case ParamGroup::kInference:
      return inference;
    case ParamGroup::kAuxiliary:
      return auxiliary;
  }
  return false;
}

LiveGroups LiveGroups::only(ParamGroup g) {
  LiveGroups l = none();
  switch (g) {
    case ParamGroup::kGenerative:
      l.generative = true;
      break;
    case ParamGroup::kInference:
      l.inference = true;
      break;
    case ParamGroup::kAuxiliary:
      l.auxiliary = true;
      break;
  }
  return l;
}

Binding::Binding(diff::Tape& tape, const diff::ParameterSet& params, LiveGroups live)
    : tape_(tape), params_(params), live_(live), node_(params.size(), kUnbound) {}

Var Binding::operator()(std::size_t param_index) {
  std::size_t& slot = node_.at(param_index);
  if (slot == kUnbound) {
    const diff::Parameter& p = params_[param_index];
    Var v = live_.contains(p.group()) ? tape_.leaf(p) : tape_.detached(p);
    slot = v.id();
    return v;
  }
  return tape_.handle(slot);
}

// --- Mlp -------------------------------------------------------------------

Mlp::Mlp(diff::ParameterSet& params, const std::string& prefix, ParamGroup group,
         std::vector<std::size_t> widths, bool activate_last, Rng& rng)
    : widths_(std::move(widths)), activate_last_(activate_last) {
  if (widths_.empty()) throw ValidationError("mlp '" + prefix + "': no widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const std::size_t in = widths_[i], out = widths_[i + 1];
    // Glorot-uniform weights, zero biases.
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> init(-limit, limit);
    Tensor w = Tensor::matrix(in, out);
    for (double& v : w.data()) v = init(rng);
    const std::string layer = prefix + ".l" + std::to_string(i);
    Layer l;
    l.weight = params.add(layer + ".W", std::move(w), group);
    l.bias = params.add(layer + ".b", Tensor::matrix(1, out), group);
    layers_.push_back(l);
  }
}

Var Mlp::forward(Binding& bind, Var input, Activation act) const {
  if (input.value().cols() != in_dim()) {
    throw ShapeError("mlp: input " + diff::shape_string(input.shape()) + " for in_dim " +
                     std::to_string(in_dim()));
  }
  Var h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = diff::matmul(h, bind(layers_[i].weight)) + bind(layers_[i].bias);
    if (i + 1 < layers_.size() || activate_last_) h = diff::rectifier(h, act);
  }
  return h;
}

// --- heads ------------------------------------------------------------------

Var OutcomeHead::log_prob(const Tensor& y) const {
  if (binary) return dists::bernoulli_log_prob(dists::BernoulliP{param}, y);
  Var unit = param.tape().constant(Tensor(param.shape(), 1.0));
  return dists::gaussian_log_prob(dists::GaussianDiag{param, unit}, y);
}

Var OutcomeHead::mean() const { return binary ? diff::sigmoid(param) : param; }

Var select_arm(Var arm0, Var arm1, const Tensor& t) {
  diff::Tape& tape = arm0.tape();
  return tape.constant(t) * arm1 + tape.constant(one_minus(t)) * arm0;
}

void require_binary_treatment(const Tensor& t) {
  for (double v : t.data()) {
    if (v != 0.0 && v != 1.0) throw ValidationError("treatment must be 0 or 1, got " + std::to_string(v));
  }
}

// --- CevaeModel ---------------------------------------------------------------

CevaeModel::CevaeModel(ArchConfig arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  bin_cols_ = arch_.binary_columns();
  cont_cols_ = arch_.continuous_columns();
  Rng rng(seed);
  const std::size_t h = arch_.hidden_units;
  const std::size_t L = arch_.hidden_layers;
  const std::size_t z = arch_.z_dim;
  const std::size_t xd = arch_.x_dim;
  auto stack = [&](std::size_t in, std::size_t hidden, std::size_t out) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden, h);
    if (out) w.push_back(out);
    return w;
  };
  const std::size_t x_out = bin_cols_.size() + 2 * cont_cols_.size();
  gen_x_ = Mlp(params_, "gen.x", ParamGroup::kGenerative, stack(z, L, x_out), false, rng);
  gen_t_ = Mlp(params_, "gen.t", ParamGroup::kGenerative, stack(z, L, 1), false, rng);
  gen_y0_ = Mlp(params_, "gen.y0", ParamGroup::kGenerative, stack(z, L, 1), false, rng);
  gen_y1_ = Mlp(params_, "gen.y1", ParamGroup::kGenerative, stack(z, L, 1), false, rng);

  inf_trunk_ = Mlp(params_, "inf.trunk", ParamGroup::kInference, stack(xd + 1, L - 1, 0), true, rng);
  inf_z0_ = Mlp(params_, "inf.z0", ParamGroup::kInference, stack(inf_trunk_.out_dim(), 1, 2 * z), false, rng);
  inf_z1_ = Mlp(params_, "inf.z1", ParamGroup::kInference, stack(inf_trunk_.out_dim(), 1, 2 * z), false, rng);

  aux_t_ = Mlp(params_, "aux.t", ParamGroup::kAuxiliary, stack(xd, L, 1), false, rng);
  aux_y_trunk_ = Mlp(params_, "aux.ytrunk", ParamGroup::kAuxiliary, stack(xd, L - 1, 0), true, rng);
  aux_y0_ = Mlp(params_, "aux.y0", ParamGroup::kAuxiliary, stack(aux_y_trunk_.out_dim(), 1, 1), false, rng);
  aux_y1_ = Mlp(params_, "aux.y1", ParamGroup::kAuxiliary, stack(aux_y_trunk_.out_dim(), 1, 1), false, rng);
}

GenerativeTerms CevaeModel::generative_terms(Binding& bind, Var z, const Tensor& x, const Tensor& t,
                                             const Tensor& y) const {
  const std::size_t n = z.value().rows();
  require_rows(x, n, "generative_log_prob x");
  require_rows(t, n, "generative_log_prob t");
  require_rows(y, n, "generative_log_prob y");
  require_binary_treatment(t);
  const Activation act = arch_.activation;

  Var out = gen_x_.forward(bind, z, act);
  const std::size_t nb = bin_cols_.size(), nc = cont_cols_.size();
  Var log_px;
  if (nb) log_px = dists::bernoulli_log_prob({diff::slice(out, 1, 0, nb)}, gather_cols(x, bin_cols_));
  if (nc) {
    auto g = dists::GaussianDiag::from_raw(diff::slice(out, 1, nb, nb + nc),
                                           diff::slice(out, 1, nb + nc, nb + 2 * nc));
    Var lp = dists::gaussian_log_prob(g, gather_cols(x, cont_cols_));
    log_px = log_px.valid() ? log_px + lp : lp;
  }

  GenerativeTerms terms;
  terms.x = log_px;
  terms.t = dists::bernoulli_log_prob({gen_t_.forward(bind, z, act)}, t);
  terms.y = outcome_head(bind, z, t).log_prob(y);
  return terms;
}

Var CevaeModel::generative_log_prob(Binding& bind, Var z, const Tensor& x, const Tensor& t,
                                    const Tensor& y) const {
  return generative_terms(bind, z, x, t, y).total();
}

OutcomeHead CevaeModel::outcome_head(Binding& bind, Var z, const Tensor& t) const {
  const Activation act = arch_.activation;
  Var arm0 = gen_y0_.forward(bind, z, act);
  Var arm1 = gen_y1_.forward(bind, z, act);
  return OutcomeHead{arch_.y_binary, select_arm(arm0, arm1, t)};
}

dists::GaussianDiag CevaeModel::inference_posterior(Binding& bind, const Tensor& x, const Tensor& t,
                                                    const Tensor& y) const {
  const std::size_t n = x.rows();
  require_rows(t, n, "inference_posterior t");
  require_rows(y, n, "inference_posterior y");
  require_binary_treatment(t);
  const Activation act = arch_.activation;
  const Var parts[] = {bind.constant(x), bind.constant(y)};
  Var h = inf_trunk_.forward(bind, diff::concat(parts, 1), act);
  Var out = select_arm(inf_z0_.forward(bind, h, act), inf_z1_.forward(bind, h, act), t);
  const std::size_t z = arch_.z_dim;
  return dists::GaussianDiag::from_raw(diff::slice(out, 1, 0, z), diff::slice(out, 1, z, 2 * z));
}

dists::BernoulliP CevaeModel::aux_treatment(Binding& bind, const Tensor& x) const {
  return dists::BernoulliP{aux_t_.forward(bind, bind.constant(x), arch_.activation)};
}

OutcomeHead CevaeModel::aux_outcome(Binding& bind, const Tensor& x, const Tensor& t) const {
  require_rows(t, x.rows(), "aux_outcome t");
  require_binary_treatment(t);
  const Activation act = arch_.activation;
  Var h = aux_y_trunk_.forward(bind, bind.constant(x), act);
  return OutcomeHead{arch_.y_binary, select_arm(aux_y0_.forward(bind, h, act), aux_y1_.forward(bind, h, act), t)};
}

Tensor CevaeModel::treatment_prob(const Tensor& x) const {
  diff::Tape tape;
  Binding bind(tape, params_, LiveGroups::none());
  return aux_treatment(bind, x).prob().value();
}

Tensor CevaeModel::aux_outcome_mean(const Tensor& x, const Tensor& t) const {
  diff::Tape tape;
  Binding bind(tape, params_, LiveGroups::none());
  return aux_outcome(bind, x, t).mean().value();
}

Tensor CevaeModel::sample_latent(const Tensor& x, const Tensor& t, const Tensor& y, const Tensor& noise) const {
  diff::Tape tape;
  Binding bind(tape, params_, LiveGroups::none());
  return dists::reparam_sample(inference_posterior(bind, x, t, y), noise).value();
}

Tensor CevaeModel::outcome_mean(const Tensor& z, const Tensor& t) const {
  diff::Tape tape;
  Binding bind(tape, params_, LiveGroups::none());
  Tensor m = outcome_head(bind, tape.constant(z), t).mean().value();
  for (double& v : m.data()) v = v * outcome_scale_.std + outcome_scale_.mean;
  return m;
}

std::vector<double> CounterfactualEstimate::ite() const {
  std::vector<double> out(mu0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu1[i] - mu0[i];
  return out;
}

}  // namespace utvae::nets
