#include "utvae/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "utvae/diff/adam.hpp"

namespace utvae::train {

using diff::ParamGroup;
using diff::Var;
using nets::Binding;
using nets::LiveGroups;

ObjectiveKind parse_objective(const std::string& s) {
  if (s == "cevae") return ObjectiveKind::kCevae;
  if (s == "utvae") return ObjectiveKind::kUtvae;
  if (s == "utvae_gen") return ObjectiveKind::kUtvaeGen;
  if (s == "utvae_inf") return ObjectiveKind::kUtvaeInf;
  throw ValidationError("unknown objective '" + s + "' (cevae|utvae|utvae_gen|utvae_inf)");
}

std::string objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::kCevae: return "cevae";
    case ObjectiveKind::kUtvae: return "utvae";
    case ObjectiveKind::kUtvaeGen: return "utvae_gen";
    case ObjectiveKind::kUtvaeInf: return "utvae_inf";
  }
  return "?";
}

bool needs_weights(ObjectiveKind k) { return k != ObjectiveKind::kCevae; }

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("train: epochs must be >= 1");
  if (batch_size == 0) throw ValidationError("train: batch size must be >= 1");
  if (elbo_samples == 0) throw ValidationError("train: ELBO samples must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("train: learning rate must be finite and >= 0");
}

double TrainReport::final_val_elbo() const {
  return epochs.empty() ? std::numeric_limits<double>::quiet_NaN() : epochs.back().val_elbo;
}

void write_train_report_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.precision(17);
    out << "epoch,train_elbo,val_elbo,aux_ll\n";
    for (const EpochStats& e : report.epochs) {
      out << e.epoch << ',' << e.train_elbo << ',' << e.val_elbo << ',' << e.aux_ll << '\n';
    }
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Batch make_batch(const data::Dataset& ds) {
  return Batch{ds.x, ds.t_column(), ds.y_column()};
}

Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> rows) {
  const std::size_t d = ds.dim();
  Batch b{Tensor::matrix(rows.size(), d), Tensor::matrix(rows.size(), 1), Tensor::matrix(rows.size(), 1)};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    for (std::size_t j = 0; j < d; ++j) b.x(k, j) = ds.x(i, j);
    b.t[k] = ds.t[i];
    b.y[k] = ds.y[i];
  }
  return b;
}

Tensor draw_noise(Rng& rng, std::size_t batch, std::size_t samples, std::size_t z_dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise = Tensor::matrix(batch * samples, z_dim);
  for (double& v : noise.data()) v = normal(rng);
  return noise;
}

namespace {

Tensor noise_block(const Tensor& noise, std::size_t s, std::size_t batch) {
  const std::size_t d = noise.cols();
  const auto first = noise.storage().begin() + static_cast<std::ptrdiff_t>(s * batch * d);
  return Tensor(diff::Shape{batch, d}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(batch * d)));
}

std::vector<double> column_values(const Var& v) {
  const auto data = v.value().data();
  return {data.begin(), data.end()};
}

double mean_of(const Var& v) {
  const auto data = v.value().data();
  return std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
}

}  // namespace

Var elbo_per_sample(const CevaeModel& model, Binding& bind, const Batch& batch, const Tensor& noise,
                    std::size_t samples) {
  const std::size_t n = batch.size();
  if (samples == 0) throw ValidationError("elbo: samples must be >= 1");
  if (noise.rows() != n * samples || noise.cols() != model.latent_dim()) {
    throw ShapeError("elbo: noise of shape " + diff::shape_string(noise.shape()) + ", expected [" +
                     std::to_string(n * samples) + "," + std::to_string(model.latent_dim()) + "]");
  }
  const dists::GaussianDiag post = model.inference_posterior(bind, batch.x, batch.t, batch.y);
  Var recon;
  for (std::size_t s = 0; s < samples; ++s) {
    const Var z = dists::reparam_sample(post, samples == 1 ? noise : noise_block(noise, s, n));
    const Var term = model.generative_log_prob(bind, z, batch.x, batch.t, batch.y);
    recon = s == 0 ? term : recon + term;
  }
  if (samples > 1) recon = recon * (1.0 / static_cast<double>(samples));
  return recon - dists::kl_to_std_normal(post);
}

Var aux_loss(const CevaeModel& model, Binding& bind, const Batch& batch) {
  const dists::BernoulliP qt = model.aux_treatment(bind, batch.x);
  const nets::OutcomeHead qy = model.aux_outcome(bind, batch.x, batch.t);
  return dists::bernoulli_log_prob(qt, batch.t) + qy.log_prob(batch.y);
}

std::vector<double> elbo_values(const CevaeModel& model, const Batch& batch, const Tensor& noise,
                                std::size_t samples) {
  diff::Tape tape;
  Binding bind(tape, model.params(), LiveGroups::none());
  return column_values(elbo_per_sample(model, bind, batch, noise, samples));
}

std::vector<double> aux_values(const CevaeModel& model, const Batch& batch) {
  diff::Tape tape;
  Binding bind(tape, model.params(), LiveGroups::none());
  return column_values(aux_loss(model, bind, batch));
}

ObjectiveResult objective_gradients(const CevaeModel& model, const Batch& batch,
                                    std::optional<std::span<const double>> weights, ObjectiveKind kind,
                                    const Tensor& noise, const ObjectiveOptions& opts) {
  const std::size_t n = batch.size();
  if (needs_weights(kind) && !weights) {
    throw ValidationError("objective " + objective_name(kind) + " requires importance weights");
  }
  if (!needs_weights(kind) && weights) {
    throw ValidationError("objective cevae must not receive importance weights");
  }
  if (weights && weights->size() != n) {
    throw ValidationError("objective: " + std::to_string(weights->size()) + " weights for a batch of " +
                          std::to_string(n));
  }
  Tensor w = Tensor::matrix(n, 1, 1.0);
  if (weights) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite((*weights)[i]) || (*weights)[i] < 0.0) {
        throw ValidationError("objective: importance weights must be finite and >= 0");
      }
      w[i] = (*weights)[i];
    }
  }

  diff::Tape tape;
  ObjectiveResult res;
  Var objective;
  Var aux;
  if (kind == ObjectiveKind::kCevae || kind == ObjectiveKind::kUtvae) {
    Binding bind(tape, model.params());
    const Var elbo = elbo_per_sample(model, bind, batch, noise, opts.samples);
    aux = aux_loss(model, bind, batch);
    objective = diff::mean(bind.constant(w) * elbo) + diff::mean(aux);
    res.elbo = mean_of(elbo);
  } else {
    // Two evaluations of the same ELBO, each differentiable in one group only.
    const bool gen = kind == ObjectiveKind::kUtvaeGen;
    LiveGroups weighted_live = LiveGroups::only(gen ? ParamGroup::kGenerative : ParamGroup::kInference);
    LiveGroups unweighted_live = LiveGroups::only(gen ? ParamGroup::kInference : ParamGroup::kGenerative);
    weighted_live.auxiliary = true;
    Binding weighted_bind(tape, model.params(), weighted_live);
    Binding unweighted_bind(tape, model.params(), unweighted_live);

    const Var elbo_w = elbo_per_sample(model, weighted_bind, batch, noise, opts.samples);
    const Var elbo_u = elbo_per_sample(model, unweighted_bind, batch, noise, opts.samples);
    Var half_w = diff::mean(weighted_bind.constant(w) * elbo_w);
    Var half_u = diff::mean(unweighted_bind.constant(Tensor::matrix(n, 1, 1.0)) * elbo_u);
    if (opts.weighted_scale != 1.0) half_w = half_w * opts.weighted_scale;
    if (opts.unweighted_scale != 1.0) half_u = half_u * opts.unweighted_scale;
    aux = aux_loss(model, weighted_bind, batch);
    objective = half_w + half_u + diff::mean(aux);
    res.elbo = mean_of(elbo_u);
  }
  const Var loss = -objective;
  res.loss = loss.value().item();
  res.aux = mean_of(aux);
  res.grads = tape.backward(loss, &model.params());
  return res;
}

TrainReport train(CevaeModel& model, const data::Dataset& train_data, const data::Dataset* val_data,
                  std::optional<std::span<const double>> weights, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  train_data.validate();
  const std::size_t n = train_data.size();
  if (n == 0) throw ValidationError("train: empty training set");
  if (train_data.dim() != model.arch().x_dim) {
    throw ValidationError("train: data has " + std::to_string(train_data.dim()) + " covariates, model expects " +
                          std::to_string(model.arch().x_dim));
  }
  if (train_data.y_binary != model.arch().y_binary) throw ValidationError("train: outcome type differs from model");
  if (needs_weights(cfg.objective) != weights.has_value()) {
    throw ValidationError(needs_weights(cfg.objective) ? "train: objective requires importance weights"
                                                       : "train: cevae must not receive importance weights");
  }
  if (weights && weights->size() != n) throw ValidationError("train: weights do not match the training rows");

  if (!train_data.y_binary && train_data.normalization) {
    model.set_outcome_scale({train_data.normalization->y_mean, train_data.normalization->y_std});
  }

  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  Rng val_rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
  diff::AdamState adam(model.params(), diff::AdamConfig{cfg.lr});
  std::optional<Batch> val_batch;
  if (val_data && val_data->size() > 0) val_batch = make_batch(*val_data);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> wbuf;
  ObjectiveOptions opts;
  opts.samples = cfg.elbo_samples;

  TrainReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double elbo_sum = 0.0, aux_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Batch batch = make_batch(train_data, rows);
      std::optional<std::span<const double>> bw;
      if (weights) {
        wbuf.resize(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) wbuf[k] = (*weights)[rows[k]];
        bw = std::span<const double>(wbuf);
      }
      const Tensor noise = draw_noise(rng, batch.size(), cfg.elbo_samples, model.latent_dim());
      ObjectiveResult res;
      try {
        res = objective_gradients(model, batch, bw, cfg.objective, noise, opts);
        if (!std::isfinite(res.loss)) throw NonFiniteError("loss is " + std::to_string(res.loss));
        adam.step(model.params(), res.grads);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + ": " + e.what());
      }
      elbo_sum += res.elbo * static_cast<double>(batch.size());
      aux_sum += res.aux * static_cast<double>(batch.size());
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_elbo = elbo_sum / static_cast<double>(n);
    stats.aux_ll = aux_sum / static_cast<double>(n);
    stats.val_elbo = std::numeric_limits<double>::quiet_NaN();
    if (val_batch) {
      const Tensor noise = draw_noise(val_rng, val_batch->size(), 1, model.latent_dim());
      const auto v = elbo_values(model, *val_batch, noise, 1);
      stats.val_elbo = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.mark_trained();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace utvae::train
