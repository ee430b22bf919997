#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "utvae/datagen.hpp"
#include "utvae/networks.hpp"

namespace utvae::train {

using diff::GradientMap;
using diff::Tensor;
using nets::CevaeModel;
using Rng = std::mt19937_64;

enum class ObjectiveKind { kCevae, kUtvae, kUtvaeGen, kUtvaeInf };

ObjectiveKind parse_objective(const std::string& s);
std::string objective_name(ObjectiveKind k);
bool needs_weights(ObjectiveKind k);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t elbo_samples = 1;  // S
  ObjectiveKind objective = ObjectiveKind::kCevae;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_elbo = 0.0;  // unweighted mean over the epoch's samples
  double val_elbo = 0.0;    // NaN without validation data
  double aux_ll = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
  std::string checkpoint;  // set by callers that persist the model

  double final_val_elbo() const;
};

void write_train_report_csv(const TrainReport& report, const std::filesystem::path& path);

// Rows of a minibatch as columns ready for the networks.
struct Batch {
  Tensor x;  // [B, d]
  Tensor t;  // [B, 1]
  Tensor y;  // [B, 1]

  std::size_t size() const { return t.rows(); }
};

Batch make_batch(const data::Dataset& ds);
Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> rows);

// Standard normal noise for S posterior samples: [S * B, z_dim], sample s in
// rows s*B .. (s+1)*B - 1.
Tensor draw_noise(Rng& rng, std::size_t batch, std::size_t samples, std::size_t z_dim);

// Per-sample ELBO [B, 1]: (1/S) sum_s log p(x,t,y|z_s) - KL(q(z|x,t,y) || p(z)).
diff::Var elbo_per_sample(const CevaeModel& model, nets::Binding& bind, const Batch& batch, const Tensor& noise,
                          std::size_t samples);

// Per-sample log q(t|x) + log q(y|x,t) [B, 1].
diff::Var aux_loss(const CevaeModel& model, nets::Binding& bind, const Batch& batch);

// Gradient-free per-sample values.
std::vector<double> elbo_values(const CevaeModel& model, const Batch& batch, const Tensor& noise,
                                std::size_t samples);
std::vector<double> aux_values(const CevaeModel& model, const Batch& batch);

struct ObjectiveOptions {
  std::size_t samples = 1;
  // Multipliers on the two halves of the split objectives. The weighted half
  // is the L_UTVAE term, the unweighted half the L_CEVAE term.
  double weighted_scale = 1.0;
  double unweighted_scale = 1.0;
};

struct ObjectiveResult {
  GradientMap grads;  // one entry per model parameter
  double loss = 0.0;  // negative objective
  double elbo = 0.0;  // unweighted batch mean
  double aux = 0.0;   // batch mean
};

// Gradients of the negative objective for one minibatch. `weights` must be
// present exactly when the objective needs them and match the batch size.
ObjectiveResult objective_gradients(const CevaeModel& model, const Batch& batch,
                                    std::optional<std::span<const double>> weights, ObjectiveKind kind,
                                    const Tensor& noise, const ObjectiveOptions& opts = {});

using EpochCallback = std::function<void(const EpochStats&)>;

// Minibatch Adam training. `weights` are per training row. The model is left
// in its final state and marked trained; for continuous y the outcome scale
// is taken from the training data's normalization.
TrainReport train(CevaeModel& model, const data::Dataset& train_data, const data::Dataset* val_data,
                  std::optional<std::span<const double>> weights, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace utvae::train
