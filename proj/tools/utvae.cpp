// utvae: data generation, training, evaluation, sweeps and IPW baselines.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "utvae/harness.hpp"

namespace fs = std::filesystem;
using namespace utvae;
using harness::KeyValues;

namespace {

// Flags stored as raw strings keyed by setting name; only flags the user
// actually passed override the config file.
struct FlagSet {
  std::map<std::string, std::string> storage;
  std::vector<std::pair<CLI::Option*, std::string>> options;
  std::string config_path;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(app->add_option(flag, storage[key], help), key);
  }

  KeyValues overrides() const {
    KeyValues kv;
    for (const auto& [opt, key] : options)
      if (opt->count() > 0) kv[key] = storage.at(key);
    return kv;
  }

  KeyValues settings() const {
    KeyValues file;
    if (!config_path.empty()) file = harness::parse_config_file(config_path);
    KeyValues kv = harness::merge_settings(file, overrides());
    if (!kv.count("output.out_dir")) {
      const char* env = std::getenv("UTVAE_OUT_DIR");
      kv["output.out_dir"] = env && *env ? env : "utvae_out";
    }
    return kv;
  }
};

void add_data_flags(CLI::App* app, FlagSet& f) {
  f.add(app, "--dataset", "data.dataset", "synthetic or ihdp");
  f.add(app, "--n", "data.n", "synthetic training rows (list for sweeps)");
  f.add(app, "--alpha", "data.alpha", "treatment-assignment balance in (0,1) (list for sweeps)");
  f.add(app, "--seed", "data.seed", "seed for data, model and training");
  f.add(app, "--variance", "data.variance", "proxy variance form: mixture or literal");
  f.add(app, "--val", "data.val", "synthetic validation rows");
  f.add(app, "--test", "data.test", "synthetic test rows");
  f.add(app, "--data-path", "data.path", "IHDP replicate file or directory");
  f.add(app, "--replicate", "data.replicate", "IHDP replicate index");
  f.add(app, "--treated-removal", "data.treated_removal", "fraction of treated IHDP rows removed");
}

void add_model_flags(CLI::App* app, FlagSet& f) {
  f.add(app, "--objective", "train.objective", "cevae|utvae|utvae_gen|utvae_inf (list for sweeps)");
  f.add(app, "--epsilon", "propensity.epsilon", "propensity ball radius (list for sweeps)");
  f.add(app, "--smoothing", "propensity.smoothing", "Laplace pseudo-count per class");
  f.add(app, "--clip-lo", "propensity.clip_lo", "lower propensity clip");
  f.add(app, "--clip-hi", "propensity.clip_hi", "upper propensity clip");
  f.add(app, "--epochs", "train.epochs", "training epochs");
  f.add(app, "--lr", "train.lr", "Adam learning rate");
  f.add(app, "--batch", "train.batch", "minibatch size");
  f.add(app, "--elbo-samples", "train.elbo_samples", "posterior samples per step");
  f.add(app, "--latent-dim", "model.latent_dim", "latent dimension");
  f.add(app, "--hidden-layers", "model.hidden_layers", "hidden layers per network");
  f.add(app, "--hidden-units", "model.hidden_units", "units per hidden layer");
  f.add(app, "--activation", "model.activation", "elu or softplus");
  f.add(app, "--mc-samples", "eval.mc_samples", "counterfactual Monte Carlo rounds");
}

void add_output_flags(CLI::App* app, FlagSet& f) {
  f.add(app, "--out-dir", "output.out_dir", "output root (default $UTVAE_OUT_DIR or ./utvae_out)");
  app->add_option("--config", f.config_path, "key=value config file with [section] headers");
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

harness::ExperimentConfig single_cell_config(const KeyValues& kv) {
  harness::ExperimentConfig cfg = harness::experiment_from_settings(kv);
  if (cfg.objectives.size() != 1) throw ValidationError("give exactly one --objective (lists are for sweep)");
  if (cfg.sizes.size() > 1 || cfg.alphas.size() > 1) throw ValidationError("lists of --n or --alpha need sweep");
  const bool eps_given = kv.count("propensity.epsilon") > 0;
  if (!train::needs_weights(cfg.base.objective)) {
    if (eps_given) warn("--epsilon is ignored for objective cevae");
  } else if (cfg.epsilons.size() != 1 && eps_given) {
    throw ValidationError("give exactly one --epsilon (lists are for sweep)");
  }
  return cfg;
}

int cmd_gen(const FlagSet& f) {
  const KeyValues kv = f.settings();
  const harness::ExperimentConfig cfg = harness::experiment_from_settings(kv);
  if (cfg.base.dataset != harness::DatasetKind::kSynthetic) throw ValidationError("gen only produces synthetic data");
  data::SyntheticConfig sc = cfg.base.synthetic;
  sc.seed = cfg.base.seed;
  const data::Dataset ds = data::gen_synthetic(sc);

  const fs::path dir = kv.at("output.out_dir");
  fs::create_directories(dir);
  const std::string stem = "synthetic_n" + std::to_string(sc.n) + "_alpha" + fmt(sc.alpha) + "_seed" +
                           std::to_string(sc.seed);
  const fs::path csv = dir / (stem + ".csv");
  fs::path tmp = csv;
  tmp += ".tmp";
  data::write_synthetic_csv(ds, tmp);
  fs::rename(tmp, csv);

  nlohmann::ordered_json m;
  m["file"] = csv.filename().string();
  m["rows"] = ds.size();
  m["n"] = sc.n;
  m["alpha"] = sc.alpha;
  m["rho_z1"] = sc.rho_z1;
  m["rho_z0"] = sc.rho_z0;
  m["variance"] = data::variance_form_name(sc.variance);
  m["seed"] = sc.seed;
  m["population_ate"] = data::synthetic_population_ate();
  harness::atomic_write(dir / (stem + ".manifest.json"), m.dump(2) + "\n");
  std::cout << csv.string() << '\n';
  return 0;
}

void write_metric_row(const fs::path& dir, const harness::RunRecord& r) {
  eval::MetricRow row{r.config.at("dataset"), r.objective(), r.seed, r.epsilon(), r.ate.abs_err, r.pehe.pehe,
                      r.runtime_s};
  eval::write_metric_csv({row}, dir / "runs" / (r.config_hash + ".metrics.csv"));
}

int cmd_train(const FlagSet& f, bool no_checkpoint) {
  const KeyValues kv = f.settings();
  const harness::ExperimentConfig cfg = single_cell_config(kv);
  harness::RunOptions opts;
  opts.out_dir = cfg.out_dir;
  opts.save_checkpoint = !no_checkpoint;
  opts.log = warn;
  const harness::RunRecord rec = harness::run_cell(cfg.base, opts);
  write_metric_row(cfg.out_dir, rec);
  std::cout << harness::record_json(rec);
  std::cerr << rec.objective() << ": ate_err=" << rec.ate.abs_err << " pehe=" << rec.pehe.pehe
            << " val_elbo=" << rec.val_elbo << " (" << rec.runtime_s << " s)\n";
  return 0;
}

int cmd_eval(const FlagSet& f, const std::string& checkpoint) {
  const KeyValues kv = f.settings();
  const harness::ExperimentConfig cfg = single_cell_config(kv);
  const nets::CevaeModel model = nets::load_checkpoint(checkpoint);
  const harness::PreparedData d = harness::prepare_data(cfg.base, warn);
  if (d.eval.dim() != model.arch().x_dim) {
    throw ValidationError("checkpoint expects " + std::to_string(model.arch().x_dim) + " covariates, data has " +
                          std::to_string(d.eval.dim()));
  }
  eval::Rng rng(cfg.base.seed ^ 0x5DEECE66DULL);
  const eval::EffectMetrics m = eval::model_metrics(model, d.eval, cfg.base.query, rng);
  eval::MetricRow row{harness::dataset_kind_name(cfg.base.dataset), train::objective_name(cfg.base.objective),
                      cfg.base.seed, train::needs_weights(cfg.base.objective) ? cfg.base.epsilon : std::nan(""),
                      m.ate.abs_err, m.pehe.pehe, 0.0};
  std::cout << eval::kMetricHeader << '\n' << eval::metric_csv_line(row) << '\n';
  std::cerr << "ate_pred=" << m.ate.ate_pred << " ate_true=" << m.ate.ate_true << '\n';
  return 0;
}

int cmd_sweep(const FlagSet& f) {
  const KeyValues kv = f.settings();
  const harness::ExperimentConfig cfg = harness::experiment_from_settings(kv);
  const std::vector<harness::RunSpec> cells = harness::build_cells(cfg);
  std::cerr << "sweep: " << cells.size() << " cells on " << cfg.workers << " worker(s)\n";
  harness::RunOptions opts;
  opts.out_dir = cfg.out_dir;
  opts.save_checkpoint = cfg.save_checkpoint;
  std::size_t done = 0;
  const auto records = harness::run_sweep(cells, cfg.workers, opts, [&](const harness::RunRecord& r) {
    ++done;
    std::cerr << "[" << done << "/" << cells.size() << "] " << r.objective() << " seed=" << r.seed << ' '
              << (r.status == "ok" ? "ate_err=" + fmt(r.ate.abs_err) : "error: " + r.error) << '\n';
  });
  harness::write_records_csv(records, cfg.out_dir / "records.csv");
  const auto summary = harness::summarize(records, cfg.select);
  harness::write_summary_csv(summary, cfg.out_dir / "summary.csv");
  std::cout << harness::format_summary_table(summary);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status != "ok";
  if (failed > 0) std::cerr << failed << " of " << records.size() << " cells failed; see records.csv\n";
  return failed == records.size() ? 2 : 0;
}

int cmd_ipw(const FlagSet& f) {
  KeyValues kv = f.settings();
  const bool n_given = kv.count("data.n") > 0;
  const harness::ExperimentConfig cfg = harness::experiment_from_settings(kv);
  const std::string source = kv.count("eval.source") ? kv.at("eval.source") : "all";
  const bool want_all = source == "all";
  const eval::PropensitySource only = want_all ? eval::PropensitySource::kEstimated
                                               : eval::parse_propensity_source(source);

  data::Dataset raw;
  std::string name;
  data::SyntheticConfig sc = cfg.base.synthetic;
  if (cfg.base.dataset == harness::DatasetKind::kSynthetic) {
    if (!n_given) sc.n = 100000;
    sc.seed = cfg.base.seed;
    raw = data::gen_synthetic(sc);
    name = "synthetic";
  } else {
    raw = data::load_ihdp(cfg.base.ihdp_path, cfg.base.replicate);
    if (cfg.base.treated_removal > 0.0) {
      raw = data::remove_treated_fraction(raw, cfg.base.treated_removal, cfg.base.seed);
    }
    name = "ihdp";
  }
  const data::Dataset norm = data::normalize(raw, warn);
  const auto truth = raw.oracle->ite();
  double ate_true = 0.0;
  for (double v : truth) ate_true += v;
  ate_true /= static_cast<double>(truth.size());

  std::ostringstream out;
  out << "dataset,source,epsilon,n,mu1_hat,mu0_hat,ate_hat,ate_true,abs_err,clipped\n";
  auto emit = [&](const std::string& src, const std::string& eps, double mu1, double mu0, double ate,
                  std::size_t clipped) {
    out << name << ',' << src << ',' << eps << ',' << raw.size() << ',' << fmt(mu1) << ',' << fmt(mu0) << ','
        << fmt(ate) << ',' << fmt(ate_true) << ',' << fmt(std::abs(ate - ate_true)) << ',' << clipped << '\n';
  };
  const bool synthetic = cfg.base.dataset == harness::DatasetKind::kSynthetic;
  if (synthetic && (want_all || only == eval::PropensitySource::kOracleProxy)) {
    const auto r = eval::ipw_ate(raw.t, raw.y, eval::synthetic_proxy_propensity(raw, sc),
                                 eval::PropensitySource::kOracleProxy);
    emit("oracle_x", "", r.mu1_hat, r.mu0_hat, r.ate_hat, 0);
  }
  if (synthetic && (want_all || only == eval::PropensitySource::kOracleConfounder)) {
    const auto r = eval::ipw_ate(raw.t, raw.y, eval::synthetic_confounder_propensity(raw, sc.alpha),
                                 eval::PropensitySource::kOracleConfounder);
    emit("oracle_z", "", r.mu1_hat, r.mu0_hat, r.ate_hat, 0);
  }
  if (!synthetic && !want_all && only != eval::PropensitySource::kEstimated) {
    throw ValidationError("oracle propensities exist only for synthetic data");
  }
  if (want_all || only == eval::PropensitySource::kEstimated) {
    const propensity::BallTree index(norm.x);
    for (double eps : cfg.epsilons) {
      propensity::PropensityConfig pc = cfg.base.propensity;
      pc.epsilon = eps;
      const auto est = propensity::estimate_propensity(index, norm.t, pc);
      const auto r = eval::ipw_ate(raw, est);
      if (est.clipped > 0) {
        std::cerr << "epsilon " << eps << ": " << est.clipped << " of " << est.e.size()
                  << " propensities clipped\n";
      }
      emit("estimated", fmt(eps), r.mu1_hat, r.mu0_hat, r.ate_hat, est.clipped);
    }
  }
  emit("naive", "", std::nan(""), std::nan(""), eval::naive_difference(raw), 0);
  const fs::path dir = kv.at("output.out_dir");
  harness::atomic_write(dir / ("ipw_" + name + ".csv"), out.str());
  std::cout << out.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal effect VAEs with importance-weighted training objectives"};
  app.require_subcommand(1);

  FlagSet gen_f, train_f, eval_f, sweep_f, ipw_f;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset with oracle columns");
  add_data_flags(gen, gen_f);
  add_output_flags(gen, gen_f);

  bool no_checkpoint = false;
  auto* tr = app.add_subcommand("train", "train and evaluate one (objective, epsilon, seed) cell");
  add_data_flags(tr, train_f);
  add_model_flags(tr, train_f);
  add_output_flags(tr, train_f);
  tr->add_flag("--no-checkpoint", no_checkpoint, "do not save the trained parameters");

  std::string checkpoint;
  auto* ev = app.add_subcommand("eval", "evaluate a saved checkpoint on the cell's evaluation rows");
  add_data_flags(ev, eval_f);
  add_model_flags(ev, eval_f);
  add_output_flags(ev, eval_f);
  ev->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();

  auto* sw = app.add_subcommand("sweep", "run a grid of cells and aggregate");
  add_data_flags(sw, sweep_f);
  add_model_flags(sw, sweep_f);
  add_output_flags(sw, sweep_f);
  sweep_f.add(sw, "--workers", "sweep.workers", "parallel cells");
  sweep_f.add(sw, "--seeds", "sweep.seeds", "seeds (synthetic) or replicates (IHDP) per cell");
  sweep_f.add(sw, "--select", "sweep.select", "epsilon reporting: best (by validation ELBO) or all");

  auto* ipw = app.add_subcommand("ipw", "inverse propensity weighting baseline");
  add_data_flags(ipw, ipw_f);
  add_output_flags(ipw, ipw_f);
  ipw_f.add(ipw, "--epsilon", "propensity.epsilon", "ball radii for the estimated propensity");
  ipw_f.add(ipw, "--source", "eval.source", "all|oracle_x|oracle_z|estimated");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(gen_f);
    if (*tr) return cmd_train(train_f, no_checkpoint);
    if (*ev) return cmd_eval(eval_f, checkpoint);
    if (*sw) return cmd_sweep(sweep_f);
    if (*ipw) return cmd_ipw(ipw_f);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
