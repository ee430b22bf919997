#include "utvae/harness.hpp"

#include <algorithm>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "utvae/error.hpp"

namespace utvae::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + '"';
}

std::string lookup(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  return it == kv.end() ? "" : it->second;
}

}  // namespace

// --- config ---------------------------------------------------------------

KeyValues parse_config(std::istream& in, const std::string& origin) {
  KeyValues kv;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) {
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      }
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = trim(s.substr(eq + 1));
  }
  return kv;
}

KeyValues parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

std::string config_hash(const KeyValues& kv) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : kv) {
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> parse_string_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : parse_string_list(s)) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end != item.c_str() + item.size() || !std::isfinite(v)) {
      throw ValidationError("not a number: '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "synthetic") return DatasetKind::kSynthetic;
  if (s == "ihdp") return DatasetKind::kIhdp;
  throw ValidationError("unknown dataset '" + s + "' (synthetic|ihdp)");
}

std::string dataset_kind_name(DatasetKind k) { return k == DatasetKind::kSynthetic ? "synthetic" : "ihdp"; }

// --- runs -------------------------------------------------------------------

KeyValues RunSpec::resolved() const {
  KeyValues kv;
  kv["dataset"] = dataset_kind_name(dataset);
  kv["objective"] = train::objective_name(objective);
  kv["seed"] = std::to_string(seed);
  if (train::needs_weights(objective)) {
    kv["epsilon"] = fmt(epsilon);
    kv["smoothing"] = fmt(propensity.smoothing);
    kv["clip_lo"] = fmt(propensity.clip_lo);
    kv["clip_hi"] = fmt(propensity.clip_hi);
  }
  if (dataset == DatasetKind::kSynthetic) {
    kv["n"] = std::to_string(synthetic.n);
    kv["alpha"] = fmt(synthetic.alpha);
    kv["rho_z1"] = fmt(synthetic.rho_z1);
    kv["rho_z0"] = fmt(synthetic.rho_z0);
    kv["variance"] = data::variance_form_name(synthetic.variance);
    kv["val_count"] = std::to_string(val_count);
    kv["test_count"] = std::to_string(test_count);
  } else {
    kv["ihdp_path"] = ihdp_path.string();
    kv["replicate"] = std::to_string(replicate);
    kv["treated_removal"] = fmt(treated_removal);
  }
  kv["epochs"] = std::to_string(train.epochs);
  kv["batch"] = std::to_string(train.batch_size);
  kv["lr"] = fmt(train.lr);
  kv["elbo_samples"] = std::to_string(train.elbo_samples);
  kv["latent_dim"] = std::to_string(arch.z_dim);
  kv["hidden_layers"] = std::to_string(arch.hidden_layers);
  kv["hidden_units"] = std::to_string(arch.hidden_units);
  kv["activation"] = std::string(diff::activation_name(arch.activation));
  kv["mc_samples"] = std::to_string(query.mc_samples);
  return kv;
}

std::string RunRecord::objective() const { return lookup(config, "objective"); }

double RunRecord::epsilon() const {
  const std::string e = lookup(config, "epsilon");
  return e.empty() ? std::nan("") : std::stod(e);
}

PreparedData prepare_data(const RunSpec& spec, const data::Warn& warn) {
  PreparedData out;
  if (spec.dataset == DatasetKind::kSynthetic) {
    data::SyntheticConfig cfg = spec.synthetic;
    cfg.n = spec.synthetic.n + spec.val_count + spec.test_count;
    cfg.seed = spec.seed;
    const data::Dataset full = data::gen_synthetic(cfg);
    const data::Splits s =
        data::split(full, data::SplitSpec::counts(spec.synthetic.n, spec.val_count, spec.test_count, spec.seed));
    const data::Normalization norm = data::fit_normalization(s.train, warn);
    out.train = data::apply_normalization(s.train, norm);
    out.val = data::apply_normalization(s.val, norm);
    out.eval = data::apply_normalization(s.test, norm);
  } else {
    data::Dataset full = data::load_ihdp(spec.ihdp_path, spec.replicate);
    if (spec.treated_removal > 0.0) full = data::remove_treated_fraction(full, spec.treated_removal, spec.seed);
    data::SplitSpec ss;
    ss.replicate = spec.replicate;
    ss.seed = spec.seed;
    const data::Splits s = data::split(full, ss);
    const data::Normalization norm = data::fit_normalization(s.train, warn);
    out.train = data::apply_normalization(s.train, norm);
    out.val = data::apply_normalization(s.val, norm);
    out.eval = data::apply_normalization(full, norm);
  }
  return out;
}

propensity::PropensityEstimate training_propensity(const data::Dataset& train, const RunSpec& spec) {
  propensity::PropensityConfig pc = spec.propensity;
  pc.epsilon = spec.epsilon;
  const propensity::BallTree index(train.x);
  return propensity::estimate_propensity(index, train.t, pc);
}

RunRecord run_cell(const RunSpec& spec, const RunOptions& opts) {
  RunRecord rec;
  rec.config = spec.resolved();
  rec.config_hash = config_hash(rec.config);
  rec.seed = spec.seed;
  rec.started = now_iso();
  const auto start = std::chrono::steady_clock::now();

  const PreparedData d = prepare_data(spec, opts.log);
  nets::ArchConfig arch = spec.arch;
  arch.x_dim = d.train.dim();
  arch.x_binary = d.train.x_binary;
  arch.y_binary = d.train.y_binary;
  nets::CevaeModel model(arch, spec.seed);

  train::TrainConfig tc = spec.train;
  tc.objective = spec.objective;
  tc.seed = spec.seed;
  std::optional<std::span<const double>> weights;
  propensity::ImportanceWeights w;
  if (train::needs_weights(spec.objective)) {
    const propensity::PropensityEstimate est = training_propensity(d.train, spec);
    rec.clipped = est.clipped;
    w = propensity::importance_weights(est, d.train.t);
    weights = std::span<const double>(w.w);
  }
  rec.report = train::train(model, d.train, &d.val, weights, tc);
  rec.val_elbo = rec.report.final_val_elbo();

  eval::Rng rng(spec.seed ^ 0x5DEECE66DULL);
  const eval::EffectMetrics m = eval::model_metrics(model, d.eval, spec.query, rng);
  rec.ate = m.ate;
  rec.pehe = m.pehe;
  rec.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rec.finished = now_iso();

  if (!opts.out_dir.empty()) {
    const std::filesystem::path dir = opts.out_dir / "runs";
    std::filesystem::create_directories(dir);
    if (opts.save_checkpoint) {
      const std::filesystem::path ckpt = dir / (rec.config_hash + ".ckpt");
      nets::save_checkpoint(model, ckpt);
      rec.checkpoint = ckpt.string();
      rec.report.checkpoint = rec.checkpoint;
    }
    train::write_train_report_csv(rec.report, dir / (rec.config_hash + ".train.csv"));
    atomic_write(dir / (rec.config_hash + ".json"), record_json(rec));
  }
  return rec;
}

std::vector<RunRecord> run_sweep(const std::vector<RunSpec>& cells, std::size_t workers, const RunOptions& opts,
                                 const std::function<void(const RunRecord&)>& on_done) {
  std::vector<RunRecord> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      RunRecord rec;
      try {
        rec = run_cell(cells[i], opts);
      } catch (const std::exception& e) {
        rec = RunRecord{};
        rec.config = cells[i].resolved();
        rec.config_hash = config_hash(rec.config);
        rec.seed = cells[i].seed;
        rec.status = "error";
        rec.error = e.what();
        rec.finished = now_iso();
      }
      results[i] = std::move(rec);
      if (on_done) {
        std::lock_guard<std::mutex> lock(done_mutex);
        on_done(results[i]);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  return results;
}

// --- output -----------------------------------------------------------------

std::string record_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  j["metrics"] = {{"ate_pred", r.ate.ate_pred}, {"ate_true", r.ate.ate_true}, {"ate_err", r.ate.abs_err},
                  {"pehe", r.pehe.pehe},        {"val_elbo", r.val_elbo},     {"clipped", r.clipped}};
  j["runtime_s"] = r.runtime_s;
  j["checkpoint"] = r.checkpoint;
  j["started"] = r.started;
  j["finished"] = r.finished;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const train::EpochStats& e : r.report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_elbo", e.train_elbo},
                      {"val_elbo", std::isfinite(e.val_elbo) ? nlohmann::ordered_json(e.val_elbo) : nullptr},
                      {"aux_ll", e.aux_ll}});
  }
  j["epochs"] = std::move(epochs);
  return j.dump(2) + "\n";
}

std::string record_csv_line(const RunRecord& r) {
  std::ostringstream os;
  const bool ok = r.status == "ok";
  os << lookup(r.config, "dataset") << ',' << r.objective() << ',' << r.seed << ',' << lookup(r.config, "epsilon")
     << ',' << lookup(r.config, "n") << ',' << lookup(r.config, "alpha") << ',' << lookup(r.config, "replicate")
     << ',';
  if (ok) {
    os << fmt(r.ate.abs_err) << ',' << fmt(r.pehe.pehe) << ',' << fmt(r.ate.ate_pred) << ',' << fmt(r.ate.ate_true)
       << ',' << fmt(r.val_elbo);
  } else {
    os << ",,,,";
  }
  os << ',' << fmt(r.runtime_s) << ',' << r.status << ',' << csv_field(r.error) << ',' << r.config_hash;
  return os.str();
}

void write_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  std::string content = std::string(kRecordHeader) + "\n";
  for (const RunRecord& r : records) content += record_csv_line(r) + "\n";
  atomic_write(path, content);
}

SelectMode parse_select_mode(const std::string& s) {
  if (s == "best") return SelectMode::kBestValElbo;
  if (s == "all") return SelectMode::kReportAll;
  throw ValidationError("unknown selection mode '" + s + "' (best|all)");
}

std::string select_mode_name(SelectMode m) { return m == SelectMode::kBestValElbo ? "best" : "all"; }

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, SelectMode mode) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string>;
  std::map<Key, std::vector<const RunRecord*>> groups;
  std::map<Key, std::size_t> failures;
  for (const RunRecord& r : records) {
    const Key k{lookup(r.config, "dataset"), r.objective(), lookup(r.config, "n"), lookup(r.config, "alpha"),
                lookup(r.config, "epsilon")};
    if (r.status == "ok") {
      groups[k].push_back(&r);
    } else {
      ++failures[k];
      groups[k];
    }
  }
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    mean = 0.0;
    se = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  };

  std::vector<SummaryRow> rows;
  for (const auto& [k, recs] : groups) {
    SummaryRow row;
    std::tie(row.dataset, row.objective, row.n, row.alpha, std::ignore) = k;
    const std::string& eps = std::get<4>(k);
    row.epsilon = eps.empty() ? std::nan("") : std::stod(eps);
    row.count = recs.size();
    row.failed = failures.count(k) ? failures.at(k) : 0;
    std::vector<double> ate, pehe, elbo;
    for (const RunRecord* r : recs) {
      ate.push_back(r->ate.abs_err);
      pehe.push_back(r->pehe.pehe);
      elbo.push_back(r->val_elbo);
    }
    double unused = 0.0;
    mean_se(ate, row.ate_mean, row.ate_se);
    mean_se(pehe, row.pehe_mean, row.pehe_se);
    mean_se(elbo, row.val_elbo_mean, unused);
    if (recs.empty()) row.val_elbo_mean = std::nan("");
    rows.push_back(row);
  }

  // Best epsilon per (dataset, objective, n, alpha) by mean validation ELBO.
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto g = std::make_tuple(rows[i].dataset, rows[i].objective, rows[i].n, rows[i].alpha);
    if (rows[i].count == 0) continue;
    const auto it = best.find(g);
    if (it == best.end() || rows[i].val_elbo_mean > rows[it->second].val_elbo_mean) best[g] = i;
  }
  for (const auto& [g, i] : best) rows[i].selected = true;
  if (mode == SelectMode::kBestValElbo) std::erase_if(rows, [](const SummaryRow& r) { return !r.selected; });
  return rows;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const SummaryRow& r : rows) {
    os << r.dataset << ',' << r.objective << ',' << r.n << ',' << r.alpha << ','
       << (std::isnan(r.epsilon) ? "" : fmt(r.epsilon)) << ',' << r.count << ',' << r.failed << ','
       << fmt(r.ate_mean) << ',' << fmt(r.ate_se) << ',' << fmt(r.pehe_mean) << ',' << fmt(r.pehe_se) << ','
       << fmt(r.val_elbo_mean) << ',' << (r.selected ? 1 : 0) << '\n';
  }
  atomic_write(path, os.str());
}

std::string format_summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "dataset" << std::setw(11) << "objective" << std::setw(7) << "n"
     << std::setw(7) << "alpha" << std::setw(6) << "eps" << std::setw(6) << "runs" << std::setw(22) << "ate_err"
     << std::setw(22) << "pehe" << "val_elbo\n";
  for (const SummaryRow& r : rows) {
    std::ostringstream eps, ate, pehe;
    eps << (std::isnan(r.epsilon) ? std::string("-") : fmt(r.epsilon)) << (r.selected ? "*" : "");
    ate << std::fixed << std::setprecision(4) << r.ate_mean << " +- " << r.ate_se;
    pehe << std::fixed << std::setprecision(4) << r.pehe_mean << " +- " << r.pehe_se;
    os << std::left << std::setw(10) << r.dataset << std::setw(11) << r.objective << std::setw(7)
       << (r.n.empty() ? "-" : r.n) << std::setw(7) << (r.alpha.empty() ? "-" : r.alpha) << std::setw(6) << eps.str()
       << std::setw(6) << (std::to_string(r.count) + (r.failed ? "!" : "")) << std::setw(22) << ate.str()
       << std::setw(22) << pehe.str() << std::fixed << std::setprecision(4) << r.val_elbo_mean << '\n';
  }
  return os.str();
}

// --- grids ------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (objectives.empty()) throw ValidationError("experiment: objective list is empty");
  for (double e : epsilons)
    if (!(e > 0.0)) throw ValidationError("experiment: every epsilon must be > 0");
  if (std::any_of(objectives.begin(), objectives.end(), train::needs_weights) && epsilons.empty()) {
    throw ValidationError("experiment: weighted objectives need at least one epsilon");
  }
  if (seeds == 0) throw ValidationError("experiment: need at least one seed or replicate");
  if (workers == 0) throw ValidationError("experiment: workers must be >= 1");
  for (double a : alphas) {
    data::SyntheticConfig c = base.synthetic;
    c.alpha = a;
    c.validate();
  }
  for (std::size_t n : sizes)
    if (n == 0) throw ValidationError("experiment: sizes must be >= 1");
  base.train.validate();
  base.arch.validate();
}

std::vector<RunSpec> build_cells(const ExperimentConfig& cfg) {
  cfg.validate();
  const bool synthetic = cfg.base.dataset == DatasetKind::kSynthetic;
  const std::vector<std::size_t> sizes =
      synthetic && !cfg.sizes.empty() ? cfg.sizes : std::vector<std::size_t>{cfg.base.synthetic.n};
  const std::vector<double> alphas =
      synthetic && !cfg.alphas.empty() ? cfg.alphas : std::vector<double>{cfg.base.synthetic.alpha};
  std::vector<RunSpec> cells;
  for (std::size_t n : sizes) {
    for (double alpha : alphas) {
      for (std::size_t s = 0; s < cfg.seeds; ++s) {
        for (train::ObjectiveKind obj : cfg.objectives) {
          const std::vector<double> eps = train::needs_weights(obj) ? cfg.epsilons : std::vector<double>{0.0};
          for (double e : eps) {
            RunSpec c = cfg.base;
            c.synthetic.n = n;
            c.synthetic.alpha = alpha;
            c.seed = cfg.seed_base + s;
            if (!synthetic) c.replicate = static_cast<int>(s) + 1;
            c.objective = obj;
            if (train::needs_weights(obj)) c.epsilon = e;
            cells.push_back(std::move(c));
          }
        }
      }
    }
  }
  return cells;
}

}  // namespace utvae::harness

// --- settings ---------------------------------------------------------------

namespace utvae::harness {

const std::vector<std::string>& known_setting_keys() {
  static const std::vector<std::string> keys{
      "data.dataset",    "data.n",           "data.alpha",        "data.seed",          "data.variance",
      "data.rho_z1",     "data.rho_z0",      "data.val",          "data.test",          "data.path",
      "data.replicate",  "data.treated_removal",
      "model.latent_dim", "model.hidden_layers", "model.hidden_units", "model.activation",
      "train.objective", "train.epochs",     "train.lr",          "train.batch",        "train.elbo_samples",
      "propensity.epsilon", "propensity.smoothing", "propensity.clip_lo", "propensity.clip_hi",
      "eval.mc_samples", "eval.checkpoint",  "eval.source",
      "sweep.seeds",     "sweep.seed_base",  "sweep.workers",     "sweep.select",
      "output.out_dir",  "output.save_checkpoint"};
  return keys;
}

namespace {

void check_keys(const KeyValues& kv) {
  const auto& keys = known_setting_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ValidationError("unknown setting '" + k + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(out);
}

double to_double(const std::string& key, const std::string& v) {
  const auto list = parse_double_list(v);
  if (list.size() != 1) throw ValidationError(key + ": expected one number, got '" + v + "'");
  return list[0];
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace

KeyValues merge_settings(const KeyValues& base, const KeyValues& overrides) {
  check_keys(base);
  check_keys(overrides);
  KeyValues out = base;
  for (const auto& [k, v] : overrides) out[k] = v;
  return out;
}

ExperimentConfig experiment_from_settings(const KeyValues& settings) {
  check_keys(settings);
  auto get = [&](const std::string& k) -> std::optional<std::string> {
    const auto it = settings.find(k);
    if (it == settings.end()) return std::nullopt;
    return it->second;
  };
  ExperimentConfig cfg;
  RunSpec& b = cfg.base;
  if (auto v = get("data.dataset")) b.dataset = parse_dataset_kind(*v);
  const bool ihdp = b.dataset == DatasetKind::kIhdp;
  b.train.epochs = ihdp ? 200 : 100;
  b.train.batch_size = ihdp ? 128 : 256;
  cfg.epsilons = ihdp ? std::vector<double>{2.0, 2.5, 3.0, 3.5, 4.0, 5.0} : std::vector<double>{0.5, 1.0, 1.5, 2.0};
  cfg.seeds = ihdp ? 8 : 30;

  if (auto v = get("data.n")) {
    std::vector<std::size_t> sizes;
    for (const std::string& s : parse_string_list(*v)) sizes.push_back(to_count("data.n", s));
    if (sizes.empty()) throw ValidationError("data.n: empty list");
    b.synthetic.n = sizes.front();
    if (sizes.size() > 1) cfg.sizes = sizes;
  }
  if (auto v = get("data.alpha")) {
    const auto alphas = parse_double_list(*v);
    if (alphas.empty()) throw ValidationError("data.alpha: empty list");
    b.synthetic.alpha = alphas.front();
    if (alphas.size() > 1) cfg.alphas = alphas;
  }
  if (auto v = get("data.seed")) {
    b.seed = to_count("data.seed", *v);
    cfg.seed_base = b.seed;
  }
  if (auto v = get("data.variance")) b.synthetic.variance = data::parse_variance_form(*v);
  if (auto v = get("data.rho_z1")) b.synthetic.rho_z1 = to_double("data.rho_z1", *v);
  if (auto v = get("data.rho_z0")) b.synthetic.rho_z0 = to_double("data.rho_z0", *v);
  if (auto v = get("data.val")) b.val_count = to_count("data.val", *v);
  if (auto v = get("data.test")) b.test_count = to_count("data.test", *v);
  if (auto v = get("data.path")) b.ihdp_path = *v;
  if (auto v = get("data.replicate")) b.replicate = static_cast<int>(to_count("data.replicate", *v));
  if (auto v = get("data.treated_removal")) b.treated_removal = to_double("data.treated_removal", *v);

  if (auto v = get("model.latent_dim")) b.arch.z_dim = to_count("model.latent_dim", *v);
  if (auto v = get("model.hidden_layers")) b.arch.hidden_layers = to_count("model.hidden_layers", *v);
  if (auto v = get("model.hidden_units")) b.arch.hidden_units = to_count("model.hidden_units", *v);
  if (auto v = get("model.activation")) b.arch.activation = diff::parse_activation(*v);

  if (auto v = get("train.objective")) {
    cfg.objectives.clear();
    for (const std::string& s : parse_string_list(*v)) cfg.objectives.push_back(train::parse_objective(s));
    if (!cfg.objectives.empty()) b.objective = cfg.objectives.front();
  }
  if (auto v = get("train.epochs")) b.train.epochs = to_count("train.epochs", *v);
  if (auto v = get("train.lr")) b.train.lr = to_double("train.lr", *v);
  if (auto v = get("train.batch")) b.train.batch_size = to_count("train.batch", *v);
  if (auto v = get("train.elbo_samples")) b.train.elbo_samples = to_count("train.elbo_samples", *v);

  if (auto v = get("propensity.epsilon")) {
    cfg.epsilons = parse_double_list(*v);
    if (!cfg.epsilons.empty()) b.epsilon = cfg.epsilons.front();
  } else {
    b.epsilon = ihdp ? 3.0 : 1.0;
  }
  if (auto v = get("propensity.smoothing")) b.propensity.smoothing = to_double("propensity.smoothing", *v);
  if (auto v = get("propensity.clip_lo")) b.propensity.clip_lo = to_double("propensity.clip_lo", *v);
  if (auto v = get("propensity.clip_hi")) b.propensity.clip_hi = to_double("propensity.clip_hi", *v);
  b.propensity.epsilon = b.epsilon;

  if (auto v = get("eval.mc_samples")) b.query.mc_samples = to_count("eval.mc_samples", *v);
  if (auto v = get("sweep.seeds")) cfg.seeds = to_count("sweep.seeds", *v);
  if (auto v = get("sweep.seed_base")) cfg.seed_base = to_count("sweep.seed_base", *v);
  if (auto v = get("sweep.workers")) cfg.workers = to_count("sweep.workers", *v);
  if (auto v = get("sweep.select")) cfg.select = parse_select_mode(*v);
  if (auto v = get("output.out_dir")) cfg.out_dir = *v;
  if (auto v = get("output.save_checkpoint")) cfg.save_checkpoint = to_bool("output.save_checkpoint", *v);

  b.synthetic.validate();
  b.propensity.validate();
  if (b.query.mc_samples == 0) throw ValidationError("eval.mc_samples must be >= 1");
  if (b.treated_removal < 0.0 || b.treated_removal >= 1.0) {
    throw ValidationError("data.treated_removal must be in [0, 1)");
  }
  cfg.validate();
  return cfg;
}

}  // namespace utvae::harness
