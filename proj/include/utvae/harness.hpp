#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "utvae/datagen.hpp"
#include "utvae/eval.hpp"
#include "utvae/propensity.hpp"
#include "utvae/training.hpp"

namespace utvae::harness {

using KeyValues = std::map<std::string, std::string>;

// Config file grammar, one item per line:
//   # comment        ; comment        blank lines are ignored
//   [section]        keys below become "section.key"
//   key = value      surrounding whitespace trimmed; a repeated key overrides
// Throws ValidationError with the line number on anything else.
KeyValues parse_config(std::istream& in, const std::string& origin = "config");
KeyValues parse_config_file(const std::filesystem::path& path);

// FNV-1a 64 over the sorted "key=value\n" lines, as 16 hex digits.
std::string config_hash(const KeyValues& kv);

// Writes `content` to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::vector<double> parse_double_list(const std::string& s);
std::vector<std::string> parse_string_list(const std::string& s);

enum class DatasetKind { kSynthetic, kIhdp };
DatasetKind parse_dataset_kind(const std::string& s);
std::string dataset_kind_name(DatasetKind k);

// One (data, objective, epsilon, seed) training and evaluation cell.
struct RunSpec {
  DatasetKind dataset = DatasetKind::kSynthetic;
  data::SyntheticConfig synthetic;   // synthetic: n is the training size
  std::size_t val_count = 1000;      // synthetic held-out sizes
  std::size_t test_count = 1000;
  std::filesystem::path ihdp_path;   // file or directory of replicates
  int replicate = 1;
  double treated_removal = 0.0;      // IHDP imbalance subsetting
  train::ObjectiveKind objective = train::ObjectiveKind::kCevae;
  double epsilon = 1.0;
  propensity::PropensityConfig propensity;  // epsilon above overrides propensity.epsilon
  std::uint64_t seed = 0;
  train::TrainConfig train;
  nets::ArchConfig arch;             // x_dim, x_binary and y_binary are filled from the data
  nets::CfQueryConfig query;

  KeyValues resolved() const;
};

struct RunRecord {
  KeyValues config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | error
  std::string error;
  eval::AteResult ate;
  eval::PeheResult pehe;
  double val_elbo = 0.0;
  double runtime_s = 0.0;
  std::size_t clipped = 0;  // propensities moved by clipping
  std::string checkpoint;
  std::string started;
  std::string finished;
  train::TrainReport report;

  std::string objective() const;
  double epsilon() const;  // NaN for cevae
};

struct PreparedData {
  data::Dataset train;
  data::Dataset val;
  data::Dataset eval;  // rows the effect metrics are computed on
};

// Generates or loads the cell's data, splits it and standardizes with
// training statistics.
PreparedData prepare_data(const RunSpec& spec, const data::Warn& warn = {});

// Importance weights for the training rows from the epsilon-ball estimate.
propensity::PropensityEstimate training_propensity(const data::Dataset& train, const RunSpec& spec);

struct RunOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  bool save_checkpoint = false;
  data::Warn log;
};

// Trains and evaluates one cell. Errors propagate.
RunRecord run_cell(const RunSpec& spec, const RunOptions& opts = {});

// Runs every cell with up to `workers` threads. A failing cell is recorded
// with its error string and never affects the others. Results keep the
// order of `cells`.
std::vector<RunRecord> run_sweep(const std::vector<RunSpec>& cells, std::size_t workers, const RunOptions& opts = {},
                                 const std::function<void(const RunRecord&)>& on_done = {});

// One JSON document per run.
std::string record_json(const RunRecord& r);

// Long-format CSV, one row per run.
inline constexpr const char* kRecordHeader =
    "dataset,objective,seed,epsilon,n,alpha,replicate,ate_err,pehe,ate_pred,ate_true,val_elbo,runtime_s,status,error,"
    "config_hash";
std::string record_csv_line(const RunRecord& r);
void write_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);

enum class SelectMode { kBestValElbo, kReportAll };
SelectMode parse_select_mode(const std::string& s);
std::string select_mode_name(SelectMode m);

// Mean and standard error of one cell group across seeds or replicates.
struct SummaryRow {
  std::string dataset;
  std::string objective;
  std::string n;
  std::string alpha;
  double epsilon = 0.0;  // NaN for cevae
  std::size_t count = 0;
  std::size_t failed = 0;
  double ate_mean = 0.0;
  double ate_se = 0.0;
  double pehe_mean = 0.0;
  double pehe_se = 0.0;
  double val_elbo_mean = 0.0;
  bool selected = false;  // best epsilon of its (dataset, objective, n, alpha) group
};

// Groups successful records by (dataset, objective, n, alpha, epsilon). With
// kBestValElbo only the epsilon with the highest mean validation ELBO is
// kept per group; kReportAll keeps every epsilon and flags the best one.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, SelectMode mode);
inline constexpr const char* kSummaryHeader =
    "dataset,objective,n,alpha,epsilon,count,failed,ate_mean,ate_se,pehe_mean,pehe_se,val_elbo_mean,selected";
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::string format_summary_table(const std::vector<SummaryRow>& rows);

// A full grid. Lists multiply out into cells.
struct ExperimentConfig {
  RunSpec base;
  std::vector<train::ObjectiveKind> objectives{train::ObjectiveKind::kCevae, train::ObjectiveKind::kUtvae};
  std::vector<double> epsilons{0.5, 1.0, 1.5, 2.0};
  std::vector<double> alphas;        // synthetic balance axis; empty uses base
  std::vector<std::size_t> sizes;    // synthetic size axis; empty uses base
  std::size_t seeds = 30;            // synthetic regenerations or IHDP replicates
  std::uint64_t seed_base = 0;
  std::filesystem::path out_dir;
  std::size_t workers = 1;
  SelectMode select = SelectMode::kBestValElbo;
  bool save_checkpoint = false;

  void validate() const;
};

std::vector<RunSpec> build_cells(const ExperimentConfig& cfg);

// Settings use "section.key" names, e.g. data.n or train.lr. A config file
// supplies them through its [section] headers; command-line flags are
// layered on top with merge_settings.
const std::vector<std::string>& known_setting_keys();
// Returns `base` with every entry of `overrides` applied. Throws
// ValidationError on an unknown key in either map.
KeyValues merge_settings(const KeyValues& base, const KeyValues& overrides);
// Keys holding lists (train.objective, propensity.epsilon, data.alpha,
// data.n) expand into grid axes.
ExperimentConfig experiment_from_settings(const KeyValues& settings);

}  // namespace utvae::harness
