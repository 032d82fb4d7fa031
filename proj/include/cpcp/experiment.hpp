#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cpcp/conformal.hpp"
#include "cpcp/data.hpp"

namespace cpcp {

/// Registered method names accepted in configs and on the command line.
const std::vector<std::string>& registered_methods();

struct MetricParams {
  std::vector<std::size_t> msce_k = {10, 50};  // subset of {10, 50}
  double wsc_mass_fraction = 0.1;
  std::size_t wsc_directions = 1000;  // 0 disables the WSC metric
  bool oracle = true;                 // exact MSCE when the dataset has an oracle
};

struct DatasetSpec {
  std::string name = "synthetic-default";
  std::string preset = "default";  // synthetic preset; empty means CSV
  std::size_t n = 8000;            // synthetic sample size
  std::string csv_path;
  std::vector<std::string> feature_cols, label_cols;

  bool is_synthetic() const { return csv_path.empty(); }
};

struct TrainingParams {
  std::vector<std::size_t> mu_hidden = {64, 64};
  std::vector<std::size_t> quantile_hidden = {256, 256};
  std::vector<std::size_t> plcp_hidden = {64};
  std::size_t mu_epochs = 100;
  std::size_t pretrain_epochs = 100;
  std::size_t finetune_epochs = 50;
  std::size_t cqr_epochs = 100;
  std::size_t ald_epochs = 100;
  std::size_t plcp_epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<std::string> methods = {"split", "rcp", "cpcp-clip-mix"};
  double tau = 0.9;
  double delta = 0.02;
  double clip_m = 5.0;
  double lambda = 0.5;
  std::size_t reps = 20;
  std::uint64_t master_seed = 0;
  MetricParams metrics;
  TrainingParams training;
  std::string out_path = "results.csv";
  std::string format = "csv";
  bool emit_wall_time = false;  // off by default so result files are byte-stable
  std::string model_dir;        // when set, fitted predictors are checkpointed here

  void validate() const;  // throws std::invalid_argument with a diagnostic
};

/// Flat key-value config with [section] headers and '#' comments.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::string& path);

/// One evaluation record per (dataset, method, repetition). Metric fields are
/// empty when disabled, inapplicable, or when the cell errored.
struct ResultRow {
  std::string dataset, method;
  std::uint64_t seed = 0;  // repetition index, which names the derived stream
  std::optional<double> marginal_coverage, msce_k10, msce_k50, oracle_msce, wsc,
      log_volume_per_dim, wall_time_seconds;
  std::string status = "ok";
};

/// Monte-Carlo benchmark: per repetition, regenerate/resplit data, fit every
/// method on identical train/calibration indices, evaluate on the shared test
/// set. A failing method cell is recorded in its row's status without
/// aborting the others. Deterministic given the config.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

void emit_results_csv(const std::vector<ResultRow>& rows, std::ostream& os);
void emit_results_json(const std::vector<ResultRow>& rows, std::ostream& os);
void emit_results(const std::vector<ResultRow>& rows, const std::string& path,
                  const std::string& format);
std::vector<ResultRow> parse_results_csv(std::istream& is);

struct SummaryCell {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
  std::size_t count = 0;
};

struct SummaryRow {
  std::string dataset, method;
  SummaryCell marginal_coverage, msce_k10, msce_k50, oracle_msce, wsc, log_volume_per_dim,
      wall_time_seconds;
  std::size_t rows = 0;
  std::size_t errors = 0;
};

/// Per-(dataset, method) mean +/- sample std over rows with status "ok".
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);
std::string format_summary(const std::vector<SummaryRow>& summary);

/// Predictor checkpoint: feature transform plus the fitted method, flat binary
/// (magic bytes, dims, row-major little-endian f64).
struct PredictorCheckpoint {
  Standardizer feature_transform;
  std::unique_ptr<ConformalPredictor> predictor;
};

void save_predictor(const ConformalPredictor& pred, const Standardizer& feature_transform,
                    const std::string& path);
PredictorCheckpoint load_predictor(const std::string& path);

}  // namespace cpcp
