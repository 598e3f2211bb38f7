#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipdd/biasvar.hpp"
#include "lipdd/config.hpp"
#include "lipdd/network.hpp"
#include "lipdd/train.hpp"

namespace lipdd {

inline constexpr const char* kWorkersEnv = "LIPDD_WORKERS";

/// Toolkit version string, as written to every run directory.
const char* toolkit_version();

/// Worker count from LIPDD_WORKERS, else the hardware thread count (≥ 1).
std::size_t default_workers();

/// Smallest hidden width w with param_count(w) ≥ n (CE) or K·n (MSE) for an
/// FF ReLU net with `depth` equal hidden layers.
std::size_t interpolation_threshold(std::size_t n_samples, std::size_t input_dim,
                                    std::size_t output_dim, LossKind loss, std::size_t depth = 1);

/// Smallest CNN width reaching the same target, for a 3-channel square image.
std::size_t cnn_interpolation_threshold(std::size_t n_samples, std::size_t image_side,
                                        std::size_t output_dim, LossKind loss);

struct SweepRecord {
  std::string config_hash;
  double size = 0.0;  // value along the sweep axis
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double c_lower = 0.0;
  double c_avg_norm = 0.0;
  double c_upper = 0.0;
  std::optional<double> c_probe;
  double param_dist = 0.0;
  double grad_norm = 0.0;
  double eta = 0.0;

  /// c_avg_norm ≤ c_lower ≤ c_probe ≤ c_upper up to rounding-level slack.
  bool ordered(double rel_slack = 1e-9) const;
};

nlohmann::ordered_json record_json(const SweepRecord& r);
SweepRecord record_from_json(const nlohmann::json& j);

struct CellFailure {
  double size = 0.0;
  std::uint64_t seed = 0;
  std::string message;
};

/// One trained (size, seed) grid cell.
struct CellResult {
  double size = 0.0;
  std::uint64_t seed = 0;
  std::vector<SweepRecord> records;
  TrainTrace trace;
  std::optional<Network> network;  // final network, kept on request
  std::vector<double> final_sample_norms;  // per-train-sample Jacobian norms at the end
  std::optional<std::string> error;
};

/// Per-quantity mean, min and max over the seeds of one size.
struct Stat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();

  friend bool operator==(const Stat&, const Stat&) = default;
};

/// Final-epoch summary of one size. `c_lower` aggregates the per-seed sups
/// (mean of sups); `c_lower_sup_of_mean` is sup over samples of the
/// seed-averaged per-sample norm.
struct SummaryRow {
  double size = 0.0;
  std::size_t seeds = 0;
  Stat train_loss, test_loss, c_lower, c_avg_norm, c_upper, c_probe, param_dist, grad_norm;
  double c_lower_sup_of_mean = std::numeric_limits<double>::quiet_NaN();
  double epochs_mean = 0.0;

  bool bit_equal(const SummaryRow& other) const;
};

struct SweepTable {
  std::string config_hash;
  SweepAxis axis = SweepAxis::Width;
  std::vector<SweepRecord> records;
  std::vector<SummaryRow> summary;
  std::vector<CellFailure> failures;
};

struct RunOptions {
  std::size_t workers = 1;
  bool keep_networks = false;
  /// Progress messages, e.g. to stderr. May be called from worker threads
  /// (calls are serialized).
  std::function<void(const std::string&)> log;
};

/// Datasets for one value of the sweep axis (noise and samples axes mutate).
DatasetPair datasets_for(const ExperimentConfig& cfg, const DatasetPair& pristine, double value);

/// Trains one cell and evaluates bounds at epoch 0, every `eval.cadence`
/// epochs, and the final epoch. Errors are captured in `error`.
CellResult run_cell(const ExperimentConfig& cfg, const DatasetPair& data, double value,
                    std::uint64_t seed, bool keep_network);

/// Runs the size × seed grid on a worker pool. Cell order in the output does
/// not depend on scheduling.
std::vector<CellResult> run_grid(const ExperimentConfig& cfg, const DatasetPair& pristine,
                                 const RunOptions& options);

SweepTable make_table(const ExperimentConfig& cfg, const std::vector<CellResult>& cells);
std::vector<SummaryRow> summarize(const std::vector<SweepRecord>& final_records,
                                  const std::vector<CellResult>& cells);

/// Width, depth, samples or noise sweep according to `cfg.sweep.axis`.
SweepTable run_sweep(const ExperimentConfig& cfg, const DatasetPair& pristine,
                     const RunOptions& options, std::vector<CellResult>* cells_out = nullptr);

/// The axis-specific entry points; each checks the config's axis.
SweepTable run_width_sweep(const ExperimentConfig& cfg, const DatasetPair& pristine, const RunOptions& o);
SweepTable run_depth_sweep(const ExperimentConfig& cfg, const DatasetPair& pristine, const RunOptions& o);
SweepTable run_samples_sweep(const ExperimentConfig& cfg, const DatasetPair& pristine, const RunOptions& o);
SweepTable run_noise_sweep(const ExperimentConfig& cfg, const DatasetPair& pristine, const RunOptions& o);

/// One row per (width, x′ choice).
struct BiasVarRow {
  double width = 0.0;
  BiasVarReport report;
};

struct BiasVarTable {
  std::vector<BiasVarRow> rows;
  std::vector<CellFailure> failures;
};

/// Trains a seed ensemble per width, then reports the decomposition and both
/// bound variants for x′ = 0 and for one seeded random test point.
BiasVarTable sweep_biasvar(const ExperimentConfig& cfg, const DatasetPair& pristine,
                           const RunOptions& options);

// CSV and JSONL forms. Doubles are written with 17 significant digits so a
// read-back is bit-exact.
void write_records_jsonl(std::ostream& out, const std::vector<SweepRecord>& records);
std::vector<SweepRecord> read_records_jsonl(std::istream& in);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(std::istream& in);
void write_biasvar_csv(std::ostream& out, const BiasVarTable& table);
/// Reads the columns written above; upper-estimate constants are not stored
/// and come back as zero.
BiasVarTable read_biasvar_csv(std::istream& in);

/// Plot families: bounds-vs-width, bounds-vs-epoch, param-dist-vs-width use
/// the sweep table; variance-vs-width uses bias-variance rows.
void emit_plot_data(std::ostream& out, const SweepTable& table, const std::string& kind);
void emit_plot_data(std::ostream& out, const BiasVarTable& table, const std::string& kind);

std::string format_double(double v);

/// Run directory `<root>/<config hash>` holding config.json and VERSION.
std::filesystem::path prepare_run_dir(const std::filesystem::path& root, const ExperimentConfig& cfg);

/// Writes records.jsonl, summary.csv, failures.jsonl, per-cell traces and
/// final checkpoints into `dir`.
void write_sweep_outputs(const std::filesystem::path& dir, const SweepTable& table,
                         const std::vector<CellResult>& cells);

}  // namespace lipdd
