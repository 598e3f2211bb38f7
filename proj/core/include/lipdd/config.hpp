#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipdd/dataset.hpp"
#include "lipdd/lipschitz.hpp"
#include "lipdd/network.hpp"
#include "lipdd/train.hpp"

namespace lipdd {

enum class SweepAxis { Width, Depth, Samples, Noise };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct ModelConfig {
  ModelFamily family = ModelFamily::FFRelu;
  std::size_t width = 256;  // hidden width (FF) or channel multiplier (CNN)
  std::size_t depth = 1;    // hidden layers, FF only
};

struct DataConfig {
  std::string source = "synthetic";  // mnist1d | cifar10 | synthetic
  std::string path;                  // MNIST1D CSV or CIFAR-10 directory
  std::string test_path;             // optional second MNIST1D file
  std::size_t synthetic_train = kMnist1dTrain;
  std::size_t synthetic_test = kMnist1dTest;
  std::size_t synthetic_dim = kMnist1dDim;
  std::size_t num_classes = 10;
  std::uint64_t synthetic_seed = 0;
  double shuffle_alpha = 0.0;
  bool shuffle_test = false;
  std::size_t subsample = 0;  // 0 keeps every training row
  std::uint64_t mutation_seed = 0;
  std::size_t test_limit = 0; // 0 keeps the full test split
};

struct TrainConfig {
  LossKind loss = LossKind::CrossEntropy;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double base_lr = 0.005;
  LrSchedule schedule = LrSchedule::constant();
  std::optional<double> grad_norm_threshold;  // unset: 0.01 for CE, 0.001 for MSE
  std::size_t min_epochs = 0;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 512;
};

struct EvalConfig {
  std::size_t cadence = 10;  // epochs between bound evaluations; 0 logs init and final only
  PowerIterSettings power;
  std::optional<std::size_t> probe_pairs;
  std::uint64_t probe_seed = 0;
  bool softmax = false;
};

struct SweepConfig {
  SweepAxis axis = SweepAxis::Width;
  std::vector<double> values{16, 32, 64, 80, 96, 128, 256, 512, 1024};
};

struct BiasVarConfig {
  std::uint64_t xprime_seed = 0;  // picks the random test point used as x′
};

/// Everything needed to reproduce a run. The JSON form is the file format;
/// `to_json` and `from_json` round-trip losslessly.
struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  SweepConfig sweep;
  BiasVarConfig biasvar;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  bool wall_time = false;  // real per-epoch timings in traces; off keeps reruns byte-identical

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
  /// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
  std::string hash() const;

  /// Architecture of a model at the base settings, or at an axis value.
  ArchSpec base_arch(std::size_t input_dim, std::size_t output_dim) const;
  ArchSpec arch_at(double axis_value, std::size_t input_dim, std::size_t output_dim) const;
  TrainOptions train_options(std::uint64_t seed) const;
  ReportOptions report_options() const;
};

/// Built-in layer applied under the file: `desk` or `paper`.
nlohmann::json profile_defaults(const std::string& profile);

/// Recursively copies `patch` into `base`. Every key in `patch` must already
/// exist in `base`; the first unknown key raises ConfigError naming its path.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "");

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// defaults ← profile ← file ← file's `profiles.<profile>` section ← overrides.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::string& profile,
                             const std::vector<std::string>& overrides);

/// The unmutated datasets a config refers to.
DatasetPair load_pristine(const DataConfig& data);

/// Label shuffling (train split, and test when `shuffle_test`), then training
/// subsampling, then the test limit. Each step is skipped when disabled.
DatasetPair apply_mutations(const DatasetPair& pristine, const DataConfig& data);

inline DatasetPair load_datasets(const ExperimentConfig& cfg) {
  return apply_mutations(load_pristine(cfg.data), cfg.data);
}

}  // namespace lipdd
