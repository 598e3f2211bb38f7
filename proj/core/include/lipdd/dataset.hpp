#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lipdd/linalg.hpp"

namespace lipdd {

enum class Split { Train, Test };

/// One recorded transformation applied to a pristine source dataset.
struct Mutation {
  enum class Kind { ShuffleLabels, Subsample };
  Kind kind = Kind::ShuffleLabels;
  double alpha = 0.0;      // ShuffleLabels: fraction of positions eligible
  std::size_t count = 0;   // Subsample: rows kept
  std::uint64_t seed = 0;

  friend bool operator==(const Mutation&, const Mutation&) = default;
};

struct Provenance {
  std::string source;  // "mnist1d", "cifar10", "synthetic", "csv"
  std::vector<Mutation> mutations;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Labeled samples: one row of `inputs` per sample, labels in [0, num_classes).
struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 10;
  Split split = Split::Train;
  Provenance provenance;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols(); }
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

inline constexpr std::size_t kMnist1dDim = 40;
inline constexpr std::size_t kMnist1dTrain = 4000;
inline constexpr std::size_t kMnist1dTest = 1000;
inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Reads a labeled CSV with header `label,x0,...,x{d-1}` or
/// `split,label,x0,...` (split column values `train` / `test`). Returns the
/// rows of each split; a file without a split column yields only `train`.
DatasetPair read_labeled_csv(const std::filesystem::path& path, std::size_t expected_dim,
                             std::size_t num_classes = 10);

/// MNIST1D export: either one file with a split column, or a train file plus
/// a test file. Enforces 4000 / 1000 rows of 40 features.
DatasetPair load_mnist1d(const std::filesystem::path& path);
DatasetPair load_mnist1d(const std::filesystem::path& train_path,
                         const std::filesystem::path& test_path);

/// One CIFAR-10 binary batch: 3073-byte records, label byte then R, G, B planes.
/// Pixels are scaled to [0, 1].
Dataset read_cifar10_batch(const std::filesystem::path& path, Split split);
/// data_batch_{1..5}.bin and test_batch.bin from `dir`; enforces 50 000 / 10 000.
DatasetPair load_cifar10(const std::filesystem::path& dir);

/// Permutes the labels at ⌊αN⌋ positions chosen without replacement.
Dataset shuffle_labels(const Dataset& d, double alpha, std::uint64_t seed);

/// n rows chosen without replacement, kept in their original order.
Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed);

/// Replays a mutation log onto a pristine dataset.
Dataset replay_mutations(const Dataset& pristine, const std::vector<Mutation>& log);

/// Fixed random labeling function: argmax of readout · ReLU(hidden · x).
struct Teacher {
  Matrix hidden;   // 32 × d
  Matrix readout;  // K × 32

  std::size_t label(std::span<const double> x) const;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
  Teacher teacher;
};

/// Offline substitute for MNIST1D: standard normal inputs labeled by a seeded teacher.
SyntheticData synthetic_fallback(std::size_t n_train, std::size_t n_test, std::size_t dim,
                                 std::size_t num_classes, std::uint64_t seed);

/// Rows of `d` with the given indices, in the given order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

}  // namespace lipdd
