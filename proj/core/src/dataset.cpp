#include "lipdd/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

#include "lipdd/error.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_real(std::string_view field, std::size_t row) {
  field = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(v))
    throw ParseError("cannot parse '" + std::string(field) + "' as a real", row);
  return v;
}

std::size_t parse_label(std::string_view field, std::size_t row, std::size_t num_classes) {
  field = trim(field);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw ParseError("cannot parse label '" + std::string(field) + "'", row);
  if (v >= num_classes)
    throw ParseError("label " + std::to_string(v) + " out of range", row);
  return v;
}

Dataset make_dataset(std::size_t dim, std::size_t num_classes, Split split, std::string source) {
  Dataset d;
  d.inputs = Matrix(0, dim);
  d.num_classes = num_classes;
  d.split = split;
  d.provenance.source = std::move(source);
  return d;
}

void check_count(const Dataset& d, std::size_t expected, const std::string& what) {
  if (d.size() != expected) {
    throw ParseError(what + ": expected " + std::to_string(expected) + " rows, found " +
                     std::to_string(d.size()));
  }
}

}  // namespace

void Dataset::validate() const {
  if (inputs.rows() != labels.size()) throw Error("dataset: inputs and labels differ in length");
  for (std::size_t y : labels)
    if (y >= num_classes) throw Error("dataset: label out of range");
  if (!all_finite(inputs)) throw Error("dataset: non-finite input value");
}

DatasetPair read_labeled_csv(const std::filesystem::path& path, std::size_t expected_dim,
                             std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw ParseError(path.string() + " is empty");

  const auto header = split_commas(trim(line));
  const bool has_split = !header.empty() && trim(header[0]) == "split";
  const std::size_t label_col = has_split ? 1 : 0;
  const std::size_t expected_cols = label_col + 1 + expected_dim;
  if (header.size() != expected_cols || trim(header[label_col]) != "label") {
    throw ParseError("header must be '" + std::string(has_split ? "split," : "") + "label,x0..x" +
                         std::to_string(expected_dim - 1) + "' (" + std::to_string(expected_cols) +
                         " columns), found " + std::to_string(header.size()) + " columns",
                     1);
  }

  DatasetPair out{make_dataset(expected_dim, num_classes, Split::Train, "csv"),
                  make_dataset(expected_dim, num_classes, Split::Test, "csv")};
  std::vector<double> train_x, test_x;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_commas(t);
    if (fields.size() != expected_cols) {
      throw ParseError("expected " + std::to_string(expected_cols) + " columns, found " +
                           std::to_string(fields.size()),
                       row);
    }
    Dataset* target = &out.train;
    std::vector<double>* xs = &train_x;
    if (has_split) {
      const auto tag = trim(fields[0]);
      if (tag == "test") {
        target = &out.test;
        xs = &test_x;
      } else if (tag != "train") {
        throw ParseError("split must be 'train' or 'test', found '" + std::string(tag) + "'",
                         row);
      }
    }
    target->labels.push_back(parse_label(fields[label_col], row, num_classes));
    for (std::size_t c = label_col + 1; c < fields.size(); ++c)
      xs->push_back(parse_real(fields[c], row));
  }
  if (out.train.labels.empty() && out.test.labels.empty())
    throw ParseError(path.string() + " has no data rows");
  out.train.inputs = Matrix(out.train.labels.size(), expected_dim, std::move(train_x));
  out.test.inputs = Matrix(out.test.labels.size(), expected_dim, std::move(test_x));
  return out;
}

DatasetPair load_mnist1d(const std::filesystem::path& path) {
  DatasetPair d = read_labeled_csv(path, kMnist1dDim);
  check_count(d.train, kMnist1dTrain, path.string() + " train split");
  check_count(d.test, kMnist1dTest, path.string() + " test split");
  d.train.provenance.source = d.test.provenance.source = "mnist1d";
  return d;
}

DatasetPair load_mnist1d(const std::filesystem::path& train_path,
                         const std::filesystem::path& test_path) {
  DatasetPair a = read_labeled_csv(train_path, kMnist1dDim);
  DatasetPair b = read_labeled_csv(test_path, kMnist1dDim);
  if (!a.test.labels.empty() || !b.test.labels.empty())
    throw ParseError("two-file MNIST1D form expects files without a split column");
  DatasetPair out{std::move(a.train), std::move(b.train)};
  out.test.split = Split::Test;
  check_count(out.train, kMnist1dTrain, train_path.string());
  check_count(out.test, kMnist1dTest, test_path.string());
  out.train.provenance.source = out.test.provenance.source = "mnist1d";
  return out;
}

Dataset read_cifar10_batch(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw ParseError(path.string() + ": length " + std::to_string(bytes.size()) +
                     " is not a positive multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset d = make_dataset(kCifarRecordBytes - 1, 10, split, "cifar10");
  d.inputs = Matrix(n, kCifarRecordBytes - 1);
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= 10) throw ParseError("label byte " + std::to_string(rec[0]) + " out of range", r + 1);
    d.labels[r] = rec[0];
    auto row = d.inputs.row(r);
    for (std::size_t i = 0; i + 1 < kCifarRecordBytes; ++i) row[i] = rec[i + 1] / 255.0;
  }
  return d;
}

DatasetPair load_cifar10(const std::filesystem::path& dir) {
  DatasetPair out{make_dataset(kCifarRecordBytes - 1, 10, Split::Train, "cifar10"),
                  read_cifar10_batch(dir / "test_batch.bin", Split::Test)};
  std::vector<double> xs;
  for (int i = 1; i <= 5; ++i) {
    Dataset part = read_cifar10_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"),
                                      Split::Train);
    xs.insert(xs.end(), part.inputs.data().begin(), part.inputs.data().end());
    out.train.labels.insert(out.train.labels.end(), part.labels.begin(), part.labels.end());
  }
  out.train.inputs = Matrix(out.train.labels.size(), kCifarRecordBytes - 1, std::move(xs));
  check_count(out.train, 50000, "CIFAR-10 train batches");
  check_count(out.test, 10000, "CIFAR-10 test batch");
  return out;
}

Dataset shuffle_labels(const Dataset& d, double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("shuffle_labels: alpha must lie in [0, 1]");
  Dataset out = d;
  const auto k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(d.size()) + 1e-9));
  Rng rng(seed);
  const auto positions = rng.sample_without_replacement(d.size(), std::min(k, d.size()));
  std::vector<std::size_t> values;
  values.reserve(positions.size());
  for (std::size_t p : positions) values.push_back(d.labels[p]);
  rng.shuffle(std::span<std::size_t>(values));
  for (std::size_t i = 0; i < positions.size(); ++i) out.labels[positions[i]] = values[i];
  out.provenance.mutations.push_back({Mutation::Kind::ShuffleLabels, alpha, 0, seed});
  return out;
}

Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n > d.size()) {
    throw Error("subsample: requested " + std::to_string(n) + " rows from a dataset of " +
                std::to_string(d.size()));
  }
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(d.size(), n);
  std::sort(idx.begin(), idx.end());
  Dataset out = d;
  out.inputs = gather_rows(d.inputs, idx);
  out.labels.clear();
  for (std::size_t i : idx) out.labels.push_back(d.labels[i]);
  out.provenance.mutations.push_back({Mutation::Kind::Subsample, 0.0, n, seed});
  return out;
}

Dataset replay_mutations(const Dataset& pristine, const std::vector<Mutation>& log) {
  Dataset d = pristine;
  for (const auto& m : log) {
    d = m.kind == Mutation::Kind::ShuffleLabels ? shuffle_labels(d, m.alpha, m.seed)
                                                : subsample(d, m.count, m.seed);
  }
  return d;
}

std::size_t Teacher::label(std::span<const double> x) const {
  Vector h = matvec(hidden, x);
  for (auto& v : h) v = v > 0.0 ? v : 0.0;
  const Vector z = matvec(readout, h);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

SyntheticData synthetic_fallback(std::size_t n_train, std::size_t n_test, std::size_t dim,
                                 std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw Error("synthetic_fallback: need at least two classes");
  if (dim == 0) throw Error("synthetic_fallback: zero input dimension");
  constexpr std::size_t kTeacherWidth = 32;
  Rng rng(seed);
  SyntheticData out;
  out.teacher.hidden = Matrix(kTeacherWidth, dim);
  out.teacher.readout = Matrix(num_classes, kTeacherWidth);
  for (auto& w : out.teacher.hidden.data()) w = rng.normal() / std::sqrt(static_cast<double>(dim));
  for (auto& w : out.teacher.readout.data()) w = rng.normal() / std::sqrt(double(kTeacherWidth));

  auto draw = [&](std::size_t n, Split split) {
    Dataset d = make_dataset(dim, num_classes, split, "synthetic");
    d.inputs = Matrix(n, dim);
    for (auto& v : d.inputs.data()) v = rng.normal();
    d.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) d.labels[r] = out.teacher.label(d.inputs.row(r));
    return d;
  };
  out.train = draw(n_train, Split::Train);
  out.test = draw(n_test, Split::Test);
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace lipdd
