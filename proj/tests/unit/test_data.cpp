#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "lipdd/dataset.hpp"
#include "lipdd/error.hpp"
#include "lipdd/harness.hpp"
#include "oracles.hpp"

using namespace lipdd;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

std::string header(std::size_t dim, bool split) {
  std::string h = split ? "split,label" : "label";
  for (std::size_t i = 0; i < dim; ++i) h += ",x" + std::to_string(i);
  return h + "\n";
}

std::string row(const std::string& prefix, std::size_t dim, double v = 0.5) {
  std::string r = prefix;
  for (std::size_t i = 0; i < dim; ++i) r += "," + std::to_string(v);
  return r + "\n";
}

Dataset labeled(std::size_t n) {
  Dataset d;
  d.inputs = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(i % 10);
    d.inputs(i, 0) = static_cast<double>(i);
  }
  return d;
}

}  // namespace

TEST(Csv, ReadsBothSplits) {
  const auto dir = oracle::temp_dir("csv_ok");
  const auto p = write_file(dir, "a.csv",
                            header(3, true) + row("train,1", 3) + row("test,9", 3, -1.25) +
                                row("train,0", 3));
  const DatasetPair d = read_labeled_csv(p, 3);
  EXPECT_EQ(d.train.size(), 2u);
  EXPECT_EQ(d.test.size(), 1u);
  EXPECT_EQ(d.train.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(d.test.inputs(0, 2), -1.25);
}

TEST(Csv, ErrorsCarryRowNumbers) {
  const auto dir = oracle::temp_dir("csv_bad");
  auto expect_row = [&](const std::string& body, std::size_t expected_row) {
    const auto p = write_file(dir, "bad.csv", header(3, true) + body);
    try {
      read_labeled_csv(p, 3);
      ADD_FAILURE() << "no error for:\n" << body;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.row(), expected_row) << e.what();
    }
  };
  expect_row(row("train,1", 3) + "train,1,0.5,abc,0.5\n", 3);
  expect_row(row("train,1", 3) + row("train,1", 2), 3);
  expect_row(row("train,12", 3), 2);
  expect_row(row("valid,1", 3), 2);
  expect_row(row("train,1", 3) + row("train,1", 3) + "train,1,0.5,nan,0.5\n", 4);
}

TEST(Csv, EmptyAndWrongWidth) {
  const auto dir = oracle::temp_dir("csv_empty");
  EXPECT_THROW(read_labeled_csv(write_file(dir, "e.csv", ""), 3), ParseError);
  EXPECT_THROW(read_labeled_csv(write_file(dir, "h.csv", header(3, true)), 3), ParseError);
  EXPECT_THROW(read_labeled_csv(dir / "missing.csv", 3), Error);
  // 39 features where MNIST1D needs 40.
  std::string text = header(39, true);
  for (int i = 0; i < 3; ++i) text += row("train,1", 39);
  EXPECT_THROW(load_mnist1d(write_file(dir, "short.csv", text)), ParseError);
}

TEST(Csv, Mnist1dCountsEnforced) {
  const auto dir = oracle::temp_dir("csv_counts");
  std::string text = header(40, true);
  for (int i = 0; i < 10; ++i) text += row("train,1", 40);
  EXPECT_THROW(load_mnist1d(write_file(dir, "few.csv", text)), ParseError);
}

TEST(Csv, Fixture) {
  const DatasetPair d = load_mnist1d(LIPDD_TEST_DATA_DIR "/mnist1d.csv");
  EXPECT_EQ(d.train.size(), 4000u);
  EXPECT_EQ(d.test.size(), 1000u);
  EXPECT_EQ(d.train.dim(), 40u);
  d.train.validate();
  d.test.validate();
  std::set<std::size_t> classes(d.train.labels.begin(), d.train.labels.end());
  EXPECT_EQ(classes.size(), 10u);
  EXPECT_EQ(d.train.provenance.source, "mnist1d");
}

TEST(Cifar, RecordsAndScaling) {
  const auto dir = oracle::temp_dir("cifar");
  std::vector<unsigned char> bytes(2 * kCifarRecordBytes, 0);
  bytes[0] = 3;
  bytes[1] = 255;
  bytes[kCifarRecordBytes] = 9;
  bytes[kCifarRecordBytes + 1024 + 1] = 51;  // first green pixel of record 2
  const fs::path p = dir / "b.bin";
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
  const Dataset d = read_cifar10_batch(p, Split::Train);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{3, 9}));
  EXPECT_EQ(d.inputs(0, 0), 1.0);
  EXPECT_EQ(d.inputs(1, 1024), 0.2);
  EXPECT_EQ(d.dim(), 3072u);

  std::ofstream(p, std::ios::binary | std::ios::app).put('x');
  EXPECT_THROW(read_cifar10_batch(p, Split::Train), ParseError);
  bytes[0] = 10;
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(read_cifar10_batch(p, Split::Train), ParseError);
  EXPECT_THROW(load_cifar10(dir), Error);
}

TEST(Mutations, ShuffleFractions) {
  const Dataset d = labeled(1000);
  EXPECT_EQ(shuffle_labels(d, 0.0, 1).labels, d.labels);

  const Dataset all = shuffle_labels(d, 1.0, 1);
  auto sorted = [](std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(sorted(all.labels), sorted(d.labels));  // a permutation
  std::size_t changed = 0;
  for (std::size_t i = 0; i < d.size(); ++i) changed += all.labels[i] != d.labels[i];
  EXPECT_GT(changed, 800u);

  const Dataset quarter = shuffle_labels(d, 0.25, 2);
  changed = 0;
  for (std::size_t i = 0; i < d.size(); ++i) changed += quarter.labels[i] != d.labels[i];
  EXPECT_LE(changed, 250u);
  EXPECT_GT(changed, 150u);
  EXPECT_EQ(quarter.inputs, d.inputs);
  EXPECT_THROW(shuffle_labels(d, 1.5, 0), Error);
}

TEST(Mutations, SubsampleKeepsOrderAndReplays) {
  const Dataset d = labeled(500);
  const Dataset s = subsample(d, 100, 7);
  ASSERT_EQ(s.size(), 100u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s.inputs(i - 1, 0), s.inputs(i, 0));
  for (std::size_t i = 0; i < s.size(); ++i)
    EXPECT_EQ(s.labels[i], static_cast<std::size_t>(s.inputs(i, 0)) % 10);
  EXPECT_THROW(subsample(d, 501, 0), Error);

  const Dataset both = subsample(shuffle_labels(d, 0.5, 3), 50, 4);
  ASSERT_EQ(both.provenance.mutations.size(), 2u);
  EXPECT_EQ(replay_mutations(d, both.provenance.mutations), both);
}

TEST(Synthetic, DeterministicAndTeacherLabeled) {
  const SyntheticData a = synthetic_fallback(300, 100, 40, 10, 5);
  const SyntheticData b = synthetic_fallback(300, 100, 40, 10, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(synthetic_fallback(300, 100, 40, 10, 6).train.inputs, a.train.inputs);
  for (std::size_t r = 0; r < a.train.size(); ++r)
    EXPECT_EQ(a.teacher.label(a.train.inputs.row(r)), a.train.labels[r]);
  std::set<std::size_t> classes(a.train.labels.begin(), a.train.labels.end());
  EXPECT_GE(classes.size(), 5u);
  // The matched-size fallback puts the CE threshold at the same width.
  EXPECT_EQ(interpolation_threshold(a.train.size() * 4000 / 300, a.train.dim(), 10, LossKind::CrossEntropy), 80u);
}
