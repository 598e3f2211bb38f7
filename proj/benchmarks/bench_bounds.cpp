#include <benchmark/benchmark.h>

#include "lipdd/conv.hpp"
#include "lipdd/dataset.hpp"
#include "lipdd/lipschitz.hpp"
#include "lipdd/rng.hpp"
#include "lipdd/spectral.hpp"

using namespace lipdd;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

void BM_DenseSpectralNorm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix m = random_matrix(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(spectral_norm_dense(m));
}
BENCHMARK(BM_DenseSpectralNorm)->Arg(64)->Arg(256)->Arg(1024);

void BM_ConvOperatorNorm(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const ConvGeometry g{{c, 16, 16}, 2 * c, 3};
  Rng rng(2);
  std::vector<double> w(g.weight_count());
  for (auto& v : w) v = rng.normal();
  const LinearOperator op = conv2d_operator(g, w);
  PowerIterSettings s;
  s.max_iters = 200;
  for (auto _ : state) benchmark::DoNotOptimize(spectral_norm_operator(op, s));
}
BENCHMARK(BM_ConvOperatorNorm)->Arg(3)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_LowerBound(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const Network net = Network::init(ArchSpec::ff_relu({width}), 3);
  const Matrix x = random_matrix(1000, kMnist1dDim, 4);
  for (auto _ : state) benchmark::DoNotOptimize(lower_bound(net, x).c_lower);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * x.rows()));
}
BENCHMARK(BM_LowerBound)->Arg(80)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_UpperBound(benchmark::State& state) {
  const Network net = Network::init(ArchSpec::ff_relu({static_cast<std::size_t>(state.range(0))}), 5);
  for (auto _ : state) benchmark::DoNotOptimize(upper_bound(net));
}
BENCHMARK(BM_UpperBound)->Arg(256)->Arg(4096)->Unit(benchmark::kMillisecond);

}  // namespace
