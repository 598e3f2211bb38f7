#include <benchmark/benchmark.h>

#include "lipdd/dataset.hpp"
#include "lipdd/train.hpp"

using namespace lipdd;

namespace {

// One epoch over a 4000 × 40 synthetic set, batch 128.
void BM_TrainEpoch(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const SyntheticData d = synthetic_fallback(4000, 10, kMnist1dDim, 10, 1);
  TrainOptions o;
  o.base_lr = 0.05;
  o.batch_size = 128;
  o.stop = StopRule{1e-12, 0, 1};
  o.record_wall_time = false;
  Network net = Network::init(ArchSpec::ff_relu({width}), 2);
  for (auto _ : state) benchmark::DoNotOptimize(train(net, d.train, nullptr, o).updates);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * d.train.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(80)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_LossAndGrad(benchmark::State& state) {
  const SyntheticData d = synthetic_fallback(512, 10, kMnist1dDim, 10, 3);
  const Network net = Network::init(ArchSpec::ff_relu({static_cast<std::size_t>(state.range(0))}), 4);
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_and_grad(net, d.train.inputs, d.train.labels, LossKind::CrossEntropy).loss);
}
BENCHMARK(BM_LossAndGrad)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

}  // namespace
