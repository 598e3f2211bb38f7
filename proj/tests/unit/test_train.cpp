#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lipdd/dataset.hpp"
#include "lipdd/error.hpp"
#include "lipdd/network.hpp"
#include "lipdd/train.hpp"
#include "oracles.hpp"

using namespace lipdd;

namespace {

// One dense 1×2 layer with weights (a, b): output relu(a·x0 + b·x1).
Network two_input_net(double a, double b, std::size_t outputs = 1) {
  Network net = Network::zeros(ArchSpec::ff_relu({}, 2, outputs));
  Vector theta(2 * outputs, 0.0);
  theta[0] = a;
  theta[1] = b;
  net.set_params(theta);
  return net;
}

SyntheticData small_data(std::size_t n = 64) { return synthetic_fallback(n, 32, 6, 3, 9); }

}  // namespace

TEST(Loss, MseIsMeanSquaredErrorOverOutputs) {
  // Outputs (3, 0) for label 0: ((3-1)² + 0²) / 2 = 2.
  Network net = Network::zeros(ArchSpec::ff_relu({}, 1, 2));
  net.set_params(Vector{3.0, -1.0});
  const Matrix x(1, 1, {1.0});
  const std::vector<std::size_t> y{0};
  EXPECT_DOUBLE_EQ(loss_value(net, x, y, LossKind::Mse), 2.0);
}

TEST(Loss, CrossEntropyOfEqualLogitsIsLogK) {
  const Network net = Network::zeros(ArchSpec::ff_relu({4}, 3, 10));
  const Matrix x = oracle::random_matrix(5, 3, 1);
  const std::vector<std::size_t> y{0, 1, 2, 3, 9};
  EXPECT_NEAR(loss_value(net, x, y, LossKind::CrossEntropy), std::log(10.0), 1e-15);
}

TEST(Loss, LargeLogitsStayFinite) {
  const Network net = two_input_net(1000.0, 0.0, 2);
  const Matrix x(1, 2, {1.0, 0.0});
  EXPECT_NEAR(loss_value(net, x, std::vector<std::size_t>{1}, LossKind::CrossEntropy), 1000.0, 1e-9);
}

TEST(Loss, ChunkedGradientMatchesSingleBatch) {
  const auto d = synthetic_fallback(2500, 10, 5, 4, 3);
  const Network net = Network::init(ArchSpec::ff_relu({8}, 5, 4), 2);
  const LossGrad full = loss_and_grad(net, d.train.inputs, d.train.labels, LossKind::CrossEntropy);
  // Same quantity as an average of per-sample gradients.
  Vector acc(net.param_count(), 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < d.train.size(); ++r) {
    const Matrix x(1, 5, Vector(d.train.inputs.row(r).begin(), d.train.inputs.row(r).end()));
    const std::vector<std::size_t> y{d.train.labels[r]};
    const LossGrad one = loss_and_grad(net, x, y, LossKind::CrossEntropy);
    loss += one.loss;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += one.grad[i];
  }
  EXPECT_NEAR(full.loss, loss / 2500, 1e-12);
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(full.grad[i], acc[i] / 2500, 1e-12);
}

TEST(Optimizer, SgdStep) {
  Optimizer opt(OptimizerKind::Sgd, 0.5, 2);
  Vector theta{1.0, 2.0};
  opt.step(theta, Vector{2.0, -4.0}, 0.5);
  EXPECT_EQ(theta, (Vector{0.5, 3.0}));
}

TEST(Optimizer, AdamFirstStepsMatchHandComputation) {
  Optimizer opt(OptimizerKind::Adam, 0.01, 1);
  Vector theta{0.0};
  opt.step(theta, Vector{3.0}, 1.0);
  // Bias-corrected moments equal g and g² on the first step.
  EXPECT_NEAR(theta[0], -0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  opt.step(theta, Vector{-1.0}, 1.0);
  const double m = (0.9 * 0.1 * 3.0 + 0.1 * -1.0) / (1 - 0.81);
  const double v = (0.999 * 0.001 * 9.0 + 0.001 * 1.0) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(theta[0], -0.01 * 3.0 / (3.0 + 1e-8) - 0.01 * m / (std::sqrt(v) + 1e-8), 1e-15);
}

TEST(Schedule, Warmup20000Step25) {
  const std::size_t upe = 8;
  const LrSchedule s = LrSchedule::warmup20000_step25(upe);
  EXPECT_DOUBLE_EQ(s.coeff(0), 1.0 / 20000);
  EXPECT_DOUBLE_EQ(s.coeff(1), 1.0 / 20000);
  EXPECT_DOUBLE_EQ(s.coeff(10000), 0.5);
  EXPECT_DOUBLE_EQ(s.coeff(20000), 1.0);
  const std::size_t quarter = 2500 * upe;
  EXPECT_DOUBLE_EQ(s.coeff(20000 + quarter - 1), 1.0);
  EXPECT_DOUBLE_EQ(s.coeff(20000 + quarter), 0.75);
  EXPECT_DOUBLE_EQ(s.coeff(20000 + 2 * quarter), 0.5625);
  EXPECT_DOUBLE_EQ(s.coeff(20000 + 3 * quarter), 0.421875);
  EXPECT_DOUBLE_EQ(s.coeff(20000 + 10000 * upe), 0.421875);
  EXPECT_DOUBLE_EQ(s.coeff(300000 * upe), 0.421875);
}

TEST(Schedule, Cont100) {
  const std::size_t upe = 391;
  const LrSchedule s = LrSchedule::cont100(upe);
  for (std::size_t e : {0, 1, 99, 100, 101, 250, 999, 4999}) {
    EXPECT_DOUBLE_EQ(s.coeff(e * upe), std::pow(0.95, static_cast<double>(e / 100))) << e;
    EXPECT_DOUBLE_EQ(s.coeff(e * upe + upe - 1), std::pow(0.95, static_cast<double>(e / 100)));
  }
}

TEST(Schedule, JsonRoundTripAndUnknownKind) {
  LrSchedule s = LrSchedule::warmup20000_step25(1);
  s.name = "warmup_step";
  s.warmup_updates = 300;
  s.drops = 2;
  nlohmann::json j = s;
  const LrSchedule back = j.get<LrSchedule>();
  EXPECT_EQ(back.warmup_updates, 300u);
  EXPECT_EQ(back.drops, 2u);
  for (std::size_t u : {0, 150, 300, 5000, 1000000}) EXPECT_EQ(back.coeff(u), s.coeff(u));
  EXPECT_THROW(nlohmann::json({{"kind", "cosine"}}).get<LrSchedule>(), ConfigError);
}

TEST(StopRule, ThresholdsPerLoss) {
  EXPECT_EQ(StopRule::for_loss(LossKind::CrossEntropy, 0, 10).grad_norm_threshold, 0.01);
  EXPECT_EQ(StopRule::for_loss(LossKind::Mse, 0, 10).grad_norm_threshold, 0.001);
  EXPECT_THROW((StopRule{0.01, 20, 10}.validate()), ConfigError);
}

TEST(Train, StopsAtMaxEpochsWithPartialBatches) {
  const auto d = small_data(70);
  Network net = Network::init(ArchSpec::ff_relu({8}, 6, 3), 1);
  TrainOptions o;
  o.batch_size = 16;  // 5 updates per epoch, the last with 6 rows
  o.stop = StopRule{1e-12, 0, 7};
  o.base_lr = 0.01;
  const TrainTrace t = train(net, d.train, &d.test, o);
  EXPECT_EQ(t.epochs.size(), 7u);
  EXPECT_EQ(t.updates, 35u);
  EXPECT_FALSE(t.converged);
  for (std::size_t i = 0; i < t.epochs.size(); ++i) {
    EXPECT_EQ(t.epochs[i].epoch, i + 1);
    EXPECT_TRUE(std::isfinite(t.epochs[i].test_loss));
  }
}

TEST(Train, StopsOnGradientNormAfterMinEpochs) {
  const auto d = small_data();
  Network net = Network::init(ArchSpec::ff_relu({8}, 6, 3), 1);
  TrainOptions o;
  o.stop = StopRule{1e9, 4, 50};  // satisfied from the start
  o.batch_size = 64;
  const TrainTrace t = train(net, d.train, nullptr, o);
  EXPECT_EQ(t.epochs.size(), 4u);
  EXPECT_TRUE(t.converged);
  EXPECT_TRUE(std::isnan(t.epochs.back().test_loss));
}

TEST(Train, LossDecreasesAndParamsMove) {
  const auto d = small_data(256);
  Network net = Network::init(ArchSpec::ff_relu({32}, 6, 3), 4);
  TrainOptions o;
  o.batch_size = 32;
  o.base_lr = 0.05;
  o.stop = StopRule{1e-12, 0, 40};
  o.record_wall_time = false;
  const TrainTrace t = train(net, d.train, nullptr, o);
  EXPECT_LT(t.epochs.back().train_loss, t.epochs.front().train_loss);
  EXPECT_GT(t.epochs.back().param_dist, 0.0);
  EXPECT_EQ(t.epochs.back().wall_ms, 0.0);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto d = small_data(128);
  TrainOptions o;
  o.batch_size = 20;
  o.base_lr = 0.05;
  o.optimizer = OptimizerKind::Adam;
  o.base_lr = 0.005;
  o.stop = StopRule{1e-12, 0, 5};
  o.record_wall_time = false;
  o.seed = 17;
  Network a = Network::init(ArchSpec::ff_relu({16}, 6, 3), 3), b = a;
  const TrainTrace ta = train(a, d.train, &d.test, o), tb = train(b, d.train, &d.test, o);
  EXPECT_EQ(a.params(), b.params());
  std::ostringstream sa, sb;
  write_trace_jsonl(sa, ta);
  write_trace_jsonl(sb, tb);
  EXPECT_EQ(sa.str(), sb.str());
  o.seed = 18;
  Network c = Network::init(ArchSpec::ff_relu({16}, 6, 3), 3);
  train(c, d.train, &d.test, o);
  EXPECT_NE(a.params(), c.params());
}

TEST(Train, DivergenceIsReported) {
  const auto d = small_data();
  Network net = Network::init(ArchSpec::ff_relu({16}, 6, 3), 1);
  TrainOptions o;
  o.loss = LossKind::Mse;
  o.base_lr = 1e200;
  o.batch_size = 64;
  o.stop = StopRule{1e-12, 0, 20};
  EXPECT_THROW(train(net, d.train, nullptr, o), DivergenceError);
}

TEST(Train, RejectsBadBatchSize) {
  const auto d = small_data();
  Network net = Network::init(ArchSpec::ff_relu({4}, 6, 3), 1);
  TrainOptions o;
  o.batch_size = 0;
  EXPECT_THROW(train(net, d.train, nullptr, o), ConfigError);
}

TEST(Train, OversizedBatchIsFullBatch) {
  const auto d = small_data();
  Network a = Network::init(ArchSpec::ff_relu({4}, 6, 3), 1), b = a;
  TrainOptions o;
  o.stop = StopRule{1e-12, 0, 3};
  o.record_wall_time = false;
  o.batch_size = d.train.size();
  const TrainTrace ta = train(a, d.train, nullptr, o);
  o.batch_size = 10 * d.train.size();
  const TrainTrace tb = train(b, d.train, nullptr, o);
  EXPECT_EQ(ta.updates, 3u);
  EXPECT_EQ(tb.updates, 3u);
  EXPECT_EQ(a.params(), b.params());
}

TEST(Trace, JsonlKeysInOrder) {
  EpochRecord r;
  r.epoch = 3;
  r.train_loss = 0.5;
  r.grad_norm = 0.25;
  r.eta = 1;
  const auto j = nlohmann::ordered_json::parse(epoch_record_json(r));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"epoch", "train_loss", "test_loss", "grad_norm", "eta",
                                            "param_dist", "wall_ms"}));
  EXPECT_TRUE(j["test_loss"].is_null());
}
