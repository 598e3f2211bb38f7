#include "lipdd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <nlohmann/json.hpp>

#include "lipdd/error.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

namespace {

constexpr std::size_t kChunkRows = 1024;
constexpr std::uint64_t kShuffleStream = 2;

// Writes dLoss/dOutput for one sample into `g` (pre-scaled by `scale`) and
// returns the per-sample loss.
double sample_loss(std::span<const double> z, std::size_t label, LossKind kind, double scale,
                   std::span<double> g) {
  const std::size_t K = z.size();
  if (label >= K) {
    throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(K) +
                " outputs");
  }
  if (kind == LossKind::Mse) {
    double loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double diff = z[k] - (k == label ? 1.0 : 0.0);
      loss += diff * diff;
      g[k] = scale * 2.0 * diff / static_cast<double>(K);
    }
    return loss / static_cast<double>(K);
  }
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (std::size_t k = 0; k < K; ++k)
    g[k] = scale * (std::exp(z[k] - lse) - (k == label ? 1.0 : 0.0));
  return lse - z[label];
}

void check_batch(const Network& net, const Matrix& inputs, std::span<const std::size_t> labels) {
  if (inputs.rows() == 0) throw Error("empty batch");
  if (inputs.rows() != labels.size()) throw Error("batch inputs and labels differ in length");
  (void)net;
}

}  // namespace

std::string to_string(LossKind kind) { return kind == LossKind::Mse ? "mse" : "ce"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "mse" || name == "MSE") return LossKind::Mse;
  if (name == "ce" || name == "cross_entropy" || name == "CE") return LossKind::CrossEntropy;
  throw ConfigError("train.loss", "unknown loss kind '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd" || name == "SGD") return OptimizerKind::Sgd;
  if (name == "adam" || name == "Adam") return OptimizerKind::Adam;
  throw ConfigError("train.optimizer", "unknown optimizer '" + name + "'");
}

double loss_value(const Network& net, const Matrix& inputs, std::span<const std::size_t> labels,
                  LossKind kind) {
  check_batch(net, inputs, labels);
  const std::size_t n = inputs.rows();
  double total = 0.0;
  Vector scratch(net.output_size());
  for (std::size_t start = 0; start < n; start += kChunkRows) {
    const std::size_t end = std::min(n, start + kChunkRows);
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const Matrix out = net.forward(start == 0 && end == n ? inputs : gather_rows(inputs, rows));
    for (std::size_t r = 0; r < out.rows(); ++r)
      total += sample_loss(out.row(r), labels[start + r], kind, 0.0, scratch);
  }
  return total / static_cast<double>(n);
}

LossGrad loss_and_grad(const Network& net, const Matrix& inputs,
                       std::span<const std::size_t> labels, LossKind kind) {
  check_batch(net, inputs, labels);
  const std::size_t n = inputs.rows();
  const double scale = 1.0 / static_cast<double>(n);
  LossGrad result;
  result.grad.assign(net.param_count(), 0.0);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += kChunkRows) {
    const std::size_t end = std::min(n, start + kChunkRows);
    ForwardTape tape;
    if (start == 0 && end == n) {
      tape = net.forward_tape(inputs);
    } else {
      std::vector<std::size_t> rows(end - start);
      std::iota(rows.begin(), rows.end(), start);
      tape = net.forward_tape(gather_rows(inputs, rows));
    }
    const Matrix& out = tape.activations.back();
    Matrix g(out.rows(), out.cols());
    for (std::size_t r = 0; r < out.rows(); ++r)
      total += sample_loss(out.row(r), labels[start + r], kind, scale, g.row(r));
    net.backward(tape, std::move(g), result.grad);
  }
  result.loss = total * scale;
  return result;
}

Optimizer::Optimizer(OptimizerKind kind, double base_lr, std::size_t param_count)
    : kind_(kind), base_lr_(base_lr) {
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr))
    throw ConfigError("train.base_lr", "must be finite and non-negative");
  if (kind_ == OptimizerKind::Adam) {
    m_.assign(param_count, 0.0);
    v_.assign(param_count, 0.0);
  }
}

void Optimizer::step(std::span<double> theta, std::span<const double> grad, double eta) {
  if (theta.size() != grad.size()) throw Error("optimizer: gradient length mismatch");
  const double lr = base_lr_ * eta;
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad[i];
    return;
  }
  if (m_.size() != theta.size()) throw Error("optimizer: state sized for a different network");
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
    v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + kEpsilon);
  }
}

LrSchedule LrSchedule::constant() { return LrSchedule{}; }

LrSchedule LrSchedule::warmup20000_step25(std::size_t updates_per_epoch) {
  LrSchedule s;
  s.kind = Kind::WarmupStep;
  s.name = "warmup20000step25";
  s.updates_per_epoch = updates_per_epoch;
  return s;
}

LrSchedule LrSchedule::cont100(std::size_t updates_per_epoch) {
  LrSchedule s;
  s.kind = Kind::EpochDecay;
  s.name = "cont100";
  s.updates_per_epoch = updates_per_epoch;
  return s;
}

double LrSchedule::coeff(std::size_t u) const {
  const std::size_t upe = std::max<std::size_t>(1, updates_per_epoch);
  switch (kind) {
    case Kind::Constant:
      return 1.0;
    case Kind::WarmupStep: {
      if (warmup_updates > 0 && u <= warmup_updates)
        return static_cast<double>(std::max<std::size_t>(1, u)) /
               static_cast<double>(warmup_updates);
      // Quarter of the step phase, converted from epochs to updates.
      const std::size_t interval = std::max<std::size_t>(1, (step_phase_epochs / 4) * upe);
      const std::size_t k = std::min(drops, (u - warmup_updates) / interval);
      return std::pow(step_factor, static_cast<double>(k));
    }
    case Kind::EpochDecay: {
      const std::size_t epoch = u / upe;
      const std::size_t every = std::max<std::size_t>(1, decay_every_epochs);
      return std::pow(decay_factor, static_cast<double>(epoch / every));
    }
  }
  return 1.0;
}

void to_json(nlohmann::json& j, const LrSchedule& s) {
  switch (s.kind) {
    case LrSchedule::Kind::Constant:
      j = {{"kind", "constant"}};
      break;
    case LrSchedule::Kind::WarmupStep:
      j = {{"kind", s.name == "warmup20000step25" ? "warmup20000step25" : "warmup_step"},
           {"warmup_updates", s.warmup_updates},
           {"step_phase_epochs", s.step_phase_epochs},
           {"drops", s.drops},
           {"step_factor", s.step_factor}};
      break;
    case LrSchedule::Kind::EpochDecay:
      j = {{"kind", s.name == "cont100" ? "cont100" : "epoch_decay"},
           {"decay_every_epochs", s.decay_every_epochs},
           {"decay_factor", s.decay_factor}};
      break;
  }
}

void from_json(const nlohmann::json& j, LrSchedule& s) {
  const std::string kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  if (kind == "constant") {
    s = LrSchedule::constant();
  } else if (kind == "warmup20000step25" || kind == "warmup_step") {
    s = LrSchedule::warmup20000_step25(1);
    s.name = kind;
  } else if (kind == "cont100" || kind == "epoch_decay") {
    s = LrSchedule::cont100(1);
    s.name = kind;
  } else {
    throw ConfigError("train.schedule.kind", "unknown schedule '" + kind + "'");
  }
  if (!j.is_object()) return;
  // The named presets are fixed; only the generic kinds take parameters.
  if (kind == "warmup_step") {
    s.warmup_updates = j.value("warmup_updates", s.warmup_updates);
    s.step_phase_epochs = j.value("step_phase_epochs", s.step_phase_epochs);
    s.drops = j.value("drops", s.drops);
    s.step_factor = j.value("step_factor", s.step_factor);
  } else if (kind == "epoch_decay") {
    s.decay_every_epochs = j.value("decay_every_epochs", s.decay_every_epochs);
    s.decay_factor = j.value("decay_factor", s.decay_factor);
  }
}

StopRule StopRule::for_loss(LossKind kind, std::size_t min_epochs, std::size_t max_epochs) {
  return StopRule{kind == LossKind::Mse ? 0.001 : 0.01, min_epochs, max_epochs};
}

void StopRule::validate() const {
  if (!(grad_norm_threshold > 0.0))
    throw ConfigError("train.grad_norm_threshold", "must be positive");
  if (max_epochs < 1) throw ConfigError("train.max_epochs", "must be at least 1");
  if (min_epochs > max_epochs)
    throw ConfigError("train.min_epochs", "exceeds train.max_epochs");
}

TrainTrace train(Network& net, const Dataset& train_set, const Dataset* test_set,
                 const TrainOptions& options, const EpochCallback& on_epoch) {
  options.stop.validate();
  const std::size_t n = train_set.size();
  if (n == 0) throw Error("train: empty training set");
  if (options.batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  // A batch larger than the training set becomes one full batch.
  const std::size_t batch = std::min(options.batch_size, n);
  if (train_set.dim() != net.input_size())
    throw Error("train: dataset dimension does not match the network input");

  const std::size_t upe = (n + batch - 1) / batch;
  LrSchedule schedule = options.schedule;
  schedule.updates_per_epoch = upe;

  Optimizer opt(options.optimizer, options.base_lr, net.param_count());
  Rng shuffle_rng(derive_seed(options.seed, kShuffleStream));
  const ParamVector theta0 = net.params();
  ParamVector theta = theta0;

  std::vector<std::size_t> order(n);
  std::vector<std::size_t> batch_labels;
  TrainTrace trace;
  std::size_t update = 0;
  for (std::size_t epoch = 1; epoch <= options.stop.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double eta = schedule.coeff(update);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = gather_rows(train_set.inputs, idx);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(train_set.labels[i]);
      LossGrad lg = loss_and_grad(net, xb, batch_labels, options.loss);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch);
      eta = schedule.coeff(update);
      opt.step(theta, lg.grad, eta);
      net.set_params(theta);
      ++update;
    }

    const LossGrad full = loss_and_grad(net, train_set.inputs, train_set.labels, options.loss);
    if (!std::isfinite(full.loss)) throw DivergenceError(epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = full.loss;
    rec.grad_norm = norm2(full.grad);
    if (test_set != nullptr && test_set->size() > 0)
      rec.test_loss = loss_value(net, test_set->inputs, test_set->labels, options.loss);
    rec.eta = eta;
    rec.param_dist = param_distance(net, theta0);
    if (options.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
    }
    trace.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, net);
    if (epoch >= options.stop.min_epochs && rec.grad_norm <= options.stop.grad_norm_threshold) {
      trace.converged = true;
      break;
    }
  }
  trace.updates = update;
  return trace;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["test_loss"] = std::isfinite(r.test_loss) ? nlohmann::ordered_json(r.test_loss) : nlohmann::ordered_json(nullptr);
  j["grad_norm"] = r.grad_norm;
  j["eta"] = r.eta;
  j["param_dist"] = r.param_dist;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

void write_trace_jsonl(std::ostream& out, const TrainTrace& trace) {
  for (const auto& r : trace.epochs) out << epoch_record_json(r) << '\n';
}

}  // namespace lipdd
