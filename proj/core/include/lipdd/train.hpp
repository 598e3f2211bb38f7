#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lipdd/dataset.hpp"
#include "lipdd/network.hpp"

namespace lipdd {

/// MSE: per sample (1/K)·||f(x) - onehot(y)||², averaged over the batch.
/// CrossEntropy: log-softmax negative log-likelihood of the raw outputs.
enum class LossKind { Mse, CrossEntropy };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean loss of a batch without the gradient.
double loss_value(const Network& net, const Matrix& inputs, std::span<const std::size_t> labels,
                  LossKind kind);

/// Mean loss of a batch and its gradient with respect to θ.
LossGrad loss_and_grad(const Network& net, const Matrix& inputs,
                       std::span<const std::size_t> labels, LossKind kind);

inline ParamVector param_grad(const Network& net, const Matrix& inputs,
                              std::span<const std::size_t> labels, LossKind kind) {
  return loss_and_grad(net, inputs, labels, kind).grad;
}

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

/// Plain SGD (no momentum) or Adam with β = (0.9, 0.999), ε = 1e-8.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Optimizer(OptimizerKind kind, double base_lr, std::size_t param_count);

  OptimizerKind kind() const noexcept { return kind_; }
  double base_lr() const noexcept { return base_lr_; }

  /// θ ← θ - (base_lr · eta) · direction(grad).
  void step(std::span<double> theta, std::span<const double> grad, double eta);

 private:
  OptimizerKind kind_;
  double base_lr_;
  std::uint64_t t_ = 0;
  Vector m_, v_;
};

/// Learning-rate coefficient η_t, stepped once per parameter update.
///
/// WarmupStep: linear ramp max(1, u)/W for u ≤ W updates, then ×factor at
/// every quarter of `step_phase_epochs` for `drops` drops, then flat.
/// Warmup20000Step25 is WarmupStep with W = 20 000, 10 000 epochs, 3 drops of 0.75.
/// EpochDecay: factor^⌊epoch / every⌋; Cont100 uses every = 100, factor = 0.95.
struct LrSchedule {
  enum class Kind { Constant, WarmupStep, EpochDecay };

  Kind kind = Kind::Constant;
  std::string name = "constant";
  std::size_t updates_per_epoch = 1;
  std::size_t warmup_updates = 20000;
  std::size_t step_phase_epochs = 10000;
  std::size_t drops = 3;
  double step_factor = 0.75;
  std::size_t decay_every_epochs = 100;
  double decay_factor = 0.95;

  static LrSchedule constant();
  static LrSchedule warmup20000_step25(std::size_t updates_per_epoch);
  static LrSchedule cont100(std::size_t updates_per_epoch);

  double coeff(std::size_t update_index) const;
};

void to_json(nlohmann::json& j, const LrSchedule& s);
/// Reads a schedule description; `updates_per_epoch` is filled in by the trainer.
void from_json(const nlohmann::json& j, LrSchedule& s);

/// Stop after an epoch once epoch ≥ min_epochs and the full-training-set
/// gradient norm is ≤ threshold, or unconditionally at max_epochs.
struct StopRule {
  double grad_norm_threshold = 0.01;
  std::size_t min_epochs = 0;
  std::size_t max_epochs = 100;

  static StopRule for_loss(LossKind kind, std::size_t min_epochs, std::size_t max_epochs);
  void validate() const;
};

struct TrainOptions {
  LossKind loss = LossKind::CrossEntropy;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double base_lr = 0.005;
  LrSchedule schedule = LrSchedule::constant();
  StopRule stop;
  std::size_t batch_size = 512;
  std::uint64_t seed = 0;
  bool record_wall_time = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  double eta = 0.0;
  double param_dist = 0.0;
  double wall_ms = 0.0;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  bool converged = false;
  std::size_t updates = 0;
};

/// Called after every epoch with the record and the current network.
using EpochCallback = std::function<void(const EpochRecord&, const Network&)>;

/// Sequential mini-batch training with seeded per-epoch shuffling. The last
/// partial batch is kept; a batch size above the set size means full batch. Throws DivergenceError on a non-finite loss.
TrainTrace train(Network& net, const Dataset& train_set, const Dataset* test_set,
                 const TrainOptions& options, const EpochCallback& on_epoch = {});

/// One JSON object per line with keys epoch, train_loss, test_loss,
/// grad_norm, eta, param_dist, wall_ms (in that order).
std::string epoch_record_json(const EpochRecord& r);
void write_trace_jsonl(std::ostream& out, const TrainTrace& trace);

}  // namespace lipdd
