#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lipdd/network.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

/// Spectral norm of a (small) input Jacobian through its Gram matrix.
double jacobian_norm(const Matrix& jacobian, const PowerIterSettings& s = {});

struct LowerBound {
  double c_lower = 0.0;   // max over samples of ||∇ₓf||₂
  double c_avg = 0.0;     // mean over samples of the same
  std::size_t argmax = 0;
};

/// Sup and mean of the input-Jacobian spectral norm over the rows of `samples`.
/// When `per_sample` is non-null it receives every sample's norm in row order.
LowerBound lower_bound(const Network& net, const Matrix& samples, const PowerIterSettings& s = {},
                       std::vector<double>* per_sample = nullptr);

/// Product of per-layer spectral norms.
double upper_bound(const Network& net, const PowerIterSettings& s = {});

/// Train ∪ test plus convex combinations λ·x_i + (1-λ)·x_j, drawn per λ and
/// per source set with indices uniform with replacement. Points are generated
/// on demand, never stored.
class ProbeSet {
 public:
  static constexpr std::array<double, 5> kLambdas{0.1, 0.2, 0.3, 0.4, 0.5};

  ProbeSet(const Matrix& train, const Matrix& test, std::size_t pairs_per_lambda,
           std::uint64_t seed);

  std::size_t size() const noexcept;
  std::size_t pairs_per_lambda() const noexcept { return pairs_; }

  /// Calls visit(point) for every probe point in a fixed order.
  template <class F>
  void for_each(F&& visit) const;

 private:
  const Matrix* train_;
  const Matrix* test_;
  std::size_t pairs_;
  std::uint64_t seed_;
};

/// Sup-Jacobian norm over a probe set.
double probe_bound(const Network& net, const ProbeSet& probe, const PowerIterSettings& s = {});

/// Sup over samples of ||J_softmax(f(x)) · ∇ₓf(x)||₂, J_softmax = diag(p) - ppᵀ.
double softmax_composed_lower_bound(const Network& net, const Matrix& samples,
                                    const PowerIterSettings& s = {});

struct Snapshot {
  std::string arch;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

struct LipschitzReport {
  double c_lower = 0.0;
  double c_avg_norm = 0.0;
  double c_upper = 0.0;
  std::optional<double> c_probe;
  std::optional<double> c_softmax;
  bool softmax_composed = false;
  Snapshot snapshot;

  /// (c_probe - c_lower) / (c_upper - c_lower) when a probe bound exists.
  std::optional<double> probe_position() const;
  /// c_avg_norm ≤ c_lower ≤ c_probe ≤ c_upper, each comparison with a
  /// relative slack of `rel_slack` for power-iteration rounding.
  bool ordered(double rel_slack = 1e-9) const;
};

nlohmann::ordered_json report_json(const LipschitzReport& r);

struct ReportOptions {
  PowerIterSettings power;
  bool softmax = false;
  std::optional<std::size_t> probe_pairs;  // enables the probe set
  std::uint64_t probe_seed = 0;
};

/// Lower/average bounds on `train`, the product upper bound, and optionally
/// the probe and softmax-composed bounds.
LipschitzReport compute_report(const Network& net, const Matrix& train, const Matrix* test,
                               const ReportOptions& options, Snapshot snapshot = {});

// ---------------------------------------------------------------------------

template <class F>
void ProbeSet::for_each(F&& visit) const {
  for (std::size_t r = 0; r < train_->rows(); ++r) visit(train_->row(r));
  for (std::size_t r = 0; r < test_->rows(); ++r) visit(test_->row(r));
  if (pairs_ == 0) return;
  Vector point(train_->cols());
  std::uint64_t stream = 0;
  for (const Matrix* source : {train_, test_}) {
    const std::size_t n = source->rows();
    for (double lambda : kLambdas) {
      Rng rng(derive_seed(seed_, stream++));
      if (n == 0) continue;
      for (std::size_t p = 0; p < pairs_; ++p) {
        const auto xi = source->row(static_cast<std::size_t>(rng.below(n)));
        const auto xj = source->row(static_cast<std::size_t>(rng.below(n)));
        for (std::size_t k = 0; k < point.size(); ++k)
          point[k] = lambda * xi[k] + (1.0 - lambda) * xj[k];
        visit(std::span<const double>(point));
      }
    }
  }
}

}  // namespace lipdd
