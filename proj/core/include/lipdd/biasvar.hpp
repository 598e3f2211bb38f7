#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lipdd/dataset.hpp"
#include "lipdd/network.hpp"
#include "lipdd/spectral.hpp"

namespace lipdd {

/// The same architecture trained under different seeds ζ. The empirical mean
/// over members stands in for E_ζ.
struct SeedEnsemble {
  std::vector<Network> members;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const noexcept { return members.size(); }
  void validate() const;
  /// Member outputs on `inputs`, one (N × K) matrix per member.
  std::vector<Matrix> outputs(const Matrix& inputs) const;
};

/// Squared-error decomposition: bias² + variance = expected test loss, all
/// with the unnormalized squared 2-norm.
struct Decomposition {
  double bias_sq = 0.0;
  double variance = 0.0;
  double expected_test_loss = 0.0;
};

/// Works directly on predictions: `outputs[s]` is member s's (N × K) output,
/// `targets` the (N × K) ground truth.
Decomposition decompose_outputs(const std::vector<Matrix>& outputs, const Matrix& targets);

/// One-hot targets from the test labels.
Decomposition decompose(const SeedEnsemble& e, const Dataset& test);

Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

struct LipschitzConstants {
  double c_bar = 0.0;       // constant of the mean function
  double c_bar_zeta = 0.0;  // seed-average of per-member constants
};

/// c_bar: sup over samples of ||(1/S)Σ_ζ ∇ₓf_ζ(x)||₂.
/// c_bar_zeta: (1/S)Σ_ζ c_lower(f_ζ) on the same samples.
LipschitzConstants ensemble_lipschitz_lower(const SeedEnsemble& e, const Matrix& samples,
                                            const PowerIterSettings& s = {});

/// Both constants set to the seed-average of product upper bounds, which
/// dominates the mean function's constant as well.
LipschitzConstants ensemble_lipschitz_upper(const SeedEnsemble& e,
                                            const PowerIterSettings& s = {});

/// The auxiliary point x′ of the variance bounds.
struct XPrime {
  enum class Kind { Zero, TestPoint };
  Kind kind = Kind::Zero;
  std::size_t index = 0;

  static XPrime zero() { return {}; }
  static XPrime test_point(std::size_t i) { return {Kind::TestPoint, i}; }
  std::string label() const;
};

struct VarianceBound {
  double mean_sq_dist = 0.0;  // E_x ||x - x′||², equal to r² when x′ = 0
  double var_at_xprime = 0.0; // Var_ζ f(x′, ζ)
  double bound_v1 = 0.0;      // 3(C̄² + C̄_ζ²)·E||x-x′||² + 3·Var(x′)
  double bound_v2 = 0.0;      // 6·E||x-x′||²·C̄_ζ² + 3·Var(x′)
};

VarianceBound variance_bound(const SeedEnsemble& e, const Matrix& test_inputs, const XPrime& xp,
                             const LipschitzConstants& constants);

struct BiasVarReport {
  double bias_sq = 0.0;
  double variance = 0.0;
  double expected_test_loss = 0.0;
  double r_sq = 0.0;
  LipschitzConstants lower;
  LipschitzConstants upper;
  double var_at_xprime = 0.0;
  double bound_v1_lower = 0.0;
  double bound_v2_lower = 0.0;
  double bound_v1_upper = 0.0;
  double bound_v2_upper = 0.0;
  XPrime xprime;
};

/// Full analysis of one ensemble. Lower constants use `lipschitz_samples`
/// (normally the training inputs).
BiasVarReport analyze_ensemble(const SeedEnsemble& e, const Matrix& lipschitz_samples,
                               const Dataset& test, const XPrime& xp,
                               const PowerIterSettings& s = {});

/// Same as above with the Lipschitz constants already computed.
BiasVarReport analyze_ensemble(const SeedEnsemble& e, const Dataset& test, const XPrime& xp,
                               const LipschitzConstants& lower, const LipschitzConstants& upper);

}  // namespace lipdd
