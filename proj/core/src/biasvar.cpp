#include "lipdd/biasvar.hpp"

#include <algorithm>
#include <cmath>

#include "lipdd/error.hpp"
#include "lipdd/lipschitz.hpp"

namespace lipdd {

void SeedEnsemble::validate() const {
  if (members.size() < 2)
    throw Error("seed ensemble needs at least 2 members, has " + std::to_string(members.size()));
  if (!seeds.empty() && seeds.size() != members.size())
    throw Error("seed ensemble: seed list and member list differ in length");
  for (const auto& m : members)
    if (!(m.arch() == members.front().arch()))
      throw Error("seed ensemble members have different architectures");
}

std::vector<Matrix> SeedEnsemble::outputs(const Matrix& inputs) const {
  std::vector<Matrix> out;
  out.reserve(members.size());
  for (const auto& m : members) out.push_back(m.forward(inputs));
  return out;
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Matrix y(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw Error("one_hot: label out of range");
    y(i, labels[i]) = 1.0;
  }
  return y;
}

Decomposition decompose_outputs(const std::vector<Matrix>& outputs, const Matrix& targets) {
  if (outputs.size() < 2)
    throw Error("decompose: need at least 2 seeds, have " + std::to_string(outputs.size()));
  const std::size_t n = targets.rows(), k = targets.cols();
  if (n == 0) throw Error("decompose: empty test set");
  for (const auto& o : outputs)
    if (o.rows() != n || o.cols() != k) throw Error("decompose: output shape mismatch");

  const double S = static_cast<double>(outputs.size());
  Decomposition d;
  Vector mean(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (const auto& o : outputs)
      for (std::size_t c = 0; c < k; ++c) mean[c] += o(i, c);
    for (auto& v : mean) v /= S;
    for (std::size_t c = 0; c < k; ++c) {
      const double b = targets(i, c) - mean[c];
      d.bias_sq += b * b;
    }
    for (const auto& o : outputs) {
      for (std::size_t c = 0; c < k; ++c) {
        const double v = mean[c] - o(i, c);
        const double e = targets(i, c) - o(i, c);
        d.variance += v * v / S;
        d.expected_test_loss += e * e / S;
      }
    }
  }
  d.bias_sq /= static_cast<double>(n);
  d.variance /= static_cast<double>(n);
  d.expected_test_loss /= static_cast<double>(n);
  return d;
}

Decomposition decompose(const SeedEnsemble& e, const Dataset& test) {
  e.validate();
  return decompose_outputs(e.outputs(test.inputs), one_hot(test.labels, test.num_classes));
}

LipschitzConstants ensemble_lipschitz_lower(const SeedEnsemble& e, const Matrix& samples,
                                            const PowerIterSettings& s) {
  e.validate();
  if (samples.rows() == 0) throw Error("ensemble_lipschitz_lower: empty sample set");
  const double S = static_cast<double>(e.size());
  LipschitzConstants c;
  for (const auto& m : e.members) c.c_bar_zeta += lower_bound(m, samples, s).c_lower;
  c.c_bar_zeta /= S;

  std::vector<ForwardTape> tapes(e.size());
  const Matrix eye = Matrix::identity(e.members.front().output_size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < samples.rows(); start += kChunk) {
    const std::size_t end = std::min(samples.rows(), start + kChunk);
    std::vector<std::size_t> rows;
    for (std::size_t r = start; r < end; ++r) rows.push_back(r);
    const Matrix chunk = gather_rows(samples, rows);
    for (std::size_t m = 0; m < e.size(); ++m) tapes[m] = e.members[m].forward_tape(chunk);
    for (std::size_t r = 0; r < chunk.rows(); ++r) {
      Matrix mean_jac;
      for (std::size_t m = 0; m < e.size(); ++m) {
        Matrix j = e.members[m].vjp_input(tapes[m], r, eye);
        if (m == 0) {
          mean_jac = std::move(j);
        } else {
          for (std::size_t t = 0; t < j.size(); ++t) mean_jac.data()[t] += j.data()[t];
        }
      }
      for (auto& v : mean_jac.data()) v /= S;
      c.c_bar = std::max(c.c_bar, jacobian_norm(mean_jac, s));
    }
  }
  return c;
}

LipschitzConstants ensemble_lipschitz_upper(const SeedEnsemble& e, const PowerIterSettings& s) {
  e.validate();
  double mean = 0.0;
  for (const auto& m : e.members) mean += upper_bound(m, s);
  mean /= static_cast<double>(e.size());
  return {mean, mean};
}

std::string XPrime::label() const {
  return kind == Kind::Zero ? "zero" : "test:" + std::to_string(index);
}

VarianceBound variance_bound(const SeedEnsemble& e, const Matrix& test_inputs, const XPrime& xp,
                             const LipschitzConstants& constants) {
  e.validate();
  if (test_inputs.rows() == 0) throw Error("variance_bound: empty test set");
  const std::size_t d = test_inputs.cols();
  Vector x_prime(d, 0.0);
  if (xp.kind == XPrime::Kind::TestPoint) {
    if (xp.index >= test_inputs.rows()) throw Error("variance_bound: x' index out of range");
    const auto row = test_inputs.row(xp.index);
    x_prime.assign(row.begin(), row.end());
  }
  if (x_prime.size() != e.members.front().input_size())
    throw Error("variance_bound: x' dimension does not match the network input");

  VarianceBound b;
  for (std::size_t i = 0; i < test_inputs.rows(); ++i) {
    const auto x = test_inputs.row(i);
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += (x[k] - x_prime[k]) * (x[k] - x_prime[k]);
    b.mean_sq_dist += sq;
  }
  b.mean_sq_dist /= static_cast<double>(test_inputs.rows());

  const Matrix at(1, d, x_prime);
  const auto outs = e.outputs(at);
  const std::size_t K = outs.front().cols();
  const double S = static_cast<double>(e.size());
  Vector mean(K, 0.0);
  for (const auto& o : outs)
    for (std::size_t c = 0; c < K; ++c) mean[c] += o(0, c) / S;
  for (const auto& o : outs)
    for (std::size_t c = 0; c < K; ++c) b.var_at_xprime += (mean[c] - o(0, c)) * (mean[c] - o(0, c)) / S;

  const double cb = constants.c_bar, cz = constants.c_bar_zeta;
  b.bound_v1 = 3.0 * (cb * cb + cz * cz) * b.mean_sq_dist + 3.0 * b.var_at_xprime;
  // Same shape as v1 so rounding keeps v2 ≥ v1 whenever cb ≤ cz.
  b.bound_v2 = 3.0 * (cz * cz + cz * cz) * b.mean_sq_dist + 3.0 * b.var_at_xprime;
  return b;
}

BiasVarReport analyze_ensemble(const SeedEnsemble& e, const Dataset& test, const XPrime& xp,
                               const LipschitzConstants& lower, const LipschitzConstants& upper) {
  const Decomposition d = decompose(e, test);
  const VarianceBound lo = variance_bound(e, test.inputs, xp, lower);
  const VarianceBound up = variance_bound(e, test.inputs, xp, upper);
  BiasVarReport r;
  r.bias_sq = d.bias_sq;
  r.variance = d.variance;
  r.expected_test_loss = d.expected_test_loss;
  r.r_sq = lo.mean_sq_dist;
  r.lower = lower;
  r.upper = upper;
  r.var_at_xprime = lo.var_at_xprime;
  r.bound_v1_lower = lo.bound_v1;
  r.bound_v2_lower = lo.bound_v2;
  r.bound_v1_upper = up.bound_v1;
  r.bound_v2_upper = up.bound_v2;
  r.xprime = xp;
  return r;
}

BiasVarReport analyze_ensemble(const SeedEnsemble& e, const Matrix& lipschitz_samples,
                               const Dataset& test, const XPrime& xp,
                               const PowerIterSettings& s) {
  return analyze_ensemble(e, test, xp, ensemble_lipschitz_lower(e, lipschitz_samples, s),
                          ensemble_lipschitz_upper(e, s));
}

}  // namespace lipdd
