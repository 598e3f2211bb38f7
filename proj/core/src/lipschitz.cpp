#include "lipdd/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "lipdd/error.hpp"

namespace lipdd {

namespace {

constexpr std::size_t kChunkRows = 512;

// Jacobians are at most output_dim wide on one side, so the Gram matrix is
// tiny and a much tighter tolerance than the layer norms costs nothing.
PowerIterSettings jacobian_settings(const PowerIterSettings& s) {
  PowerIterSettings t = s;
  t.rel_tol = std::min(s.rel_tol, 1e-13);
  t.max_iters = std::max<std::size_t>(s.max_iters, 20000);
  return t;
}

// Runs `per_sample(tape, row, global_index)` over the rows of `samples` in chunks.
template <class F>
void for_each_sample(const Network& net, const Matrix& samples, F&& per_sample) {
  const std::size_t n = samples.rows();
  for (std::size_t start = 0; start < n; start += kChunkRows) {
    const std::size_t end = std::min(n, start + kChunkRows);
    Matrix chunk(end - start, samples.cols());
    std::copy(samples.data().begin() + static_cast<std::ptrdiff_t>(start * samples.cols()),
              samples.data().begin() + static_cast<std::ptrdiff_t>(end * samples.cols()),
              chunk.data().begin());
    const ForwardTape tape = net.forward_tape(chunk);
    for (std::size_t r = 0; r < chunk.rows(); ++r) per_sample(tape, r, start + r);
  }
}

}  // namespace

double jacobian_norm(const Matrix& jacobian, const PowerIterSettings& s) {
  if (!all_finite(jacobian)) throw Error("jacobian_norm: non-finite Jacobian");
  if (jacobian.empty()) return 0.0;
  const Matrix gram = small_gram(jacobian);
  return std::sqrt(top_eigenvalue_psd(gram, jacobian_settings(s)));
}

LowerBound lower_bound(const Network& net, const Matrix& samples, const PowerIterSettings& s,
                       std::vector<double>* per_sample) {
  if (samples.rows() == 0) throw Error("lower_bound: empty sample set");
  const Matrix eye = Matrix::identity(net.output_size());
  LowerBound lb;
  double sum = 0.0;
  if (per_sample) per_sample->assign(samples.rows(), 0.0);
  for_each_sample(net, samples, [&](const ForwardTape& tape, std::size_t r, std::size_t idx) {
    const double v = jacobian_norm(net.vjp_input(tape, r, eye), s);
    if (per_sample) (*per_sample)[idx] = v;
    sum += v;
    if (idx == 0 || v > lb.c_lower) {
      lb.c_lower = v;
      lb.argmax = idx;
    }
  });
  lb.c_avg = sum / static_cast<double>(samples.rows());
  return lb;
}

double upper_bound(const Network& net, const PowerIterSettings& s) {
  double product = 1.0;
  for (double norm : layer_spectral_norms(net, s)) product *= norm;
  return product;
}

ProbeSet::ProbeSet(const Matrix& train, const Matrix& test, std::size_t pairs_per_lambda,
                   std::uint64_t seed)
    : train_(&train), test_(&test), pairs_(pairs_per_lambda), seed_(seed) {
  if (test.rows() > 0 && train.rows() > 0 && test.cols() != train.cols())
    throw Error("probe set: train and test dimensions differ");
}

std::size_t ProbeSet::size() const noexcept {
  std::size_t n = train_->rows() + test_->rows();
  if (train_->rows() > 0) n += kLambdas.size() * pairs_;
  if (test_->rows() > 0) n += kLambdas.size() * pairs_;
  return n;
}

double probe_bound(const Network& net, const ProbeSet& probe, const PowerIterSettings& s) {
  const std::size_t dim = net.input_size();
  std::vector<double> buffer;
  buffer.reserve(kChunkRows * dim);
  double sup = 0.0;
  auto flush = [&] {
    if (buffer.empty()) return;
    const std::size_t rows = buffer.size() / dim;
    const Matrix chunk(rows, dim, std::move(buffer));
    sup = std::max(sup, lower_bound(net, chunk, s).c_lower);
    buffer = {};
    buffer.reserve(kChunkRows * dim);
  };
  probe.for_each([&](std::span<const double> x) {
    if (x.size() != dim) throw Error("probe_bound: probe point dimension mismatch");
    buffer.insert(buffer.end(), x.begin(), x.end());
    if (buffer.size() == kChunkRows * dim) flush();
  });
  flush();
  return sup;
}

double softmax_composed_lower_bound(const Network& net, const Matrix& samples,
                                    const PowerIterSettings& s) {
  const std::size_t K = net.output_size();
  if (K < 2) throw Error("softmax_composed_lower_bound: needs at least two outputs");
  if (samples.rows() == 0) throw Error("softmax_composed_lower_bound: empty sample set");
  Matrix js(K, K);
  double sup = 0.0;
  for_each_sample(net, samples, [&](const ForwardTape& tape, std::size_t r, std::size_t) {
    const auto z = tape.activations.back().row(r);
    const double m = *std::max_element(z.begin(), z.end());
    Vector p(K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += (p[k] = std::exp(z[k] - m));
    for (auto& v : p) v /= total;
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) js(i, j) = (i == j ? p[i] : 0.0) - p[i] * p[j];
    // Row i of (J_softmax · ∇f) is the VJP of cotangent row i of J_softmax.
    sup = std::max(sup, jacobian_norm(net.vjp_input(tape, r, js), s));
  });
  return sup;
}

std::optional<double> LipschitzReport::probe_position() const {
  if (!c_probe) return std::nullopt;
  const double span = c_upper - c_lower;
  if (!(span > 0.0)) return std::nullopt;
  return (*c_probe - c_lower) / span;
}

bool LipschitzReport::ordered(double rel_slack) const {
  auto le = [rel_slack](double a, double b) { return a <= b + rel_slack * std::abs(b); };
  if (!le(c_avg_norm, c_lower) || !le(c_lower, c_upper)) return false;
  if (c_probe && (!le(c_lower, *c_probe) || !le(*c_probe, c_upper))) return false;
  return true;
}

nlohmann::ordered_json report_json(const LipschitzReport& r) {
  nlohmann::ordered_json j;
  j["c_lower"] = r.c_lower;
  j["c_avg_norm"] = r.c_avg_norm;
  j["c_upper"] = r.c_upper;
  j["c_probe"] = r.c_probe ? nlohmann::ordered_json(*r.c_probe) : nlohmann::ordered_json(nullptr);
  const auto pos = r.probe_position();
  j["probe_position"] = pos ? nlohmann::ordered_json(*pos) : nlohmann::ordered_json(nullptr);
  j["softmax_composed"] = r.softmax_composed;
  j["c_softmax"] = r.c_softmax ? nlohmann::ordered_json(*r.c_softmax) : nlohmann::ordered_json(nullptr);
  j["snapshot"] = {{"arch", r.snapshot.arch}, {"seed", r.snapshot.seed}, {"epoch", r.snapshot.epoch}};
  return j;
}

LipschitzReport compute_report(const Network& net, const Matrix& train, const Matrix* test,
                               const ReportOptions& options, Snapshot snapshot) {
  LipschitzReport r;
  const LowerBound lb = lower_bound(net, train, options.power);
  r.c_lower = lb.c_lower;
  r.c_avg_norm = lb.c_avg;
  r.c_upper = upper_bound(net, options.power);
  if (options.probe_pairs) {
    const Matrix empty(0, train.cols());
    const ProbeSet probe(train, test ? *test : empty, *options.probe_pairs, options.probe_seed);
    r.c_probe = probe_bound(net, probe, options.power);
  }
  if (options.softmax) {
    r.softmax_composed = true;
    r.c_softmax = softmax_composed_lower_bound(net, train, options.power);
  }
  r.snapshot = std::move(snapshot);
  return r;
}

}  // namespace lipdd
