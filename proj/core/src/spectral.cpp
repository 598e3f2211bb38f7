#include "lipdd/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lipdd/error.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

namespace {

constexpr std::size_t kOracleMaxDim = 512;
constexpr double kAdjointTol = 1e-8;

Vector random_unit(Rng& rng, std::size_t n) {
  Vector v(n);
  double nrm = 0.0;
  while (nrm == 0.0) {
    for (auto& x : v) x = rng.normal();
    nrm = norm2(v);
  }
  for (auto& x : v) x /= nrm;
  return v;
}

void check_adjoint(const LinearOperator& op, Rng& rng) {
  Vector av(op.out_dim), atu(op.in_dim);
  for (int pair = 0; pair < 3; ++pair) {
    Vector v = random_unit(rng, op.in_dim);
    Vector u = random_unit(rng, op.out_dim);
    op.apply(v, av);
    op.apply_adjoint(u, atu);
    const double gap = std::abs(dot(av, u) - dot(v, atu));
    if (!(gap <= kAdjointTol)) {
      throw Error("adjoint check failed on random pair " + std::to_string(pair) +
                  ": |<Av,u> - <v,A^T u>| = " + std::to_string(gap));
    }
  }
}

double power_iterate(const LinearOperator& op, const PowerIterSettings& s, Rng& rng) {
  Vector v = random_unit(rng, op.in_dim);
  Vector u(op.out_dim), w(op.in_dim);
  double sigma = 0.0;
  for (std::size_t it = 0; it < s.max_iters; ++it) {
    op.apply(v, u);
    op.apply_adjoint(u, w);
    const double wn = norm2(w);
    // sqrt(|A^T A v|) >= |A v| and both stay below the top singular value.
    const double next = std::sqrt(wn);
    if (wn == 0.0) return std::max(sigma, norm2(u));
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / wn;
    const bool converged = it > 0 && std::abs(next - sigma) <= s.rel_tol * next;
    sigma = std::max(sigma, next);
    if (converged) break;
  }
  return sigma;
}

}  // namespace

void PowerIterSettings::validate() const {
  if (max_iters < 1) throw ConfigError("power_iter.max_iters", "must be at least 1");
  if (!(rel_tol > 0.0)) throw ConfigError("power_iter.rel_tol", "must be positive");
}

double spectral_norm_dense(const Matrix& m, const PowerIterSettings& s) {
  s.validate();
  if (!all_finite(m)) throw Error("spectral_norm_dense: matrix has non-finite entries");
  if (m.empty() || std::all_of(m.data().begin(), m.data().end(), [](double x) { return x == 0.0; }))
    return 0.0;
  LinearOperator op{
      m.cols(), m.rows(),
      [&m](std::span<const double> x, std::span<double> y) {
        auto r = matvec(m, x);
        std::copy(r.begin(), r.end(), y.begin());
      },
      [&m](std::span<const double> x, std::span<double> y) {
        auto r = matvec_transposed(m, x);
        std::copy(r.begin(), r.end(), y.begin());
      }};
  Rng rng(s.seed);
  return power_iterate(op, s, rng);
}

double spectral_norm_operator(const LinearOperator& op, const PowerIterSettings& s) {
  s.validate();
  if (op.in_dim == 0 || op.out_dim == 0) throw Error("spectral_norm_operator: empty operator");
  Rng rng(s.seed);
  check_adjoint(op, rng);
  return power_iterate(op, s, rng);
}

double top_eigenvalue_psd(const Matrix& sym, const PowerIterSettings& s) {
  if (sym.rows() != sym.cols()) throw Error("top_eigenvalue_psd: matrix not square");
  const std::size_t n = sym.rows();
  if (n == 0) return 0.0;
  if (n == 1) return std::max(0.0, sym(0, 0));
  Rng rng(s.seed);
  Vector v = random_unit(rng, n);
  Vector w(n);
  double lambda = 0.0;
  for (std::size_t it = 0; it < s.max_iters; ++it) {
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < n; ++c) acc += sym(r, c) * v[c];
      w[r] = acc;
    }
    const double next = norm2(w);
    if (next == 0.0) return lambda;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / next;
    const bool converged = it > 0 && std::abs(next - lambda) <= s.rel_tol * next;
    lambda = std::max(lambda, next);
    if (converged) break;
  }
  return lambda;
}

Vector jacobi_eigenvalues(Matrix a) {
  if (a.rows() != a.cols()) throw Error("jacobi_eigenvalues: matrix not square");
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        total += a(i, j) * a(i, j);
        if (i != j) off += a(i, j) * a(i, j);
      }
    if (off <= 1e-30 * total || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
    }
  }
  Vector eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

double svd_oracle(const Matrix& m) {
  if (m.rows() > kOracleMaxDim || m.cols() > kOracleMaxDim) {
    throw Error("svd_oracle: dimensions " + std::to_string(m.rows()) + "x" +
                std::to_string(m.cols()) + " exceed the " + std::to_string(kOracleMaxDim) +
                " cap");
  }
  if (!all_finite(m)) throw Error("svd_oracle: matrix has non-finite entries");
  if (m.empty()) return 0.0;
  // Plain loops on purpose: the oracle must not share the product kernels it checks.
  const bool by_rows = m.rows() <= m.cols();
  const std::size_t n = by_rows ? m.rows() : m.cols();
  const std::size_t k = by_rows ? m.cols() : m.rows();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t)
        acc += by_rows ? m(i, t) * m(j, t) : m(t, i) * m(t, j);
      g(i, j) = g(j, i) = acc;
    }
  }
  const Vector eig = jacobi_eigenvalues(std::move(g));
  return std::sqrt(std::max(0.0, eig.front()));
}

Matrix materialize(const LinearOperator& op) {
  Matrix out(op.out_dim, op.in_dim);
  Vector e(op.in_dim, 0.0), col(op.out_dim);
  for (std::size_t j = 0; j < op.in_dim; ++j) {
    e[j] = 1.0;
    op.apply(e, col);
    e[j] = 0.0;
    for (std::size_t i = 0; i < op.out_dim; ++i) out(i, j) = col[i];
  }
  return out;
}

}  // namespace lipdd
