#include "lipdd/linalg.hpp"

#include <cmath>
#include <Eigen/Dense>

#include "lipdd/error.hpp"

namespace lipdd {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data().data(), m.rows(), m.cols()); }
MutMap view(Matrix& m) { return MutMap(m.data().data(), m.rows(), m.cols()); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error("matrix data length " + std::to_string(data_.size()) + " does not match " +
                std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(squared_norm(v)); }

double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw Error("matvec: shape mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.rows()) throw Error("matvec_transposed: shape mismatch");
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < row.size(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error("matmul: shape mismatch");
  Matrix out(a.rows(), b.cols());
  if (!out.empty() && a.cols() > 0) view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: shape mismatch");
  Matrix out(a.rows(), b.rows());
  if (!out.empty() && a.cols() > 0) view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error("matmul_tn: shape mismatch");
  Matrix out(a.cols(), b.cols());
  if (!out.empty() && a.rows() > 0) view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
             std::size_t k) {
  if (m == 0 || n == 0) return;
  MutMap o(out, m, n);
  if (k == 0) {
    o.setZero();
    return;
  }
  o.noalias() = ConstMap(a, m, k) * ConstMap(b, n, k).transpose();
}

void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
             std::size_t k) {
  if (m == 0 || n == 0) return;
  MutMap o(out, m, n);
  if (k == 0) {
    o.setZero();
    return;
  }
  o.noalias() = ConstMap(a, m, k) * ConstMap(b, k, n);
}

void gemm_tn_accumulate(const double* a, const double* b, double* out, std::size_t m,
                        std::size_t n, std::size_t k) {
  if (m == 0 || n == 0 || k == 0) return;
  MutMap(out, m, n).noalias() += ConstMap(a, k, m).transpose() * ConstMap(b, k, n);
}

Matrix small_gram(const Matrix& m) {
  return m.rows() <= m.cols() ? matmul_nt(m, m) : matmul_tn(m, m);
}

}  // namespace lipdd
