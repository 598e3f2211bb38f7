#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lipdd {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double squared_norm(std::span<const double> v);
double frobenius_norm(const Matrix& m);
bool all_finite(std::span<const double> v);
inline bool all_finite(const Matrix& m) { return all_finite(m.data()); }

/// y = m x
Vector matvec(const Matrix& m, std::span<const double> x);
/// y = mᵀ x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);

/// a · b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// out = a · bᵀ on raw row-major buffers; a is (m × k), b is (n × k), out is (m × n).
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
             std::size_t k);
/// out = a · b on raw row-major buffers; a is (m × k), b is (k × n).
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
             std::size_t k);
/// out += aᵀ · b on raw row-major buffers; a is (k × m), b is (k × n), out is (m × n).
void gemm_tn_accumulate(const double* a, const double* b, double* out, std::size_t m,
                        std::size_t n, std::size_t k);

/// m · mᵀ when rows ≤ cols, mᵀ · m otherwise. Shares the nonzero spectrum of mᵀm.
Matrix small_gram(const Matrix& m);

}  // namespace lipdd
