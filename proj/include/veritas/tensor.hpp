#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace veritas::nn {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. A column vector is a Matrix with cols == 1,
/// but most of the API works on plain Vector for readability.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// y = W x
Vector matvec(const Matrix& w, std::span<const double> x);
/// y = W^T x
Vector matvec_transposed(const Matrix& w, std::span<const double> x);
/// W += a b^T
void add_outer(Matrix& w, std::span<const double> a, std::span<const double> b);

void add_inplace(std::span<double> into, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

std::string shape_string(const Matrix& m);

/// Throws ShapeError unless `m` is rows x cols.
void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what);
/// Throws InvalidInput if any entry is non-finite.
void require_finite(std::span<const double> v, const char* what);

std::size_t argmax(std::span<const double> v);

}  // namespace veritas::nn
