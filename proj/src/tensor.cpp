#include "veritas/tensor.hpp"

#include <cmath>
#include <sstream>

#include "veritas/errors.hpp"

namespace veritas::nn {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix of shape (" + std::to_string(rows) + ", " + std::to_string(cols) +
                     ") given " + std::to_string(data_.size()) + " values");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) {
  for (auto& x : data_) x = v;
}

Vector matvec(const Matrix& w, std::span<const double> x) {
  if (w.cols() != x.size()) {
    throw ShapeError("matvec: weight " + shape_string(w) + " applied to input of length " +
                     std::to_string(x.size()));
  }
  Vector y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

Vector matvec_transposed(const Matrix& w, std::span<const double> x) {
  if (w.rows() != x.size()) {
    throw ShapeError("matvec_transposed: weight " + shape_string(w) + " applied to input of length " +
                     std::to_string(x.size()));
  }
  Vector y(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols(); ++c) y[c] += w(r, c) * xr;
  }
  return y;
}

void add_outer(Matrix& w, std::span<const double> a, std::span<const double> b) {
  if (w.rows() != a.size() || w.cols() != b.size()) {
    throw ShapeError("add_outer: target " + shape_string(w) + " vs outer product (" +
                     std::to_string(a.size()) + ", " + std::to_string(b.size()) + ")");
  }
  for (std::size_t r = 0; r < a.size(); ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    for (std::size_t c = 0; c < b.size(); ++c) w(r, c) += ar * b[c];
  }
}

void add_inplace(std::span<double> into, std::span<const double> x) {
  if (into.size() != x.size()) throw ShapeError("add_inplace: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) into[i] += x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << '(' << m.rows() << ", " << m.cols() << ')';
  return os.str();
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected shape (" + std::to_string(rows) + ", " +
                     std::to_string(cols) + "), got " + shape_string(m));
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput(std::string(what) + ": non-finite value");
  }
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace veritas::nn
