#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgimc/error.hpp"
#include "sgimc/rng.hpp"

namespace sgimc {

using index_t = std::int64_t;

// Row-major dense matrix.  values()[i * cols + j] is entry (i, j).
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(index_t rows, index_t cols)
      : rows_(rows), cols_(cols), values_(check_shape(rows, cols), 0.0) {}

  DenseMatrix(index_t rows, index_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (static_cast<std::size_t>(check_shape(rows, cols)) != values_.size()) {
      throw ConformanceError("dense matrix: " + std::to_string(values_.size()) +
                             " values for shape " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    }
  }

  static DenseMatrix identity(index_t n) {
    DenseMatrix m(n, n);
    for (index_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  // Entries i.i.d. N(0, sd^2) from the given stream.
  static DenseMatrix gaussian(index_t rows, index_t cols, double sd,
                              std::uint64_t stream_seed) {
    DenseMatrix m(rows, cols);
    auto rng = make_rng(stream_seed);
    std::normal_distribution<double> dist(0.0, sd);
    for (double& v : m.values_) v = dist(rng);
    return m;
  }

  index_t rows() const { return rows_; }
  index_t cols() const { return cols_; }
  index_t size() const { return rows_ * cols_; }

  double& operator()(index_t i, index_t j) { return values_[i * cols_ + j]; }
  double operator()(index_t i, index_t j) const { return values_[i * cols_ + j]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> row(index_t i) { return {values_.data() + i * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(index_t i) const { return {values_.data() + i * cols_, static_cast<std::size_t>(cols_)}; }

  void fill(double v) { values_.assign(values_.size(), v); }

  void set_zero() { fill(0.0); }

  double frobenius_norm() const { return std::sqrt(squared_norm()); }

  double squared_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
  }

  double row_norm(index_t i) const {
    double s = 0.0;
    for (double v : row(i)) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // this += alpha * other
  void add_scaled(const DenseMatrix& other, double alpha) {
    require_same_shape(other, "add_scaled");
    for (std::size_t p = 0; p < values_.size(); ++p) values_[p] += alpha * other.values_[p];
  }

  void scale(double alpha) {
    for (double& v : values_) v *= alpha;
  }

  // Frobenius inner product.
  static double dot(const DenseMatrix& a, const DenseMatrix& b) {
    a.require_same_shape(b, "dot");
    double s = 0.0;
    for (std::size_t p = 0; p < a.values_.size(); ++p) s += a.values_[p] * b.values_[p];
    return s;
  }

  DenseMatrix transposed() const {
    DenseMatrix t(cols_, rows_);
    for (index_t i = 0; i < rows_; ++i)
      for (index_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  // this * other
  DenseMatrix matmul(const DenseMatrix& other) const {
    if (cols_ != other.rows_) {
      throw ConformanceError("matmul: " + shape_string() + " * " + other.shape_string());
    }
    DenseMatrix out(rows_, other.cols_);
    for (index_t i = 0; i < rows_; ++i) {
      const double* a = values_.data() + i * cols_;
      double* o = out.values_.data() + i * other.cols_;
      for (index_t l = 0; l < cols_; ++l) {
        const double al = a[l];
        if (al == 0.0) continue;
        const double* b = other.values_.data() + l * other.cols_;
        for (index_t j = 0; j < other.cols_; ++j) o[j] += al * b[j];
      }
    }
    return out;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) {
    a.add_scaled(b, 1.0);
    return a;
  }

  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) {
    a.add_scaled(b, -1.0);
    return a;
  }

  friend DenseMatrix operator*(double alpha, DenseMatrix m) {
    m.scale(alpha);
    return m;
  }

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  void require_same_shape(const DenseMatrix& other, const char* what) const {
    if (!same_shape(other)) {
      throw ConformanceError(std::string(what) + ": shapes " + shape_string() +
                             " vs " + other.shape_string());
    }
  }

 private:
  static index_t check_shape(index_t rows, index_t cols) {
    if (rows < 0 || cols < 0) throw ValueError("dense matrix: negative dimension");
    return rows * cols;
  }

  index_t rows_ = 0;
  index_t cols_ = 0;
  std::vector<double> values_;
};

}  // namespace sgimc
