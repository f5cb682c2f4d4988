#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"

namespace sgimc {

struct Triplet {
  index_t row;
  index_t col;
  double value;
};

// Values on a fixed observed index set Omega, stored in a canonical
// row-compressed layout (entries sorted by (row, col)).  The pattern is
// immutable after construction; values stay rewritable so loss derivative
// streams can reuse the layout.
class OmegaSparseMatrix {
 public:
  OmegaSparseMatrix() = default;

  OmegaSparseMatrix(index_t rows, index_t cols, std::vector<Triplet> entries)
      : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ValueError("sparse matrix: negative dimension");
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    const index_t n = static_cast<index_t>(entries.size());
    row_ptr_.assign(rows + 1, 0);
    col_idx_.resize(n);
    values_.resize(n);
    for (index_t e = 0; e < n; ++e) {
      const Triplet& t = entries[e];
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
        throw ConformanceError("sparse matrix: entry (" + std::to_string(t.row) + ", " +
                               std::to_string(t.col) + ") outside " + std::to_string(rows) +
                               "x" + std::to_string(cols));
      }
      if (e > 0 && entries[e - 1].row == t.row && entries[e - 1].col == t.col) {
        throw ValueError("sparse matrix: duplicate entry (" + std::to_string(t.row) + ", " +
                         std::to_string(t.col) + ")");
      }
      ++row_ptr_[t.row + 1];
      col_idx_[e] = t.col;
      values_[e] = t.value;
    }
    std::partial_sum(row_ptr_.begin(), row_ptr_.end(), row_ptr_.begin());
  }

  index_t rows() const { return rows_; }
  index_t cols() const { return cols_; }
  index_t nnz() const { return static_cast<index_t>(values_.size()); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const index_t> row_ptr() const { return row_ptr_; }
  std::span<const index_t> col_index() const { return col_idx_; }

  // Entry order matches the canonical layout.
  template <class F>
  void for_each(F&& f) const {
    for (index_t i = 0; i < rows_; ++i)
      for (index_t e = row_ptr_[i]; e < row_ptr_[i + 1]; ++e) f(i, col_idx_[e], values_[e]);
  }

  // Same pattern, all values zero.
  OmegaSparseMatrix with_same_pattern() const {
    OmegaSparseMatrix m(*this);
    std::fill(m.values_.begin(), m.values_.end(), 0.0);
    return m;
  }

  bool same_pattern(const OmegaSparseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && row_ptr_ == other.row_ptr_ &&
           col_idx_ == other.col_idx_;
  }

  // Canonical layout of the transpose; an involution.
  OmegaSparseMatrix transposed() const {
    std::vector<Triplet> entries;
    entries.reserve(values_.size());
    for_each([&](index_t i, index_t j, double v) { entries.push_back({j, i, v}); });
    return OmegaSparseMatrix(cols_, rows_, std::move(entries));
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for_each([&](index_t i, index_t j, double v) { d(i, j) = v; });
    return d;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

 private:
  index_t rows_ = 0;
  index_t cols_ = 0;
  std::vector<index_t> row_ptr_{0};
  std::vector<index_t> col_idx_;
  std::vector<double> values_;
};

}  // namespace sgimc
