#pragma once

#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/sparse_matrix.hpp"

namespace sgimc {

// Side-information matrix (one row per entity).  Either dense or CSR
// storage, optionally extended by a sparsely-stored identity block on the
// right, which is how per-entity bias columns are represented without
// materializing them.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  static FeatureMatrix dense(DenseMatrix x) {
    FeatureMatrix f;
    f.rows_ = x.rows();
    f.storage_cols_ = x.cols();
    f.storage_ = std::move(x);
    return f;
  }

  static FeatureMatrix sparse_csr(index_t rows, index_t cols, std::vector<Triplet> entries) {
    FeatureMatrix f;
    f.rows_ = rows;
    f.storage_cols_ = cols;
    f.storage_ = OmegaSparseMatrix(rows, cols, std::move(entries));
    return f;
  }

  static FeatureMatrix identity(index_t n) {
    std::vector<Triplet> entries;
    entries.reserve(n);
    for (index_t i = 0; i < n; ++i) entries.push_back({i, i, 1.0});
    return sparse_csr(n, n, std::move(entries));
  }

  index_t rows() const { return rows_; }
  index_t cols() const { return storage_cols_ + (identity_tail_ ? rows_ : 0); }
  bool is_dense() const { return std::holds_alternative<DenseMatrix>(storage_); }
  bool has_identity_tail() const { return identity_tail_; }

  index_t nnz() const {
    index_t n = identity_tail_ ? rows_ : 0;
    if (is_dense()) return n + rows_ * storage_cols_;
    return n + std::get<OmegaSparseMatrix>(storage_).nnz();
  }

  // [this | I].  Applying again folds the existing tail into storage first,
  // so widths keep growing.
  FeatureMatrix with_identity_tail() const {
    FeatureMatrix f = identity_tail_ ? materialized() : *this;
    f.identity_tail_ = true;
    return f;
  }

  // out = X * d, shape rows() x d.cols().
  void multiply_into(const DenseMatrix& d, DenseMatrix& out) const {
    if (d.rows() != cols()) {
      throw ConformanceError("feature multiply: " + std::to_string(rows()) + "x" +
                             std::to_string(cols()) + " * " + d.shape_string());
    }
    const index_t k = d.cols();
    if (out.rows() != rows_ || out.cols() != k) out = DenseMatrix(rows_, k);
    out.set_zero();
    if (is_dense()) {
      const DenseMatrix& x = std::get<DenseMatrix>(storage_);
      for (index_t i = 0; i < rows_; ++i) {
        std::span<const double> xi = x.row(i);
        double* o = out.row(i).data();
        for (index_t l = 0; l < storage_cols_; ++l) {
          const double xv = xi[l];
          if (xv == 0.0) continue;
          const double* dl = d.row(l).data();
          for (index_t j = 0; j < k; ++j) o[j] += xv * dl[j];
        }
      }
    } else {
      const OmegaSparseMatrix& x = std::get<OmegaSparseMatrix>(storage_);
      x.for_each([&](index_t i, index_t l, double xv) {
        double* o = out.row(i).data();
        const double* dl = d.row(l).data();
        for (index_t j = 0; j < k; ++j) o[j] += xv * dl[j];
      });
    }
    if (identity_tail_) {
      for (index_t i = 0; i < rows_; ++i) {
        double* o = out.row(i).data();
        const double* di = d.row(storage_cols_ + i).data();
        for (index_t j = 0; j < k; ++j) o[j] += di[j];
      }
    }
  }

  DenseMatrix multiply(const DenseMatrix& d) const {
    DenseMatrix out;
    multiply_into(d, out);
    return out;
  }

  // out = X^T * t, shape cols() x t.cols().
  void transpose_times_into(const DenseMatrix& t, DenseMatrix& out) const {
    if (t.rows() != rows_) {
      throw ConformanceError("feature transpose_times: " + std::to_string(cols()) + "x" +
                             std::to_string(rows_) + " * " + t.shape_string());
    }
    const index_t k = t.cols();
    if (out.rows() != cols() || out.cols() != k) out = DenseMatrix(cols(), k);
    out.set_zero();
    if (is_dense()) {
      const DenseMatrix& x = std::get<DenseMatrix>(storage_);
      for (index_t i = 0; i < rows_; ++i) {
        std::span<const double> xi = x.row(i);
        const double* ti = t.row(i).data();
        for (index_t l = 0; l < storage_cols_; ++l) {
          const double xv = xi[l];
          if (xv == 0.0) continue;
          double* o = out.row(l).data();
          for (index_t j = 0; j < k; ++j) o[j] += xv * ti[j];
        }
      }
    } else {
      const OmegaSparseMatrix& x = std::get<OmegaSparseMatrix>(storage_);
      x.for_each([&](index_t i, index_t l, double xv) {
        double* o = out.row(l).data();
        const double* ti = t.row(i).data();
        for (index_t j = 0; j < k; ++j) o[j] += xv * ti[j];
      });
    }
    if (identity_tail_) {
      for (index_t i = 0; i < rows_; ++i) {
        double* o = out.row(storage_cols_ + i).data();
        const double* ti = t.row(i).data();
        for (index_t j = 0; j < k; ++j) o[j] += ti[j];
      }
    }
  }

  DenseMatrix transpose_times(const DenseMatrix& t) const {
    DenseMatrix out;
    transpose_times_into(t, out);
    return out;
  }

  // out_k = x_i^T * u (row i against a cols() x k matrix).
  void row_times(index_t i, const DenseMatrix& u, std::span<double> out_k) const {
    if (i < 0 || i >= rows_) throw ValueError("feature row_times: row " + std::to_string(i));
    if (u.rows() != cols() || static_cast<index_t>(out_k.size()) != u.cols()) {
      throw ConformanceError("feature row_times: shape mismatch");
    }
    const index_t k = u.cols();
    for (index_t j = 0; j < k; ++j) out_k[j] = 0.0;
    if (is_dense()) {
      const DenseMatrix& x = std::get<DenseMatrix>(storage_);
      std::span<const double> xi = x.row(i);
      for (index_t l = 0; l < storage_cols_; ++l) {
        const double xv = xi[l];
        if (xv == 0.0) continue;
        const double* ul = u.row(l).data();
        for (index_t j = 0; j < k; ++j) out_k[j] += xv * ul[j];
      }
    } else {
      const OmegaSparseMatrix& x = std::get<OmegaSparseMatrix>(storage_);
      auto rp = x.row_ptr();
      auto ci = x.col_index();
      auto vals = x.values();
      for (index_t e = rp[i]; e < rp[i + 1]; ++e) {
        const double* ul = u.row(ci[e]).data();
        for (index_t j = 0; j < k; ++j) out_k[j] += vals[e] * ul[j];
      }
    }
    if (identity_tail_) {
      const double* ui = u.row(storage_cols_ + i).data();
      for (index_t j = 0; j < k; ++j) out_k[j] += ui[j];
    }
  }

  DenseMatrix to_dense() const {
    DenseMatrix out(rows_, cols());
    if (is_dense()) {
      const DenseMatrix& x = std::get<DenseMatrix>(storage_);
      for (index_t i = 0; i < rows_; ++i)
        for (index_t l = 0; l < storage_cols_; ++l) out(i, l) = x(i, l);
    } else {
      std::get<OmegaSparseMatrix>(storage_).for_each(
          [&](index_t i, index_t l, double v) { out(i, l) = v; });
    }
    if (identity_tail_) {
      for (index_t i = 0; i < rows_; ++i) out(i, storage_cols_ + i) = 1.0;
    }
    return out;
  }

 private:
  // Folds any identity tail into explicit storage.
  FeatureMatrix materialized() const {
    if (!identity_tail_) return *this;
    if (is_dense()) {
      return FeatureMatrix::dense(to_dense());
    }
    const OmegaSparseMatrix& x = std::get<OmegaSparseMatrix>(storage_);
    std::vector<Triplet> entries;
    entries.reserve(x.nnz() + rows_);
    x.for_each([&](index_t i, index_t l, double v) { entries.push_back({i, l, v}); });
    for (index_t i = 0; i < rows_; ++i) entries.push_back({i, storage_cols_ + i, 1.0});
    return sparse_csr(rows_, storage_cols_ + rows_, std::move(entries));
  }

  index_t rows_ = 0;
  index_t storage_cols_ = 0;
  bool identity_tail_ = false;
  std::variant<DenseMatrix, OmegaSparseMatrix> storage_;
};

}  // namespace sgimc
