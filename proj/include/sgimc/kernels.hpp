#pragma once

#include <cstdint>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/sparse_matrix.hpp"

namespace sgimc {

// Inner-loop iteration counter for the two kernels below; tests use it to
// check the O((|Omega| + nnz(X)) * k) scaling without timing anything.
inline std::uint64_t& kernel_op_count() {
  thread_local std::uint64_t count = 0;
  return count;
}

namespace detail {

// Scratch for the kernels so hot loops reuse buffers.
struct KernelScratch {
  DenseMatrix t;  // rows(X) x k intermediate
};

}  // namespace detail

// X^T * S * Q for Omega-sparse S: first T = S * Q entry by entry, then the
// feature contraction X^T * T.  Cost (nnz(S) + nnz(X)) * k; S is never
// densified.
inline void sandwich_contract_into(const FeatureMatrix& x, const OmegaSparseMatrix& s,
                                   const DenseMatrix& q, DenseMatrix& out,
                                   detail::KernelScratch& scratch) {
  if (s.rows() != x.rows()) {
    throw ConformanceError("sandwich_contract: S has " + std::to_string(s.rows()) +
                           " rows, X has " + std::to_string(x.rows()));
  }
  if (s.cols() != q.rows()) {
    throw ConformanceError("sandwich_contract: S has " + std::to_string(s.cols()) +
                           " cols, Q has " + std::to_string(q.rows()) + " rows");
  }
  const index_t k = q.cols();
  DenseMatrix& t = scratch.t;
  if (t.rows() != x.rows() || t.cols() != k) t = DenseMatrix(x.rows(), k);
  t.set_zero();
  s.for_each([&](index_t i, index_t j, double sv) {
    if (sv == 0.0) return;
    double* ti = t.row(i).data();
    const double* qj = q.row(j).data();
    for (index_t l = 0; l < k; ++l) ti[l] += sv * qj[l];
  });
  x.transpose_times_into(t, out);
  kernel_op_count() += static_cast<std::uint64_t>((s.nnz() + x.nnz()) * k);
}

inline DenseMatrix sandwich_contract(const FeatureMatrix& x, const OmegaSparseMatrix& s,
                                     const DenseMatrix& q) {
  detail::KernelScratch scratch;
  DenseMatrix out;
  sandwich_contract_into(x, s, q, out, scratch);
  return out;
}

// (X * D * Q^T) restricted to the pattern of `pattern`: P = X * D once, then
// one k-length dot product per observed entry.  Cost (nnz(X) + |Omega|) * k;
// the full product is never formed.
inline void sandwich_expand_into(const FeatureMatrix& x, const DenseMatrix& d,
                                 const DenseMatrix& q, OmegaSparseMatrix& pattern,
                                 detail::KernelScratch& scratch) {
  if (pattern.nnz() == 0) throw ValueError("sandwich_expand: empty pattern");
  if (pattern.rows() != x.rows() || pattern.cols() != q.rows()) {
    throw ConformanceError("sandwich_expand: pattern " + std::to_string(pattern.rows()) + "x" +
                           std::to_string(pattern.cols()) + " vs X rows " +
                           std::to_string(x.rows()) + ", Q rows " + std::to_string(q.rows()));
  }
  if (d.rows() != x.cols() || d.cols() != q.cols()) {
    throw ConformanceError("sandwich_expand: D " + d.shape_string() + " vs X cols " +
                           std::to_string(x.cols()) + ", k " + std::to_string(q.cols()));
  }
  const index_t k = q.cols();
  x.multiply_into(d, scratch.t);
  const DenseMatrix& p = scratch.t;
  auto rp = pattern.row_ptr();
  auto ci = pattern.col_index();
  auto vals = pattern.values();
  for (index_t i = 0; i < pattern.rows(); ++i) {
    const double* pi = p.row(i).data();
    for (index_t e = rp[i]; e < rp[i + 1]; ++e) {
      const double* qj = q.row(ci[e]).data();
      double acc = 0.0;
      for (index_t l = 0; l < k; ++l) acc += pi[l] * qj[l];
      vals[e] = acc;
    }
  }
  kernel_op_count() += static_cast<std::uint64_t>((pattern.nnz() + x.nnz()) * k);
}

inline OmegaSparseMatrix sandwich_expand(const FeatureMatrix& x, const DenseMatrix& d,
                                         const DenseMatrix& q, const OmegaSparseMatrix& pattern) {
  OmegaSparseMatrix out = pattern.with_same_pattern();
  detail::KernelScratch scratch;
  sandwich_expand_into(x, d, q, out, scratch);
  return out;
}

// ||A - B||_F / ||B||_F.
inline double relative_frobenius_distance(const DenseMatrix& a, const DenseMatrix& b) {
  a.require_same_shape(b, "relative_frobenius_distance");
  double num = 0.0, den = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t p = 0; p < av.size(); ++p) {
    const double diff = av[p] - bv[p];
    num += diff * diff;
    den += bv[p] * bv[p];
  }
  if (den == 0.0) throw NumericalError("relative_frobenius_distance: reference has zero norm");
  return std::sqrt(num / den);
}

}  // namespace sgimc
