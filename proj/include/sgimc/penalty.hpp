#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"

namespace sgimc {

enum class PenaltyTag { group_l21, frobenius_sq, l1 };

inline const char* penalty_name(PenaltyTag t) {
  switch (t) {
    case PenaltyTag::group_l21: return "group_l21";
    case PenaltyTag::frobenius_sq: return "frobenius_sq";
    default: return "l1";
  }
}

struct PenaltyKind {
  PenaltyTag tag = PenaltyTag::group_l21;
  double lambda = 0.0;

  PenaltyKind() = default;
  PenaltyKind(PenaltyTag t, double l) : tag(t), lambda(l) {
    if (!(l >= 0.0)) throw ValueError("penalty: lambda must be >= 0");
  }
};

// lambda * R(Z): sum of row 2-norms, squared Frobenius norm, or entrywise l1.
inline double penalty_value(const PenaltyKind& pen, const DenseMatrix& z) {
  double r = 0.0;
  switch (pen.tag) {
    case PenaltyTag::group_l21:
      for (index_t i = 0; i < z.rows(); ++i) r += z.row_norm(i);
      break;
    case PenaltyTag::frobenius_sq:
      r = z.squared_norm();
      break;
    case PenaltyTag::l1:
      for (double v : z.values()) r += std::abs(v);
      break;
  }
  return pen.lambda * r;
}

// argmin_Z step * lambda * R(Z) + 1/2 ||Z - A||_F^2, written into `out`.
inline void prox_into(const PenaltyKind& pen, const DenseMatrix& a, double step,
                      DenseMatrix& out) {
  if (!(step > 0.0)) throw ValueError("prox: step must be > 0");
  if (!out.same_shape(a)) out = DenseMatrix(a.rows(), a.cols());
  const double nu = step * pen.lambda;
  switch (pen.tag) {
    case PenaltyTag::group_l21:
      // Row-wise group shrinkage (1 - nu/||a_i||)_+ a_i; rows at or below
      // the threshold become exactly zero.
      for (index_t i = 0; i < a.rows(); ++i) {
        const double n = a.row_norm(i);
        const double f = n > nu ? 1.0 - nu / n : 0.0;
        auto ai = a.row(i);
        auto oi = out.row(i);
        for (index_t j = 0; j < a.cols(); ++j) oi[j] = f * ai[j];
      }
      break;
    case PenaltyTag::frobenius_sq: {
      const double f = 1.0 / (1.0 + 2.0 * nu);
      auto av = a.values();
      auto ov = out.values();
      for (std::size_t p = 0; p < av.size(); ++p) ov[p] = f * av[p];
      break;
    }
    case PenaltyTag::l1: {
      auto av = a.values();
      auto ov = out.values();
      for (std::size_t p = 0; p < av.size(); ++p) {
        const double v = av[p];
        ov[p] = v > nu ? v - nu : (v < -nu ? v + nu : 0.0);
      }
      break;
    }
  }
}

inline DenseMatrix prox(const PenaltyKind& pen, const DenseMatrix& a, double step) {
  DenseMatrix out;
  prox_into(pen, a, step, out);
  return out;
}

// Indices of rows with 2-norm above the threshold, ascending.
inline std::vector<index_t> active_rows(const DenseMatrix& z, double threshold) {
  std::vector<index_t> idx;
  for (index_t i = 0; i < z.rows(); ++i) {
    if (z.row_norm(i) > threshold) idx.push_back(i);
  }
  return idx;
}

// Default threshold: 1e-6 times the largest row norm (1 if Z is all zero).
inline std::vector<index_t> active_rows(const DenseMatrix& z) {
  double max_norm = 0.0;
  for (index_t i = 0; i < z.rows(); ++i) max_norm = std::max(max_norm, z.row_norm(i));
  if (max_norm == 0.0) max_norm = 1.0;
  return active_rows(z, 1e-6 * max_norm);
}

}  // namespace sgimc
