#pragma once

#include <cmath>
#include <string>

#include "sgimc/error.hpp"

namespace sgimc {

enum class LossKind { squared_l2, logistic };

inline const char* loss_name(LossKind k) {
  return k == LossKind::squared_l2 ? "squared_l2" : "logistic";
}

namespace detail {

inline void check_label(LossKind kind, double y) {
  if (kind == LossKind::logistic && y != 1.0 && y != -1.0) {
    throw ValueError("logistic loss: label " + std::to_string(y) + " not in {-1, +1}");
  }
}

// sigma(-t) = 1 / (1 + e^t), overflow-safe for any t.
inline double sigmoid_neg(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

}  // namespace detail

// Value of the per-entry loss at observation y, prediction p.
inline double loss_value(LossKind kind, double y, double p) {
  detail::check_label(kind, y);
  if (kind == LossKind::squared_l2) {
    const double r = y - p;
    return 0.5 * r * r;
  }
  // log(1 + e^{-yp}) without overflowing for large |p|.
  const double t = y * p;
  if (t >= 0.0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

// d/dp of the loss.
inline double loss_grad(LossKind kind, double y, double p) {
  detail::check_label(kind, y);
  if (kind == LossKind::squared_l2) return p - y;
  return -y * detail::sigmoid_neg(y * p);
}

// d^2/dp^2 of the loss; always >= 0.
inline double loss_hess(LossKind kind, double y, double p) {
  detail::check_label(kind, y);
  if (kind == LossKind::squared_l2) return 1.0;
  const double s = detail::sigmoid_neg(y * p);
  return s * (1.0 - s);
}

}  // namespace sgimc
