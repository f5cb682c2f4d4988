#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sgimc/admm.hpp"
#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/kernels.hpp"
#include "sgimc/loss.hpp"
#include "sgimc/penalty.hpp"
#include "sgimc/rng.hpp"
#include "sgimc/sparse_matrix.hpp"
#include "sgimc/subproblem.hpp"

namespace sgimc {

// Observed entries plus side information for both entity sets.
struct Problem {
  OmegaSparseMatrix m;
  FeatureMatrix x;
  FeatureMatrix y;
  LossKind loss = LossKind::squared_l2;

  Problem(OmegaSparseMatrix m_, FeatureMatrix x_, FeatureMatrix y_, LossKind loss_)
      : m(std::move(m_)), x(std::move(x_)), y(std::move(y_)), loss(loss_) {
    if (x.rows() != m.rows()) {
      throw ConformanceError("problem: X has " + std::to_string(x.rows()) + " rows, M has " +
                             std::to_string(m.rows()));
    }
    if (y.rows() != m.cols()) {
      throw ConformanceError("problem: Y has " + std::to_string(y.rows()) + " rows, M has " +
                             std::to_string(m.cols()) + " cols");
    }
    if (loss == LossKind::logistic) {
      std::string bad;
      int count = 0;
      m.for_each([&](index_t i, index_t j, double v) {
        if (v != 1.0 && v != -1.0 && count < 10) {
          bad += (count ? ", " : "") + std::string("(") + std::to_string(i) + "," +
                 std::to_string(j) + ")=" + std::to_string(v);
          ++count;
        }
      });
      if (count > 0) throw ValueError("problem: logistic labels must be +-1; offenders: " + bad);
    }
    for (double v : m.values()) {
      if (!std::isfinite(v)) throw ValueError("problem: non-finite observed value");
    }
  }
};

// Inductive factors U (d1 x k), V (d2 x k) and, for the combined model,
// transductive residual factors over the training entities.
struct FactorPair {
  DenseMatrix u, v;
  std::optional<DenseMatrix> u_residual, v_residual;

  bool has_residual() const { return u_residual.has_value() && v_residual.has_value(); }
};

struct SolveConfig {
  index_t k = 5;
  double lambda_u = 0.0;
  double lambda_v = 0.0;
  PenaltyTag penalty_u = PenaltyTag::group_l21;
  PenaltyTag penalty_v = PenaltyTag::group_l21;
  double lambda_ridge = 0.0;  // Frobenius smoothing inside each block solve

  bool combined = false;      // adds the transductive residual term
  index_t residual_rank = 0;  // 0 means "use k"
  double lambda_u_residual = 0.0;
  double lambda_v_residual = 0.0;

  AdmmConfig admm;
  double outer_tol = 1e-5;
  int outer_max_iter = 50;
  std::uint64_t seed = 0;

  index_t residual_rank_or_k() const { return residual_rank > 0 ? residual_rank : k; }

  void validate() const {
    if (k < 1) throw ValueError("solve config: k must be >= 1");
    if (lambda_u < 0.0 || lambda_v < 0.0 || lambda_ridge < 0.0)
      throw ValueError("solve config: lambdas must be >= 0");
    if (!(outer_tol > 0.0)) throw ValueError("solve config: outer_tol must be > 0");
    if (outer_max_iter < 0) throw ValueError("solve config: outer_max_iter must be >= 0");
    if (combined && (lambda_u_residual < 0.0 || lambda_v_residual < 0.0))
      throw ValueError("solve config: residual lambdas must be >= 0");
    admm.validate();
  }
};

struct SweepStats {
  int sweep = 0;
  double objective = 0.0;
  double primal_u = 0.0, dual_u = 0.0;
  double primal_v = 0.0, dual_v = 0.0;
  index_t active_u = 0, active_v = 0;
  double prediction_delta = 0.0;
  double seconds = 0.0;
};

struct FitReport {
  std::vector<SweepStats> sweeps;
  std::vector<index_t> active_rows_u, active_rows_v;
  bool converged = false;
  bool aborted = false;
  std::string abort_reason;
  int sweeps_run = 0;
  double seconds = 0.0;
};

namespace detail {

// Which factor pair side is updated first.  Decided from the data so that
// fit(M, X, Y) and fit(M^T, Y, X) execute identical block solves in the
// identical order; only a fully square problem falls back to U-first.
inline bool row_side_first(index_t d1, index_t d2, index_t n1, index_t n2) {
  if (d1 != d2) return d1 > d2;
  if (n1 != n2) return n1 > n2;
  return true;
}

// <u_res_i, v_res_j> per observed entry, canonical Omega order.
inline void residual_offsets(const OmegaSparseMatrix& m, const DenseMatrix& u_res,
                             const DenseMatrix& v_res, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(m.nnz()), 0.0);
  const index_t k = u_res.cols();
  std::size_t e = 0;
  m.for_each([&](index_t i, index_t j, double) {
    const double* a = u_res.row(i).data();
    const double* b = v_res.row(j).data();
    double acc = 0.0;
    for (index_t l = 0; l < k; ++l) acc += a[l] * b[l];
    out[e++] = acc;
  });
}

}  // namespace detail

// Model predictions restricted to the observed pattern, canonical order.
inline std::vector<double> omega_predictions(const Problem& prob, const FactorPair& f) {
  std::vector<double> p(static_cast<std::size_t>(prob.m.nnz()), 0.0);
  if (prob.m.nnz() == 0) return p;
  OmegaSparseMatrix preds = sandwich_expand(prob.x, f.u, prob.y.multiply(f.v), prob.m);
  auto pv = preds.values();
  p.assign(pv.begin(), pv.end());
  if (f.has_residual()) {
    std::vector<double> res;
    detail::residual_offsets(prob.m, *f.u_residual, *f.v_residual, res);
    for (std::size_t e = 0; e < p.size(); ++e) p[e] += res[e];
  }
  return p;
}

// Full model objective: data term over Omega plus every regularizer.
inline double objective_full(const Problem& prob, const FactorPair& f, const SolveConfig& cfg) {
  const std::vector<double> p = omega_predictions(prob, f);
  double s = 0.0;
  auto mv = prob.m.values();
  for (std::size_t e = 0; e < p.size(); ++e) s += loss_value(prob.loss, mv[e], p[e]);
  s += penalty_value(PenaltyKind(cfg.penalty_u, cfg.lambda_u), f.u);
  s += penalty_value(PenaltyKind(cfg.penalty_v, cfg.lambda_v), f.v);
  if (cfg.lambda_ridge != 0.0) {
    s += 0.5 * cfg.lambda_ridge * (f.u.squared_norm() + f.v.squared_norm());
  }
  if (f.has_residual()) {
    s += cfg.lambda_u_residual * f.u_residual->squared_norm();
    s += cfg.lambda_v_residual * f.v_residual->squared_norm();
  }
  return s;
}

// Alternating block minimization; each inductive block is one warm-started
// ADMM solve, each residual block one ridge Newton-CG solve.  The V block is
// the U block of the transposed problem: one code path, called twice.
inline std::pair<FactorPair, FitReport> fit(const Problem& prob, const SolveConfig& cfg,
                                            const FactorPair* init = nullptr) {
  cfg.validate();
  const index_t d1 = prob.x.cols();
  const index_t d2 = prob.y.cols();
  const index_t n1 = prob.m.rows();
  const index_t n2 = prob.m.cols();
  const index_t k = cfg.k;
  const index_t k1 = cfg.residual_rank_or_k();

  FactorPair f;
  if (init != nullptr) {
    if (init->u.rows() != d1 || init->u.cols() != k || init->v.rows() != d2 ||
        init->v.cols() != k) {
      throw ConformanceError("fit: init factors " + init->u.shape_string() + ", " +
                             init->v.shape_string() + " vs expected " + std::to_string(d1) +
                             "x" + std::to_string(k) + ", " + std::to_string(d2) + "x" +
                             std::to_string(k));
    }
    f = *init;
  } else {
    const double sd = 1.0 / std::sqrt(static_cast<double>(k));
    f.u = DenseMatrix::gaussian(d1, k, sd, mix_seed(cfg.seed, static_cast<std::uint64_t>(d1),
                                                    static_cast<std::uint64_t>(k), 1));
    f.v = DenseMatrix::gaussian(d2, k, sd, mix_seed(cfg.seed, static_cast<std::uint64_t>(d2),
                                                    static_cast<std::uint64_t>(k), 1));
  }
  if (cfg.combined && !f.has_residual()) {
    const double sd1 = 1.0 / std::sqrt(static_cast<double>(k1));
    f.u_residual = DenseMatrix::gaussian(
        n1, k1, sd1, mix_seed(cfg.seed, static_cast<std::uint64_t>(n1),
                              static_cast<std::uint64_t>(k1), 2));
    f.v_residual = DenseMatrix::gaussian(
        n2, k1, sd1, mix_seed(cfg.seed, static_cast<std::uint64_t>(n2),
                              static_cast<std::uint64_t>(k1), 2));
  }

  FitReport report;
  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [](auto since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
  };

  if (cfg.outer_max_iter == 0) {
    report.active_rows_u = active_rows(f.u);
    report.active_rows_v = active_rows(f.v);
    report.seconds = elapsed(t_start);
    return {std::move(f), std::move(report)};
  }

  const OmegaSparseMatrix m_t = prob.m.transposed();
  const PenaltyKind pen_u(cfg.penalty_u, cfg.lambda_u);
  const PenaltyKind pen_v(cfg.penalty_v, cfg.lambda_v);
  const bool row_first = detail::row_side_first(d1, d2, n1, n2);
  const double inf = std::numeric_limits<double>::infinity();
  const double sub_tol =
      cfg.admm.newton_tol > 0.0 ? cfg.admm.newton_tol : default_subproblem_tol(prob.loss);

  std::optional<FeatureMatrix> ident_1, ident_2;
  if (cfg.combined) {
    ident_1 = FeatureMatrix::identity(n1);
    ident_2 = FeatureMatrix::identity(n2);
  }

  AdmmState warm_u, warm_v;
  std::vector<double> offset_fwd, offset_bwd;
  std::vector<double> p_prev = omega_predictions(prob, f);

  SweepStats stats;
  const auto update_u = [&]() {
    const DenseMatrix q = prob.y.multiply(f.v);
    std::span<const double> off;
    if (f.has_residual()) {
      detail::residual_offsets(prob.m, *f.u_residual, *f.v_residual, offset_fwd);
      off = offset_fwd;
    }
    AdmmState st = admm_solve(prob.m, prob.x, q, prob.loss, cfg.lambda_ridge, pen_u, cfg.admm,
                              warm_u.u.size() > 0 ? &warm_u : nullptr, off);
    stats.primal_u = st.primal_residual;
    stats.dual_u = st.dual_residual;
    f.u = st.z;
    warm_u = std::move(st);
  };
  const auto update_v = [&]() {
    const DenseMatrix q = prob.x.multiply(f.u);
    std::span<const double> off;
    if (f.has_residual()) {
      detail::residual_offsets(m_t, *f.v_residual, *f.u_residual, offset_bwd);
      off = offset_bwd;
    }
    AdmmState st = admm_solve(m_t, prob.y, q, prob.loss, cfg.lambda_ridge, pen_v, cfg.admm,
                              warm_v.u.size() > 0 ? &warm_v : nullptr, off);
    stats.primal_v = st.primal_residual;
    stats.dual_v = st.dual_residual;
    f.v = st.z;
    warm_v = std::move(st);
  };
  const auto inductive_offsets = [&](const OmegaSparseMatrix& pattern, const FeatureMatrix& xs,
                                     const FeatureMatrix& ys, const DenseMatrix& us,
                                     const DenseMatrix& vs, std::vector<double>& out) {
    OmegaSparseMatrix preds = sandwich_expand(xs, us, ys.multiply(vs), pattern);
    auto pv = preds.values();
    out.assign(pv.begin(), pv.end());
  };
  const auto update_u_residual = [&]() {
    inductive_offsets(prob.m, prob.x, prob.y, f.u, f.v, offset_fwd);
    PartialProblem pp(prob.m, *ident_1, *f.v_residual, prob.loss, 2.0 * cfg.lambda_u_residual,
                      inf, DenseMatrix(), offset_fwd);
    SolveResult r = solve(pp, std::move(*f.u_residual), sub_tol, cfg.admm.max_newton,
                          cfg.admm.max_cg);
    if (!r.u.all_finite()) throw NumericalError("fit: non-finite residual factor");
    f.u_residual = std::move(r.u);
  };
  const auto update_v_residual = [&]() {
    inductive_offsets(m_t, prob.y, prob.x, f.v, f.u, offset_bwd);
    PartialProblem pp(m_t, *ident_2, *f.u_residual, prob.loss, 2.0 * cfg.lambda_v_residual,
                      inf, DenseMatrix(), offset_bwd);
    SolveResult r = solve(pp, std::move(*f.v_residual), sub_tol, cfg.admm.max_newton,
                          cfg.admm.max_cg);
    if (!r.u.all_finite()) throw NumericalError("fit: non-finite residual factor");
    f.v_residual = std::move(r.u);
  };

  for (int sweep = 1; sweep <= cfg.outer_max_iter; ++sweep) {
    const auto t_sweep = std::chrono::steady_clock::now();
    stats = SweepStats{};
    stats.sweep = sweep;
    try {
      if (row_first) {
        update_u();
        update_v();
      } else {
        update_v();
        update_u();
      }
      if (cfg.combined) {
        if (row_first) {
          update_u_residual();
          update_v_residual();
        } else {
          update_v_residual();
          update_u_residual();
        }
      }
    } catch (const NumericalError& err) {
      report.aborted = true;
      report.abort_reason = err.what();
      break;
    }

    const std::vector<double> p_cur = omega_predictions(prob, f);
    double diff_sq = 0.0, prev_sq = 0.0;
    for (std::size_t e = 0; e < p_cur.size(); ++e) {
      const double d = p_cur[e] - p_prev[e];
      diff_sq += d * d;
      prev_sq += p_prev[e] * p_prev[e];
    }
    stats.prediction_delta = std::sqrt(diff_sq) / std::max(1.0, std::sqrt(prev_sq));
    p_prev = p_cur;

    stats.objective = objective_full(prob, f, cfg);
    stats.active_u = static_cast<index_t>(active_rows(f.u).size());
    stats.active_v = static_cast<index_t>(active_rows(f.v).size());
    stats.seconds = elapsed(t_sweep);
    report.sweeps.push_back(stats);
    report.sweeps_run = sweep;

    if (stats.prediction_delta < cfg.outer_tol) {
      report.converged = true;
      break;
    }
  }

  report.active_rows_u = active_rows(f.u);
  report.active_rows_v = active_rows(f.v);
  report.seconds = elapsed(t_start);
  return {std::move(f), std::move(report)};
}

enum class PredictTransform { linear, probability, sign };

struct PredictOptions {
  bool include_residual = true;
  PredictTransform transform = PredictTransform::linear;
};

// Scores for explicit (i, j) pairs; residual factors only cover training
// entities, so out-of-range there is a cold-start error.
inline std::vector<double> predict(const FactorPair& f, const FeatureMatrix& x,
                                   const FeatureMatrix& y,
                                   std::span<const std::pair<index_t, index_t>> pairs,
                                   const PredictOptions& opts = {}) {
  std::vector<double> out;
  out.reserve(pairs.size());
  std::vector<double> xu(static_cast<std::size_t>(f.u.cols()));
  std::vector<double> yv(static_cast<std::size_t>(f.v.cols()));
  const bool use_residual = opts.include_residual && f.has_residual();
  for (auto [i, j] : pairs) {
    if (i < 0 || i >= x.rows() || j < 0 || j >= y.rows()) {
      throw ValueError("predict: pair (" + std::to_string(i) + ", " + std::to_string(j) +
                       ") outside " + std::to_string(x.rows()) + "x" + std::to_string(y.rows()));
    }
    x.row_times(i, f.u, xu);
    y.row_times(j, f.v, yv);
    double p = 0.0;
    for (std::size_t l = 0; l < xu.size(); ++l) p += xu[l] * yv[l];
    if (use_residual) {
      if (i >= f.u_residual->rows() || j >= f.v_residual->rows()) {
        throw ColdStartError("predict: residual factors cover training entities only; pair (" +
                             std::to_string(i) + ", " + std::to_string(j) +
                             ") is unseen -- predict with include_residual=false to use the "
                             "inductive part alone");
      }
      const double* a = f.u_residual->row(i).data();
      const double* b = f.v_residual->row(j).data();
      for (index_t l = 0; l < f.u_residual->cols(); ++l) p += a[l] * b[l];
    }
    switch (opts.transform) {
      case PredictTransform::linear: out.push_back(p); break;
      case PredictTransform::probability: out.push_back(detail::sigmoid_neg(-p)); break;
      case PredictTransform::sign: out.push_back(p >= 0.0 ? 1.0 : -1.0); break;
    }
  }
  return out;
}

// Dense n1 x n2 score matrix; desk-scale sizes only.
inline DenseMatrix predict_full(const FactorPair& f, const FeatureMatrix& x,
                                const FeatureMatrix& y, bool include_residual = true) {
  const DenseMatrix a = x.multiply(f.u);
  const DenseMatrix b = y.multiply(f.v);
  DenseMatrix p = a.matmul(b.transposed());
  if (include_residual && f.has_residual()) {
    p.add_scaled(f.u_residual->matmul(f.v_residual->transposed()), 1.0);
  }
  return p;
}

// [X | I], [Y | I]: per-entity bias columns for the inductive model.
inline Problem augment_identity(const Problem& prob) {
  return Problem(prob.m, prob.x.with_identity_tail(), prob.y.with_identity_tail(), prob.loss);
}

}  // namespace sgimc
