#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/kernels.hpp"
#include "sgimc/loss.hpp"
#include "sgimc/sparse_matrix.hpp"

namespace sgimc {

// One block subproblem of the alternating scheme: with Q frozen,
//
//   min_U  sum_Omega L(M_w, p_w) + lambda_ridge/2 ||U||_F^2
//          + 1/(2 eta) ||U - target||_F^2,
//   p_w = offset_w + e_i^T (X U Q^T) e_j.
//
// eta = +inf turns the proximal term off (1/eta == 0), which is how plain
// ridge-regularized blocks (the transductive residual factors) are solved.
struct PartialProblem {
  const OmegaSparseMatrix& m;
  const FeatureMatrix& x;
  const DenseMatrix& q;
  LossKind loss = LossKind::squared_l2;
  double lambda_ridge = 0.0;
  double eta = 1.0;
  DenseMatrix target;                    // d x k; may be empty when eta == +inf
  std::span<const double> offset = {};   // per-entry, canonical Omega order

  PartialProblem(const OmegaSparseMatrix& m_, const FeatureMatrix& x_, const DenseMatrix& q_,
                 LossKind loss_, double lambda_ridge_, double eta_, DenseMatrix target_,
                 std::span<const double> offset_ = {})
      : m(m_), x(x_), q(q_), loss(loss_), lambda_ridge(lambda_ridge_), eta(eta_),
        target(std::move(target_)), offset(offset_) {
    if (m.rows() != x.rows()) {
      throw ConformanceError("partial problem: M has " + std::to_string(m.rows()) +
                             " rows, X has " + std::to_string(x.rows()));
    }
    if (m.cols() != q.rows()) {
      throw ConformanceError("partial problem: M has " + std::to_string(m.cols()) +
                             " cols, Q has " + std::to_string(q.rows()) + " rows");
    }
    if (!(eta > 0.0)) throw ValueError("partial problem: eta must be > 0");
    if (!(lambda_ridge >= 0.0)) throw ValueError("partial problem: lambda_ridge must be >= 0");
    if (inv_eta() != 0.0 && (target.rows() != x.cols() || target.cols() != q.cols())) {
      throw ConformanceError("partial problem: target shape " + target.shape_string() +
                             " vs " + std::to_string(x.cols()) + "x" + std::to_string(q.cols()));
    }
    if (!offset.empty() && static_cast<index_t>(offset.size()) != m.nnz()) {
      throw ConformanceError("partial problem: offset length " + std::to_string(offset.size()) +
                             " vs nnz " + std::to_string(m.nnz()));
    }
  }

  double inv_eta() const { return std::isinf(eta) ? 0.0 : 1.0 / eta; }
  index_t d() const { return x.cols(); }
  index_t k() const { return q.cols(); }
};

struct SolveResult {
  DenseMatrix u;
  bool converged = false;
  bool stagnated = false;   // line search failed to make progress
  int newton_iterations = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
};

inline double default_subproblem_tol(LossKind loss) {
  return loss == LossKind::squared_l2 ? 1e-8 : 1e-6;
}

namespace detail {

// Holds per-problem buffers so repeated solves (inside ADMM) do not
// reallocate.  Predictions are kept in the canonical Omega layout.
class PartialSolver {
 public:
  explicit PartialSolver(const PartialProblem& pp)
      : pp_(pp),
        preds_(pp.m.with_same_pattern()),
        lin_(pp.m.with_same_pattern()),
        hess_vals_(static_cast<std::size_t>(pp.m.nnz()), 0.0) {}

  const PartialProblem& problem() const { return pp_; }

  // p(U) on Omega, with the caller-supplied offset folded in.
  void predictions_at(const DenseMatrix& u) {
    if (pp_.m.nnz() == 0) return;
    sandwich_expand_into(pp_.x, u, pp_.q, preds_, scratch_);
    if (!pp_.offset.empty()) {
      auto pv = preds_.values();
      for (std::size_t e = 0; e < pv.size(); ++e) pv[e] += pp_.offset[e];
    }
  }

  double objective_from_preds(const DenseMatrix& u) const {
    return loss_sum(preds_.values()) + quad_terms(u);
  }

  double objective(const DenseMatrix& u) {
    predictions_at(u);
    return objective_from_preds(u);
  }

  // grad = X^T G Q + (lambda_ridge + 1/eta) U - (1/eta) target,
  // G_w = L'(M_w, p_w) on Omega.
  void gradient_from_preds_into(const DenseMatrix& u, DenseMatrix& g) {
    const double ridge = pp_.lambda_ridge + pp_.inv_eta();
    if (pp_.m.nnz() > 0) {
      auto mv = pp_.m.values();
      auto pv = preds_.values();
      auto dv = lin_.values();
      for (std::size_t e = 0; e < mv.size(); ++e) dv[e] = loss_grad(pp_.loss, mv[e], pv[e]);
      sandwich_contract_into(pp_.x, lin_, pp_.q, g, scratch_);
    } else {
      if (!g.same_shape(u)) g = DenseMatrix(u.rows(), u.cols());
      g.set_zero();
    }
    if (ridge != 0.0) g.add_scaled(u, ridge);
    if (pp_.inv_eta() != 0.0) g.add_scaled(pp_.target, -pp_.inv_eta());
  }

  DenseMatrix gradient(const DenseMatrix& u) {
    predictions_at(u);
    DenseMatrix g;
    gradient_from_preds_into(u, g);
    return g;
  }

  // Curvature weights L''(M_w, p_w) at the current predictions.
  void refresh_hessian_weights() {
    auto mv = pp_.m.values();
    auto pv = preds_.values();
    for (std::size_t e = 0; e < mv.size(); ++e) hess_vals_[e] = loss_hess(pp_.loss, mv[e], pv[e]);
  }

  // out = X^T (H .* (X D Q^T))_Omega Q + (lambda_ridge + 1/eta) D, with H
  // the weights captured by refresh_hessian_weights().
  void hess_vec_into(const DenseMatrix& d, DenseMatrix& out) {
    const double ridge = pp_.lambda_ridge + pp_.inv_eta();
    if (pp_.m.nnz() > 0) {
      sandwich_expand_into(pp_.x, d, pp_.q, lin_, scratch_);
      auto lv = lin_.values();
      for (std::size_t e = 0; e < lv.size(); ++e) lv[e] *= hess_vals_[e];
      sandwich_contract_into(pp_.x, lin_, pp_.q, out, scratch_);
    } else {
      if (!out.same_shape(d)) out = DenseMatrix(d.rows(), d.cols());
      out.set_zero();
    }
    if (ridge != 0.0) out.add_scaled(d, ridge);
  }

  SolveResult solve(DenseMatrix u0, double tol, int max_newton, int max_cg) {
    if (u0.rows() != pp_.d() || u0.cols() != pp_.k()) {
      throw ConformanceError("subproblem solve: start " + u0.shape_string() + " vs " +
                             std::to_string(pp_.d()) + "x" + std::to_string(pp_.k()));
    }
    if (!(tol > 0.0)) throw ValueError("subproblem solve: tol must be > 0");

    SolveResult res;
    res.u = std::move(u0);
    predictions_at(res.u);
    double f = objective_from_preds(res.u);
    DenseMatrix g;
    gradient_from_preds_into(res.u, g);
    double gnorm = g.frobenius_norm();
    const double thresh = tol * std::max(1.0, gnorm);

    DenseMatrix dir;
    while (gnorm > thresh && res.newton_iterations < max_newton) {
      refresh_hessian_weights();
      cg_solve(g, gnorm, max_cg, dir);
      double gtd = DenseMatrix::dot(g, dir);
      if (!(gtd < 0.0)) {
        dir = -1.0 * g;
        gtd = -gnorm * gnorm;
      }

      // Predictions are affine in U, so trial objectives only need the
      // linear prediction change of the direction, computed once.
      const bool has_loss = pp_.m.nnz() > 0;
      if (has_loss) {
        sandwich_expand_into(pp_.x, dir, pp_.q, lin_, scratch_);
      }
      double alpha = 1.0;
      bool accepted = false;
      double f_trial = f;
      for (int bt = 0; bt < 60; ++bt) {
        f_trial = trial_objective(res.u, dir, alpha, has_loss);
        if (f_trial <= f + 1e-4 * alpha * gtd) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        res.stagnated = true;
        break;
      }
      res.u.add_scaled(dir, alpha);
      if (has_loss) {
        auto pv = preds_.values();
        auto lv = lin_.values();
        for (std::size_t e = 0; e < pv.size(); ++e) pv[e] += alpha * lv[e];
      }
      f = f_trial;
      gradient_from_preds_into(res.u, g);
      gnorm = g.frobenius_norm();
      ++res.newton_iterations;
    }

    res.converged = gnorm <= thresh;
    res.grad_norm = gnorm;
    res.objective = f;
    return res;
  }

 private:
  double loss_sum(std::span<const double> preds) const {
    double s = 0.0;
    auto mv = pp_.m.values();
    for (std::size_t e = 0; e < mv.size(); ++e) s += loss_value(pp_.loss, mv[e], preds[e]);
    return s;
  }

  double quad_terms(const DenseMatrix& u) const {
    double s = 0.0;
    if (pp_.lambda_ridge != 0.0) s += 0.5 * pp_.lambda_ridge * u.squared_norm();
    const double ie = pp_.inv_eta();
    if (ie != 0.0) {
      double d2 = 0.0;
      auto uv = u.values();
      auto tv = pp_.target.values();
      for (std::size_t p = 0; p < uv.size(); ++p) {
        const double diff = uv[p] - tv[p];
        d2 += diff * diff;
      }
      s += 0.5 * ie * d2;
    }
    return s;
  }

  // Objective at u + alpha*dir given preds_ at u and lin_ = expand(dir).
  double trial_objective(const DenseMatrix& u, const DenseMatrix& dir, double alpha,
                         bool has_loss) {
    double s = 0.0;
    if (has_loss) {
      auto mv = pp_.m.values();
      auto pv = preds_.values();
      auto lv = lin_.values();
      for (std::size_t e = 0; e < mv.size(); ++e) {
        s += loss_value(pp_.loss, mv[e], pv[e] + alpha * lv[e]);
      }
    }
    if (trial_u_.same_shape(u)) {
      auto tv = trial_u_.values();
      auto uv = u.values();
      auto dv = dir.values();
      for (std::size_t p = 0; p < uv.size(); ++p) tv[p] = uv[p] + alpha * dv[p];
    } else {
      trial_u_ = u;
      trial_u_.add_scaled(dir, alpha);
    }
    return s + quad_terms(trial_u_);
  }

  // CG on the Gauss-Newton system H d = -g with the inexact-Newton forcing
  // rule min(0.5, sqrt(||g||)) ||g||.
  void cg_solve(const DenseMatrix& g, double gnorm, int max_cg, DenseMatrix& d) {
    const double forcing = std::min(0.5, std::sqrt(gnorm)) * gnorm;
    if (!d.same_shape(g)) d = DenseMatrix(g.rows(), g.cols());
    d.set_zero();
    cg_r_ = -1.0 * g;
    cg_p_ = cg_r_;
    double rho = cg_r_.squared_norm();
    if (std::sqrt(rho) <= forcing) {
      d = cg_r_;  // gradient step if the residual target is already met
      return;
    }
    for (int it = 0; it < max_cg; ++it) {
      hess_vec_into(cg_p_, cg_ap_);
      const double p_ap = DenseMatrix::dot(cg_p_, cg_ap_);
      if (!(p_ap > 0.0)) {
        if (it == 0) d = cg_r_;  // negative/zero curvature right away
        return;
      }
      const double alpha = rho / p_ap;
      d.add_scaled(cg_p_, alpha);
      cg_r_.add_scaled(cg_ap_, -alpha);
      const double rho_next = cg_r_.squared_norm();
      if (std::sqrt(rho_next) <= forcing) return;
      const double beta = rho_next / rho;
      rho = rho_next;
      auto pv = cg_p_.values();
      auto rv = cg_r_.values();
      for (std::size_t p = 0; p < pv.size(); ++p) pv[p] = rv[p] + beta * pv[p];
    }
  }

  const PartialProblem& pp_;
  OmegaSparseMatrix preds_;
  OmegaSparseMatrix lin_;
  std::vector<double> hess_vals_;
  detail::KernelScratch scratch_;
  DenseMatrix trial_u_, cg_r_, cg_p_, cg_ap_;
};

}  // namespace detail

inline double objective(const PartialProblem& pp, const DenseMatrix& u) {
  detail::PartialSolver s(pp);
  return s.objective(u);
}

inline DenseMatrix gradient(const PartialProblem& pp, const DenseMatrix& u) {
  detail::PartialSolver s(pp);
  return s.gradient(u);
}

inline DenseMatrix hess_vec(const PartialProblem& pp, const DenseMatrix& u,
                            const DenseMatrix& d) {
  detail::PartialSolver s(pp);
  s.predictions_at(u);
  s.refresh_hessian_weights();
  DenseMatrix out;
  s.hess_vec_into(d, out);
  return out;
}

inline SolveResult solve(const PartialProblem& pp, DenseMatrix u0, double tol,
                         int max_newton = 50, int max_cg = 100) {
  detail::PartialSolver s(pp);
  return s.solve(std::move(u0), tol, max_newton, max_cg);
}

}  // namespace sgimc
