#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/loss.hpp"
#include "sgimc/penalty.hpp"
#include "sgimc/subproblem.hpp"

namespace sgimc {

struct AdmmConfig {
  double eta = 1.0;
  double eps_abs = 1e-5;
  double eps_rel = 1e-4;
  int max_iter = 200;
  // Inner Newton-CG budget; newton_tol <= 0 selects the per-loss default.
  double newton_tol = 0.0;
  int max_newton = 50;
  int max_cg = 100;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ValueError("admm: eta must be finite > 0");
    if (!(eps_abs > 0.0) || !(eps_rel > 0.0)) throw ValueError("admm: eps must be > 0");
    if (max_iter < 0) throw ValueError("admm: max_iter must be >= 0");
  }
};

struct AdmmState {
  DenseMatrix u, z, phi;
  int iteration = 0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool subproblem_stagnated = false;  // warning, not an error
};

// Scaled-form splitting of min_U sum_Omega L + lambda_ridge/2 ||U||^2 + R(Z),
// U = Z.  The returned state's Z is the solution: the prox step leaves it
// exactly row-sparse under the group penalty, unlike the smooth iterate U.
inline AdmmState admm_solve(const OmegaSparseMatrix& m, const FeatureMatrix& x,
                            const DenseMatrix& q, LossKind loss, double lambda_ridge,
                            const PenaltyKind& penalty, const AdmmConfig& cfg,
                            const AdmmState* warm = nullptr,
                            std::span<const double> offset = {}) {
  cfg.validate();
  const index_t d = x.cols();
  const index_t k = q.cols();

  AdmmState st;
  if (warm != nullptr && warm->u.rows() == d && warm->u.cols() == k) {
    st = *warm;
    st.iteration = 0;
    st.converged = false;
    st.subproblem_stagnated = false;
  } else {
    st.u = DenseMatrix(d, k);
    st.z = DenseMatrix(d, k);
    st.phi = DenseMatrix(d, k);
  }

  PartialProblem pp(m, x, q, loss, lambda_ridge, cfg.eta, DenseMatrix(d, k), offset);
  detail::PartialSolver solver(pp);
  const double tol = cfg.newton_tol > 0.0 ? cfg.newton_tol : default_subproblem_tol(loss);
  const double scale_eps = cfg.eps_abs * std::sqrt(static_cast<double>(d * k));

  DenseMatrix z_prev;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    // u-step: target Z_t - Phi_t, warm-started Newton from the last U.
    {
      auto tv = pp.target.values();
      auto zv = st.z.values();
      auto fv = st.phi.values();
      for (std::size_t p = 0; p < tv.size(); ++p) tv[p] = zv[p] - fv[p];
    }
    SolveResult sub = solver.solve(std::move(st.u), tol, cfg.max_newton, cfg.max_cg);
    st.u = std::move(sub.u);
    if (sub.stagnated) st.subproblem_stagnated = true;

    // z-step: prox of the penalty at U + Phi with step eta.
    z_prev = st.z;
    {
      auto tv = pp.target.values();  // reuse as A = U + Phi
      auto uv = st.u.values();
      auto fv = st.phi.values();
      for (std::size_t p = 0; p < tv.size(); ++p) tv[p] = uv[p] + fv[p];
    }
    prox_into(penalty, pp.target, cfg.eta, st.z);

    // scaled dual ascent
    {
      auto fv = st.phi.values();
      auto uv = st.u.values();
      auto zv = st.z.values();
      for (std::size_t p = 0; p < fv.size(); ++p) fv[p] += uv[p] - zv[p];
    }

    double primal_sq = 0.0, dual_sq = 0.0;
    {
      auto uv = st.u.values();
      auto zv = st.z.values();
      auto zp = z_prev.values();
      for (std::size_t p = 0; p < uv.size(); ++p) {
        const double pr = uv[p] - zv[p];
        const double du = zv[p] - zp[p];
        primal_sq += pr * pr;
        dual_sq += du * du;
      }
    }
    st.primal_residual = std::sqrt(primal_sq);
    st.dual_residual = std::sqrt(dual_sq) / cfg.eta;
    st.iteration = it;

    if (!st.u.all_finite() || !st.z.all_finite() || !st.phi.all_finite()) {
      throw NumericalError("admm: non-finite iterate at iteration " + std::to_string(it));
    }

    const double eps_primal =
        scale_eps + cfg.eps_rel * std::max(st.u.frobenius_norm(), st.z.frobenius_norm());
    const double eps_dual = scale_eps + cfg.eps_rel * st.phi.frobenius_norm() / cfg.eta;
    if (st.primal_residual <= eps_primal && st.dual_residual <= eps_dual) {
      st.converged = true;
      break;
    }
  }
  return st;
}

// Value of the block objective the splitting solves, at the given iterate.
inline double admm_objective(const OmegaSparseMatrix& m, const FeatureMatrix& x,
                             const DenseMatrix& q, LossKind loss, double lambda_ridge,
                             const PenaltyKind& penalty, const DenseMatrix& z,
                             std::span<const double> offset = {}) {
  PartialProblem pp(m, x, q, loss, lambda_ridge,
                    std::numeric_limits<double>::infinity(), DenseMatrix(), offset);
  return objective(pp, z) + penalty_value(penalty, z);
}

}  // namespace sgimc
