#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "sgimc/datagen.hpp"
#include "sgimc/solver.hpp"
#include "test_support.hpp"

using namespace sgimc;
using namespace test_support;

namespace {

// Dense reimplementation of the full objective, residual term included.
double naive_full_objective(const Problem& prob, const FactorPair& f, const SolveConfig& cfg) {
  const Grid xu = grid_matmul(to_grid(prob.x.to_dense()), to_grid(f.u));
  const Grid yv = grid_matmul(to_grid(prob.y.to_dense()), to_grid(f.v));
  double total = 0.0;
  prob.m.for_each([&](index_t i, index_t j, double y) {
    double p = 0.0;
    for (index_t l = 0; l < xu.cols; ++l) p += xu.at(i, l) * yv.at(j, l);
    if (f.has_residual()) {
      for (index_t l = 0; l < f.u_residual->cols(); ++l) {
        p += (*f.u_residual)(i, l) * (*f.v_residual)(j, l);
      }
    }
    total += prob.loss == LossKind::squared_l2 ? 0.5 * (y - p) * (y - p)
                                               : std::log1p(std::exp(-y * p));
  });
  const auto penalty_term = [](PenaltyTag tag, double lambda, const DenseMatrix& z) {
    double value = 0.0;
    for (index_t i = 0; i < z.rows(); ++i) {
      if (tag == PenaltyTag::group_l21) {
        double norm = 0.0;
        for (index_t j = 0; j < z.cols(); ++j) norm += z(i, j) * z(i, j);
        value += std::sqrt(norm);
      } else {
        for (index_t j = 0; j < z.cols(); ++j) {
          value += tag == PenaltyTag::frobenius_sq ? z(i, j) * z(i, j) : std::abs(z(i, j));
        }
      }
    }
    return lambda * value;
  };
  total += penalty_term(cfg.penalty_u, cfg.lambda_u, f.u);
  total += penalty_term(cfg.penalty_v, cfg.lambda_v, f.v);
  if (f.has_residual()) {
    total += cfg.lambda_u_residual * f.u_residual->squared_norm();
    total += cfg.lambda_v_residual * f.v_residual->squared_norm();
  }
  return total;
}

SynthSpec small_spec(index_t n1, index_t n2, index_t d, index_t k, double rho, double noise_sd,
                     std::uint64_t seed) {
  SynthSpec s;
  s.n1 = n1;
  s.n2 = n2;
  s.d = d;
  s.k = k;
  s.rho = rho;
  s.noise_sd = noise_sd;
  s.seed = seed;
  return s;
}

SolveConfig tight_outer(index_t k, double lambda, std::uint64_t seed) {
  SolveConfig cfg;
  cfg.k = k;
  cfg.lambda_u = cfg.lambda_v = lambda;
  cfg.admm.eps_abs = 1e-8;
  cfg.admm.eps_rel = 1e-8;
  cfg.admm.max_iter = 500;
  cfg.outer_max_iter = 60;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("full objective worked values", "[solver]") {
  SynthInstance inst = generate(small_spec(12, 15, 5, 2, 0.4, 0.0, 3));
  SolveConfig cfg;
  cfg.k = 2;

  SECTION("zero factors leave half the squared observations") {
    FactorPair f{DenseMatrix(5, 2), DenseMatrix(5, 2), {}, {}};
    double expected = 0.0;
    for (double v : inst.problem.m.values()) expected += 0.5 * v * v;
    CHECK(objective_full(inst.problem, f, cfg) == Catch::Approx(expected).epsilon(1e-14));
  }
  SECTION("generator factors on a noiseless instance give zero") {
    FactorPair f{inst.u_true, inst.v_true, {}, {}};
    CHECK(objective_full(inst.problem, f, cfg) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("random factors match the dense reimplementation") {
    std::mt19937_64 rng(9);
    for (LossKind loss : {LossKind::squared_l2, LossKind::logistic}) {
      SynthInstance local = generate(small_spec(10, 12, 4, 2, 0.4, 0.0, 4));
      if (loss == LossKind::logistic) {
        for (double& v : local.problem.m.values()) v = v >= 0 ? 1.0 : -1.0;
        local.problem = Problem(local.problem.m, local.problem.x, local.problem.y, loss);
      }
      for (PenaltyTag tag : {PenaltyTag::group_l21, PenaltyTag::frobenius_sq, PenaltyTag::l1}) {
        SolveConfig c;
        c.k = 2;
        c.lambda_u = 0.3;
        c.lambda_v = 0.7;
        c.penalty_u = c.penalty_v = tag;
        FactorPair f{random_dense(4, 2, rng), random_dense(4, 2, rng), {}, {}};
        REQUIRE(objective_full(local.problem, f, c) ==
                Catch::Approx(naive_full_objective(local.problem, f, c)).epsilon(1e-10));
      }
    }
  }
  SECTION("residual factors enter predictions and penalties") {
    std::mt19937_64 rng(10);
    SolveConfig c;
    c.k = 2;
    c.combined = true;
    c.lambda_u_residual = 0.4;
    c.lambda_v_residual = 0.6;
    FactorPair f{random_dense(5, 2, rng), random_dense(5, 2, rng), random_dense(12, 2, rng),
                 random_dense(15, 2, rng)};
    REQUIRE(objective_full(inst.problem, f, c) ==
            Catch::Approx(naive_full_objective(inst.problem, f, c)).epsilon(1e-10));
  }
}

TEST_CASE("noiseless realizable instance is recovered", "[solver]") {
  SynthInstance inst = generate(small_spec(60, 80, 8, 3, 0.35, 0.0, 21));
  const auto [f, report] = fit(inst.problem, tight_outer(3, 0.0, 21));
  REQUIRE(!report.aborted);
  const DenseMatrix pred = predict_full(f, inst.problem.x, inst.problem.y);
  REQUIRE(relative_frobenius_distance(pred, inst.m_full) < 1e-3);
}

TEST_CASE("zero sweep budget returns the init unchanged", "[solver]") {
  std::mt19937_64 rng(22);
  SynthInstance inst = generate(small_spec(10, 12, 4, 2, 0.4, 0.0, 5));
  SolveConfig cfg;
  cfg.k = 2;
  cfg.outer_max_iter = 0;
  FactorPair init{random_dense(4, 2, rng), random_dense(4, 2, rng), {}, {}};
  const auto [f, report] = fit(inst.problem, cfg, &init);
  CHECK(report.sweeps_run == 0);
  for (std::size_t p = 0; p < init.u.values().size(); ++p) {
    REQUIRE(f.u.values()[p] == init.u.values()[p]);
    REQUIRE(f.v.values()[p] == init.v.values()[p]);
  }
}

TEST_CASE("objective sequence is non-increasing over sweeps", "[solver]") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull, 6ull, 7ull, 8ull, 9ull, 10ull}) {
    SynthInstance inst = generate(small_spec(25, 30, 6, 2, 0.3, 0.05, seed));
    const auto [f, report] = fit(inst.problem, tight_outer(2, 1e-3, seed));
    REQUIRE(!report.aborted);
    REQUIRE(report.sweeps.size() >= 1);
    for (std::size_t s = 1; s < report.sweeps.size(); ++s) {
      REQUIRE(report.sweeps[s].objective <= report.sweeps[s - 1].objective + 1e-8);
    }
  }
}

TEST_CASE("prediction worked examples", "[solver]") {
  SECTION("zero factors predict zero") {
    FactorPair f{DenseMatrix(3, 2), DenseMatrix(4, 2), {}, {}};
    std::mt19937_64 rng(2);
    const FeatureMatrix x = FeatureMatrix::dense(random_dense(5, 3, rng));
    const FeatureMatrix y = FeatureMatrix::dense(random_dense(6, 4, rng));
    const std::vector<std::pair<index_t, index_t>> pairs = {{0, 0}, {4, 5}, {2, 3}};
    for (double p : predict(f, x, y, pairs)) CHECK(p == 0.0);
  }
  SECTION("rank-1 hand instance") {
    const FeatureMatrix x = FeatureMatrix::dense(DenseMatrix(1, 2, {1.0, 0.0}));
    const FeatureMatrix y = FeatureMatrix::dense(DenseMatrix(1, 2, {0.0, 1.0}));
    const FactorPair f{DenseMatrix(2, 1, {1.0, 0.0}), DenseMatrix(2, 1, {0.0, 1.0}), {}, {}};
    const std::vector<std::pair<index_t, index_t>> pairs = {{0, 0}};
    CHECK(predict(f, x, y, pairs)[0] == 1.0);
  }
  SECTION("full prediction matrix equals the dense oracle") {
    std::mt19937_64 rng(14);
    const FeatureMatrix x = FeatureMatrix::dense(random_dense(7, 3, rng));
    const FeatureMatrix y = FeatureMatrix::dense(random_dense(9, 4, rng));
    const FactorPair f{random_dense(3, 2, rng), random_dense(4, 2, rng), {}, {}};
    const Grid oracle = grid_matmul(grid_matmul(to_grid(x.to_dense()), to_grid(f.u)),
                                    grid_transpose(grid_matmul(to_grid(y.to_dense()),
                                                               to_grid(f.v))));
    REQUIRE(grid_rel_frobenius(to_grid(predict_full(f, x, y)), oracle) < 1e-10);
  }
  SECTION("out-of-range pair") {
    FactorPair f{DenseMatrix(3, 2), DenseMatrix(4, 2), {}, {}};
    std::mt19937_64 rng(2);
    const FeatureMatrix x = FeatureMatrix::dense(random_dense(5, 3, rng));
    const FeatureMatrix y = FeatureMatrix::dense(random_dense(6, 4, rng));
    const std::vector<std::pair<index_t, index_t>> pairs = {{5, 0}};
    CHECK_THROWS_AS(predict(f, x, y, pairs), ValueError);
  }
  SECTION("residual factors for unseen entities are a cold start") {
    std::mt19937_64 rng(3);
    const FeatureMatrix x = FeatureMatrix::dense(random_dense(5, 3, rng));
    const FeatureMatrix y = FeatureMatrix::dense(random_dense(6, 4, rng));
    // Residual factors trained on 4 rows / 5 cols only.
    FactorPair f{random_dense(3, 2, rng), random_dense(4, 2, rng), random_dense(4, 2, rng),
                 random_dense(5, 2, rng)};
    const std::vector<std::pair<index_t, index_t>> unseen = {{4, 5}};
    CHECK_THROWS_AS(predict(f, x, y, unseen), ColdStartError);
    PredictOptions inductive_only;
    inductive_only.include_residual = false;
    CHECK_NOTHROW(predict(f, x, y, unseen, inductive_only));
  }
}

TEST_CASE("identity augmentation", "[solver]") {
  const OmegaSparseMatrix m(2, 3, {{0, 0, 1.0}, {1, 2, -1.0}});
  const FeatureMatrix x = FeatureMatrix::dense(DenseMatrix(2, 1, {5.0, 7.0}));
  std::mt19937_64 rng(4);
  const FeatureMatrix y = FeatureMatrix::dense(random_dense(3, 2, rng));
  const Problem prob(m, x, y, LossKind::squared_l2);

  SECTION("by-definition example") {
    const Problem aug = augment_identity(prob);
    REQUIRE(aug.x.cols() == 3);
    const DenseMatrix xd = aug.x.to_dense();
    CHECK(xd(0, 0) == 5.0);
    CHECK(xd(0, 1) == 1.0);
    CHECK(xd(0, 2) == 0.0);
    CHECK(xd(1, 0) == 7.0);
    CHECK(xd(1, 1) == 0.0);
    CHECK(xd(1, 2) == 1.0);
    CHECK(aug.y.cols() == 2 + 3);
  }
  SECTION("applying twice keeps growing") {
    const Problem twice = augment_identity(augment_identity(prob));
    CHECK(twice.x.cols() == 1 + 2 + 2);
    CHECK(twice.y.cols() == 2 + 3 + 3);
  }
  SECTION("identity-block coefficients reproduce any train block") {
    std::mt19937_64 rng2(8);
    const index_t n1 = 4, n2 = 3, d1 = 2, d2 = 2;
    const FeatureMatrix fx = FeatureMatrix::dense(random_dense(n1, d1, rng2));
    const FeatureMatrix fy = FeatureMatrix::dense(random_dense(n2, d2, rng2));
    const DenseMatrix target = random_dense(n1, n2, rng2);
    const OmegaSparseMatrix full_pattern(
        n1, n2, [&] {
          std::vector<Triplet> e;
          for (index_t i = 0; i < n1; ++i)
            for (index_t j = 0; j < n2; ++j) e.push_back({i, j, target(i, j)});
          return e;
        }());
    const Problem aug = augment_identity(Problem(full_pattern, fx, fy, LossKind::squared_l2));
    // U supported on the identity block with e_i rows, V with target columns.
    DenseMatrix u(d1 + n1, n1), v(d2 + n2, n1);
    for (index_t i = 0; i < n1; ++i) u(d1 + i, i) = 1.0;
    for (index_t j = 0; j < n2; ++j) {
      for (index_t i = 0; i < n1; ++i) v(d2 + j, i) = target(i, j);
    }
    FactorPair f{std::move(u), std::move(v), {}, {}};
    std::vector<std::pair<index_t, index_t>> pairs;
    for (index_t i = 0; i < n1; ++i)
      for (index_t j = 0; j < n2; ++j) pairs.emplace_back(i, j);
    const std::vector<double> preds = predict(f, aug.x, aug.y, pairs);
    std::size_t at = 0;
    for (index_t i = 0; i < n1; ++i) {
      for (index_t j = 0; j < n2; ++j) REQUIRE(preds[at++] == Catch::Approx(target(i, j)));
    }
  }
}

TEST_CASE("transposition symmetry", "[solver]") {
  for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
    SynthInstance inst = generate(small_spec(18, 24, 6, 2, 0.35, 0.02, seed));
    SolveConfig cfg = tight_outer(2, 1e-3, seed);
    cfg.lambda_u = 2e-3;  // asymmetric on purpose
    cfg.lambda_v = 5e-4;
    const auto [f, report] = fit(inst.problem, cfg);

    const Problem transposed(inst.problem.m.transposed(), inst.problem.y, inst.problem.x,
                             inst.problem.loss);
    SolveConfig swapped = cfg;
    std::swap(swapped.lambda_u, swapped.lambda_v);
    const auto [ft, report_t] = fit(transposed, swapped);

    REQUIRE(report.sweeps.size() == report_t.sweeps.size());
    for (std::size_t s = 0; s < report.sweeps.size(); ++s) {
      REQUIRE(std::abs(report.sweeps[s].objective - report_t.sweeps[s].objective) <= 1e-8);
    }
    // The factor pair swaps roles; this implementation makes it bitwise.
    REQUIRE(f.u.values().size() == ft.v.values().size());
    for (std::size_t p = 0; p < f.u.values().size(); ++p) {
      REQUIRE(f.u.values()[p] == ft.v.values()[p]);
    }
    for (std::size_t p = 0; p < f.v.values().size(); ++p) {
      REQUIRE(f.v.values()[p] == ft.u.values()[p]);
    }
  }
}

TEST_CASE("fits are deterministic in the seed", "[solver]") {
  SynthInstance inst = generate(small_spec(20, 22, 5, 2, 0.3, 0.01, 41));
  const SolveConfig cfg = tight_outer(2, 1e-3, 41);
  const auto [f1, r1] = fit(inst.problem, cfg);
  const auto [f2, r2] = fit(inst.problem, cfg);
  REQUIRE(r1.sweeps.size() == r2.sweeps.size());
  for (std::size_t s = 0; s < r1.sweeps.size(); ++s) {
    REQUIRE(r1.sweeps[s].objective == r2.sweeps[s].objective);  // bitwise
  }
  for (std::size_t p = 0; p < f1.u.values().size(); ++p) {
    REQUIRE(f1.u.values()[p] == f2.u.values()[p]);
  }

  SolveConfig other = cfg;
  other.seed = 42;
  const auto [f3, r3] = fit(inst.problem, other);
  bool any_diff = false;
  for (std::size_t p = 0; p < f1.u.values().size(); ++p) {
    any_diff = any_diff || f1.u.values()[p] != f3.u.values()[p];
  }
  CHECK(any_diff);
}

TEST_CASE("combined model fits and lowers the non-realizable gap", "[solver]") {
  // A realizable instance plus an off-feature-span perturbation of the
  // observations: the residual factors can absorb what X U V^T Y^T cannot.
  SynthInstance inst = generate(small_spec(16, 18, 4, 2, 0.5, 0.0, 51));
  std::mt19937_64 rng(51);
  std::normal_distribution<double> bump(0.0, 0.3);
  {
    auto vals = inst.problem.m.values();
    for (double& v : vals) v += bump(rng);
  }
  SolveConfig plain = tight_outer(2, 1e-4, 51);
  plain.outer_max_iter = 40;
  const auto [f0, r0] = fit(inst.problem, plain);

  SolveConfig comb = plain;
  comb.combined = true;
  comb.lambda_u_residual = 1e-3;
  comb.lambda_v_residual = 1e-3;
  const auto [f1, r1] = fit(inst.problem, comb);
  REQUIRE(!r1.aborted);
  REQUIRE(f1.has_residual());

  const double gap0 = objective_full(inst.problem, f0, plain);
  double gap1 = objective_full(inst.problem, f1, comb);
  REQUIRE(gap1 < gap0);

  // Residual prediction only differs on train entities; predict() folds it.
  const std::vector<std::pair<index_t, index_t>> pairs = {{0, 0}, {3, 5}};
  const std::vector<double> with = predict(f1, inst.problem.x, inst.problem.y, pairs);
  PredictOptions opts;
  opts.include_residual = false;
  const std::vector<double> without = predict(f1, inst.problem.x, inst.problem.y, pairs, opts);
  bool differs = false;
  for (std::size_t p = 0; p < pairs.size(); ++p) differs = differs || with[p] != without[p];
  CHECK(differs);
}

TEST_CASE("abort on non-finite input is caught at ingestion", "[solver]") {
  std::mt19937_64 rng(61);
  const FeatureMatrix x = FeatureMatrix::dense(random_dense(4, 2, rng));
  const FeatureMatrix y = FeatureMatrix::dense(random_dense(5, 2, rng));
  CHECK_THROWS_AS(Problem(OmegaSparseMatrix(4, 5, {{0, 0, std::nan("")}}), x, y,
                          LossKind::squared_l2),
                  ValueError);
  CHECK_THROWS_AS(Problem(OmegaSparseMatrix(4, 5, {{0, 0, 0.5}}), x, y, LossKind::logistic),
                  ValueError);
}
