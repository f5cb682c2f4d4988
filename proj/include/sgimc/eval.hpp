#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgimc/datagen.hpp"
#include "sgimc/io.hpp"
#include "sgimc/solver.hpp"
#include "sgimc/thread_pool.hpp"

namespace sgimc {

// --- metrics ---

inline double metric_rel_error(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ConformanceError("rel_error: length mismatch");
  if (pred.empty()) throw ValueError("rel_error: empty input");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - truth[i];
    num += r * r;
    den += truth[i] * truth[i];
  }
  if (den == 0.0) throw NumericalError("rel_error: zero reference norm");
  return std::sqrt(num / den);
}

inline double metric_rel_error(const DenseMatrix& pred, const DenseMatrix& truth) {
  return relative_frobenius_distance(pred, truth);
}

namespace detail {
inline double decision_sign(double p) { return p >= 0.0 ? 1.0 : -1.0; }
}  // namespace detail

// Fraction of sign agreements; a zero score counts as +1.
inline double metric_accuracy(std::span<const double> pred, std::span<const double> labels) {
  if (pred.size() != labels.size()) throw ConformanceError("accuracy: length mismatch");
  if (pred.empty()) throw ValueError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::check_label(LossKind::logistic, labels[i]);
    if (detail::decision_sign(pred[i]) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// F1 on the +1 class; 0 when precision + recall = 0.
inline double metric_f1(std::span<const double> pred, std::span<const double> labels) {
  if (pred.size() != labels.size()) throw ConformanceError("f1: length mismatch");
  if (pred.empty()) throw ValueError("f1: empty input");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::check_label(LossKind::logistic, labels[i]);
    const bool predicted = detail::decision_sign(pred[i]) > 0.0;
    const bool actual = labels[i] > 0.0;
    if (predicted && actual) ++tp;
    else if (predicted && !actual) ++fp;
    else if (!predicted && actual) ++fn;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

// --- seeded holdout split of the observed entries ---

struct OmegaSplit {
  OmegaSparseMatrix kept;
  std::vector<std::pair<index_t, index_t>> held_pairs;
  std::vector<double> held_values;
};

inline OmegaSplit split_omega(const OmegaSparseMatrix& m, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || !(fraction < 1.0)) {
    throw ValueError("split_omega: fraction must be in (0, 1)");
  }
  const index_t nnz = m.nnz();
  if (nnz < 2) throw ValueError("split_omega: need at least 2 observed entries");
  index_t held = static_cast<index_t>(std::llround(fraction * static_cast<double>(nnz)));
  held = std::max<index_t>(1, std::min(held, nnz - 1));

  std::vector<index_t> order(static_cast<std::size_t>(nnz));
  std::iota(order.begin(), order.end(), index_t{0});
  auto rng = make_rng(seed);
  for (index_t t = 0; t < held; ++t) {
    std::uniform_int_distribution<index_t> pick(t, nnz - 1);
    std::swap(order[static_cast<std::size_t>(t)], order[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<bool> is_held(static_cast<std::size_t>(nnz), false);
  for (index_t t = 0; t < held; ++t) is_held[static_cast<std::size_t>(order[t])] = true;

  OmegaSplit out;
  std::vector<Triplet> kept_entries;
  kept_entries.reserve(static_cast<std::size_t>(nnz - held));
  out.held_pairs.reserve(static_cast<std::size_t>(held));
  out.held_values.reserve(static_cast<std::size_t>(held));
  index_t pos = 0;
  m.for_each([&](index_t i, index_t j, double v) {
    if (is_held[static_cast<std::size_t>(pos++)]) {
      out.held_pairs.emplace_back(i, j);
      out.held_values.push_back(v);
    } else {
      kept_entries.push_back({i, j, v});
    }
  });
  out.kept = OmegaSparseMatrix(m.rows(), m.cols(), std::move(kept_entries));
  return out;
}

// kept + held must be disjoint and together reproduce the original pattern.
inline void verify_split(const OmegaSparseMatrix& original, const OmegaSplit& split) {
  if (split.kept.nnz() + static_cast<index_t>(split.held_pairs.size()) != original.nnz()) {
    throw ValueError("split check: sizes do not add up");
  }
  std::vector<Triplet> all;
  all.reserve(static_cast<std::size_t>(original.nnz()));
  split.kept.for_each([&](index_t i, index_t j, double v) { all.push_back({i, j, v}); });
  for (std::size_t t = 0; t < split.held_pairs.size(); ++t) {
    all.push_back({split.held_pairs[t].first, split.held_pairs[t].second, split.held_values[t]});
  }
  // The constructor rejects duplicates, which is exactly the disjointness check.
  OmegaSparseMatrix merged(original.rows(), original.cols(), std::move(all));
  if (!merged.same_pattern(original)) throw ValueError("split check: pattern not covered");
}

// --- lambda selection on a validation holdout ---

struct GridSpec {
  std::vector<double> lambdas = {1e-5, 1e-4, 1e-3, 1e-2};
  bool tie_lambdas = true;  // false varies lambda_u only, keeping cfg.lambda_v
  std::vector<index_t> ranks = {0};  // 0 means "the instance's generating rank"
  double validation_fraction = 0.2;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  void validate() const {
    if (lambdas.empty()) throw ValueError("grid: empty lambda list");
    for (double l : lambdas) {
      if (!(l > 0.0)) throw ValueError("grid: lambdas must be > 0");
    }
    if (ranks.empty()) throw ValueError("grid: empty rank list");
    for (index_t r : ranks) {
      if (r < 0) throw ValueError("grid: ranks must be >= 0");
    }
    if (!(validation_fraction > 0.0) || validation_fraction > 0.5) {
      throw ValueError("grid: validation_fraction must be in (0, 0.5]");
    }
    if (seeds.empty()) throw ValueError("grid: empty seed list");
  }
};

struct LambdaRow {
  double lambda = 0.0;
  double metric = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  std::string status;
};

struct SelectionResult {
  double best_lambda = 0.0;
  std::vector<LambdaRow> table;
};

namespace detail {

inline std::vector<double> sorted_unique_lambdas(std::vector<double> lambdas) {
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());
  return lambdas;
}

inline double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// Fits once per distinct lambda on the training problem and scores each fit
// on the holdout: relative error for SquaredL2, 1 - accuracy for Logistic.
// Ties go to the larger lambda (the sparser model).
inline SelectionResult select_lambda_on_split(
    const Problem& train, std::span<const std::pair<index_t, index_t>> val_pairs,
    std::span<const double> val_values, const std::vector<double>& lambdas, bool tie_lambdas,
    const SolveConfig& base_cfg) {
  if (val_pairs.empty()) throw ValueError("select_lambda: empty validation set");
  const std::vector<double> grid = detail::sorted_unique_lambdas(lambdas);
  if (grid.empty()) throw ValueError("select_lambda: empty lambda grid");

  SelectionResult sel;
  sel.table.reserve(grid.size());
  double best = std::numeric_limits<double>::infinity();
  bool any_ok = false;
  std::string failures;
  for (double lambda : grid) {
    SolveConfig cfg = base_cfg;
    cfg.lambda_u = lambda;
    if (tie_lambdas) cfg.lambda_v = lambda;
    if (cfg.combined) {
      if (cfg.lambda_u_residual == 0.0) cfg.lambda_u_residual = lambda;
      if (cfg.lambda_v_residual == 0.0) cfg.lambda_v_residual = lambda;
    }
    LambdaRow row;
    row.lambda = lambda;
    try {
      auto [factors, report] = fit(train, cfg);
      if (report.aborted) throw NumericalError("fit aborted: " + report.abort_reason);
      const std::vector<double> preds = predict(factors, train.x, train.y, val_pairs);
      row.metric = train.loss == LossKind::logistic
                       ? 1.0 - metric_accuracy(preds, val_values)
                       : metric_rel_error(preds, val_values);
      row.ok = true;
      row.status = "ok";
      any_ok = true;
      if (row.metric <= best) {  // <= so later (larger) lambdas win ties
        best = row.metric;
        sel.best_lambda = lambda;
      }
    } catch (const std::exception& e) {
      row.status = e.what();
      failures += (failures.empty() ? "" : "; ") + std::string("lambda ") +
                  format_double(lambda) + ": " + e.what();
    }
    sel.table.push_back(std::move(row));
  }
  if (!any_ok) throw NumericalError("select_lambda: every fit failed: " + failures);
  return sel;
}

// Convenience form that carves the validation holdout out of prob itself.
inline SelectionResult select_lambda(const Problem& prob, const GridSpec& grid,
                                     const SolveConfig& cfg) {
  grid.validate();
  OmegaSplit split = split_omega(prob.m, grid.validation_fraction, mix_seed(cfg.seed, 11));
  verify_split(prob.m, split);
  Problem train(std::move(split.kept), prob.x, prob.y, prob.loss);
  return select_lambda_on_split(train, split.held_pairs, split.held_values, grid.lambdas,
                                grid.tie_lambdas, cfg);
}

// --- experiment harness ---

enum class ExperimentKind { rho_sweep, feature_sweep, semisynthetic_noise };

inline const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::rho_sweep: return "rho_sweep";
    case ExperimentKind::feature_sweep: return "feature_sweep";
    case ExperimentKind::semisynthetic_noise: return "semisynthetic_noise";
  }
  return "unknown";
}

inline ExperimentKind experiment_kind_from_name(const std::string& name) {
  if (name == "rho_sweep") return ExperimentKind::rho_sweep;
  if (name == "feature_sweep") return ExperimentKind::feature_sweep;
  if (name == "semisynthetic_noise") return ExperimentKind::semisynthetic_noise;
  throw ValueError("unknown experiment kind '" + name + "'");
}

// Method tags: "SGIMC" (group shrinkage), "IMC-Frobenius" (same pipeline with
// the Frobenius penalty on both factors), and "-comb" suffixed variants that
// add the transductive residual term.
struct MethodSpec {
  std::string tag;
  PenaltyTag penalty = PenaltyTag::group_l21;
  bool combined = false;
};

inline MethodSpec method_from_tag(const std::string& tag) {
  MethodSpec m;
  m.tag = tag;
  std::string base = tag;
  const std::string comb = "-comb";
  if (base.size() > comb.size() && base.compare(base.size() - comb.size(), comb.size(), comb) == 0) {
    m.combined = true;
    base.resize(base.size() - comb.size());
  }
  if (base == "SGIMC") m.penalty = PenaltyTag::group_l21;
  else if (base == "IMC-Frobenius") m.penalty = PenaltyTag::frobenius_sq;
  else throw ValueError("unknown method tag '" + tag + "'");
  return m;
}

struct ExperimentRecord {
  std::string experiment;
  std::string method;
  index_t n1 = 0, n2 = 0, d = 0, k_true = 0, k_fit = 0;
  double rho = 0.0, lambda = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::string status = "ok";
};

inline const char* experiment_csv_header() {
  return "experiment,method,n1,n2,d,k_true,k_fit,rho,lambda,seed,metric,value,seconds,status";
}

namespace detail {

inline std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace detail

inline std::string experiment_csv_row(const ExperimentRecord& r) {
  char seconds[32];
  std::snprintf(seconds, sizeof(seconds), "%.6f", r.seconds);
  std::string out;
  out += detail::csv_safe(r.experiment);
  out += "," + detail::csv_safe(r.method);
  out += "," + std::to_string(r.n1);
  out += "," + std::to_string(r.n2);
  out += "," + std::to_string(r.d);
  out += "," + std::to_string(r.k_true);
  out += "," + std::to_string(r.k_fit);
  out += "," + format_double(r.rho);
  out += "," + format_double(r.lambda);
  out += "," + std::to_string(r.seed);
  out += "," + detail::csv_safe(r.metric);
  out += "," + format_double(r.value);
  out += "," + std::string(seconds);
  out += "," + detail::csv_safe(r.status);
  return out;
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::rho_sweep;
  double scale = 1.0;
  std::vector<std::string> methods = {"SGIMC", "IMC-Frobenius"};
  GridSpec grid;
  SolveConfig base;  // k / lambdas / penalties / seed are overridden per task

  // Overrides for the generator's noise levels; unset keeps its defaults.
  std::optional<double> noise_sd;
  std::optional<double> feature_sd;

  // Semisynthetic pair-similarity task: items with class labels, one-hot
  // class indicator features, and appended pure-noise feature columns.
  index_t semisynth_items = 48;
  index_t semisynth_classes = 3;
  std::vector<index_t> semisynth_noise_counts = {0, 200};
  double semisynth_train_fraction = 0.15;

  int threads = 1;
  bool timing = true;  // false writes 0 in the seconds column (byte-stable reruns)
  std::string out_csv = "experiment.csv";

  void validate() const {
    grid.validate();
    if (methods.empty()) throw ValueError("experiment: empty method list");
    for (const std::string& m : methods) method_from_tag(m);
    if (!(scale > 0.0) || scale > 1.0) throw ValueError("experiment: scale must be in (0, 1]");
    if (kind == ExperimentKind::semisynthetic_noise) {
      if (semisynth_items < 4) throw ValueError("experiment: need at least 4 items");
      if (semisynth_classes < 2 || semisynth_classes > semisynth_items) {
        throw ValueError("experiment: classes must be in [2, items]");
      }
      if (semisynth_noise_counts.empty()) throw ValueError("experiment: empty noise count list");
      if (!(semisynth_train_fraction > 0.0) || !(semisynth_train_fraction < 1.0)) {
        throw ValueError("experiment: train fraction must be in (0, 1)");
      }
    }
    if (threads < 1) throw ValueError("experiment: threads must be >= 1");
    if (out_csv.empty()) throw ValueError("experiment: empty output path");
  }
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j{
      {"kind", experiment_kind_name(c.kind)},
      {"scale", c.scale},
      {"methods", c.methods},
      {"grid",
       {{"lambdas", c.grid.lambdas},
        {"tie_lambdas", c.grid.tie_lambdas},
        {"ranks", c.grid.ranks},
        {"validation_fraction", c.grid.validation_fraction},
        {"seeds", c.grid.seeds}}},
      {"base", solve_config_to_json(c.base)},
      {"semisynth_items", c.semisynth_items},
      {"semisynth_classes", c.semisynth_classes},
      {"semisynth_noise_counts", c.semisynth_noise_counts},
      {"semisynth_train_fraction", c.semisynth_train_fraction},
      {"threads", c.threads},
      {"timing", c.timing},
      {"out_csv", c.out_csv},
  };
  j["noise_sd"] = c.noise_sd ? nlohmann::json(*c.noise_sd) : nlohmann::json(nullptr);
  j["feature_sd"] = c.feature_sd ? nlohmann::json(*c.feature_sd) : nlohmann::json(nullptr);
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    ExperimentConfig c = {}) {
  if (j.contains("kind")) c.kind = experiment_kind_from_name(j.at("kind"));
  if (j.contains("scale")) c.scale = j.at("scale").get<double>();
  if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("grid")) {
    const nlohmann::json& g = j.at("grid");
    if (g.contains("lambdas")) c.grid.lambdas = g.at("lambdas").get<std::vector<double>>();
    if (g.contains("tie_lambdas")) c.grid.tie_lambdas = g.at("tie_lambdas").get<bool>();
    if (g.contains("ranks")) c.grid.ranks = g.at("ranks").get<std::vector<index_t>>();
    if (g.contains("validation_fraction"))
      c.grid.validation_fraction = g.at("validation_fraction").get<double>();
    if (g.contains("seeds")) c.grid.seeds = g.at("seeds").get<std::vector<std::uint64_t>>();
  }
  if (j.contains("base")) c.base = solve_config_from_json(j.at("base"), c.base);
  if (j.contains("noise_sd") && !j.at("noise_sd").is_null())
    c.noise_sd = j.at("noise_sd").get<double>();
  if (j.contains("feature_sd") && !j.at("feature_sd").is_null())
    c.feature_sd = j.at("feature_sd").get<double>();
  if (j.contains("semisynth_items")) c.semisynth_items = j.at("semisynth_items").get<index_t>();
  if (j.contains("semisynth_classes"))
    c.semisynth_classes = j.at("semisynth_classes").get<index_t>();
  if (j.contains("semisynth_noise_counts"))
    c.semisynth_noise_counts = j.at("semisynth_noise_counts").get<std::vector<index_t>>();
  if (j.contains("semisynth_train_fraction"))
    c.semisynth_train_fraction = j.at("semisynth_train_fraction").get<double>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (j.contains("timing")) c.timing = j.at("timing").get<bool>();
  if (j.contains("out_csv")) c.out_csv = j.at("out_csv").get<std::string>();
  return c;
}

namespace detail {

// Relative error over every unobserved cell against the dense reference.
inline double unobserved_rel_error(const SynthInstance& inst, const FactorPair& f) {
  const DenseMatrix pred = predict_full(f, inst.problem.x, inst.problem.y, true);
  const index_t n1 = inst.m_full.rows(), n2 = inst.m_full.cols();
  std::vector<bool> observed(static_cast<std::size_t>(n1 * n2), false);
  inst.problem.m.for_each([&](index_t i, index_t j, double) {
    observed[static_cast<std::size_t>(i * n2 + j)] = true;
  });
  double num = 0.0, den = 0.0;
  for (index_t i = 0; i < n1; ++i) {
    for (index_t j = 0; j < n2; ++j) {
      if (observed[static_cast<std::size_t>(i * n2 + j)]) continue;
      const double r = pred(i, j) - inst.m_full(i, j);
      num += r * r;
      den += inst.m_full(i, j) * inst.m_full(i, j);
    }
  }
  if (den == 0.0) throw NumericalError("rel_error: zero reference norm over unobserved cells");
  return std::sqrt(num / den);
}

// Selection on a holdout of the training entries, then a refit on all of
// them at the chosen lambda.  The test side never enters selection.
struct FittedSelection {
  double lambda = 0.0;
  FactorPair factors;
};

inline FittedSelection select_and_refit(const Problem& train_problem, const GridSpec& grid,
                                        const SolveConfig& cfg) {
  OmegaSplit split = split_omega(train_problem.m, grid.validation_fraction,
                                 mix_seed(cfg.seed, 11));
  verify_split(train_problem.m, split);
  Problem inner(std::move(split.kept), train_problem.x, train_problem.y, train_problem.loss);
  SelectionResult sel = select_lambda_on_split(inner, split.held_pairs, split.held_values,
                                               grid.lambdas, grid.tie_lambdas, cfg);
  SolveConfig best = cfg;
  best.lambda_u = sel.best_lambda;
  if (grid.tie_lambdas) best.lambda_v = sel.best_lambda;
  if (best.combined) {
    if (best.lambda_u_residual == 0.0) best.lambda_u_residual = sel.best_lambda;
    if (best.lambda_v_residual == 0.0) best.lambda_v_residual = sel.best_lambda;
  }
  auto [factors, report] = fit(train_problem, best);
  if (report.aborted) throw NumericalError("refit aborted: " + report.abort_reason);
  return {sel.best_lambda, std::move(factors)};
}

inline SolveConfig task_config(const ExperimentConfig& cfg, const MethodSpec& method,
                               index_t k_fit, std::uint64_t instance_seed) {
  SolveConfig c = cfg.base;
  c.k = k_fit;
  c.penalty_u = method.penalty;
  c.penalty_v = method.penalty;
  c.combined = method.combined;
  c.seed = mix_seed(instance_seed, 7);
  return c;
}

}  // namespace detail

struct ExperimentResult {
  std::vector<ExperimentRecord> rows;
  index_t failed = 0;  // rows with status != ok
};

// One row per spec x method x seed x rank: generate the instance, pick
// lambda on a validation holdout, refit, score on held-out data.  Failures
// are recorded in the row's status and the run continues.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::vector<SynthSpec> sweep =
      cfg.kind == ExperimentKind::semisynthetic_noise
          ? std::vector<SynthSpec>{}
          : sweep_specs(cfg.kind == ExperimentKind::rho_sweep ? SweepKind::rho_sweep
                                                              : SweepKind::feature_sweep,
                        cfg.scale);
  const std::size_t spec_count =
      cfg.kind == ExperimentKind::semisynthetic_noise ? cfg.semisynth_noise_counts.size()
                                                      : sweep.size();

  struct TaskKey {
    std::size_t spec_index;
    std::size_t method_index;
    std::size_t seed_index;
    std::size_t rank_index;
  };
  std::vector<TaskKey> keys;
  for (std::size_t si = 0; si < spec_count; ++si) {
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      for (std::size_t ei = 0; ei < cfg.grid.seeds.size(); ++ei) {
        for (std::size_t ri = 0; ri < cfg.grid.ranks.size(); ++ri) {
          keys.push_back({si, mi, ei, ri});
        }
      }
    }
  }

  ExperimentResult result;
  result.rows.resize(keys.size());
  std::vector<std::function<void()>> tasks;
  tasks.reserve(keys.size());
  for (std::size_t t = 0; t < keys.size(); ++t) {
    tasks.push_back([&cfg, &sweep, &result, &keys, t]() {
      const TaskKey key = keys[t];
      const MethodSpec method = method_from_tag(cfg.methods[key.method_index]);
      const std::uint64_t seed = cfg.grid.seeds[key.seed_index];
      const index_t rank = cfg.grid.ranks[key.rank_index];
      ExperimentRecord& row = result.rows[t];
      row.experiment = experiment_kind_name(cfg.kind);
      row.method = method.tag;
      row.seed = seed;
      const auto t_start = std::chrono::steady_clock::now();
      try {
        if (cfg.kind == ExperimentKind::semisynthetic_noise) {
          const index_t noise = cfg.semisynth_noise_counts[key.spec_index];
          const index_t n = cfg.semisynth_items;
          const index_t classes = cfg.semisynth_classes;
          const std::uint64_t inst_seed = mix_seed(cfg.base.seed, seed, key.spec_index + 1);
          row.n1 = row.n2 = n;
          row.d = classes + noise;
          row.k_true = classes;
          row.k_fit = rank > 0 ? rank : classes;
          row.rho = cfg.semisynth_train_fraction;
          row.metric = "accuracy";

          std::vector<index_t> labels(static_cast<std::size_t>(n));
          for (index_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
          DenseMatrix indicators(n, classes);
          for (index_t i = 0; i < n; ++i) indicators(i, i % classes) = 1.0;
          FeatureMatrix x = FeatureMatrix::dense(std::move(indicators));
          if (noise > 0) {
            x = append_noise_features(x, noise,
                                      cfg.feature_sd.value_or(std::sqrt(0.05)),
                                      mix_seed(inst_seed, 22));
          }
          PairSimilarity ps = build_pair_similarity(labels, cfg.semisynth_train_fraction,
                                                    mix_seed(inst_seed, 21));
          Problem train(std::move(ps.train), x, x, LossKind::logistic);
          SolveConfig solve_cfg = detail::task_config(cfg, method, row.k_fit, inst_seed);
          detail::FittedSelection fitted = detail::select_and_refit(train, cfg.grid, solve_cfg);
          row.lambda = fitted.lambda;
          const std::vector<double> preds =
              predict(fitted.factors, train.x, train.y, ps.test_pairs);
          row.value = metric_accuracy(preds, ps.test_values);
        } else {
          SynthSpec spec = sweep[key.spec_index];
          if (cfg.noise_sd) spec.noise_sd = *cfg.noise_sd;
          if (cfg.feature_sd) spec.feature_sd = *cfg.feature_sd;
          // The rho sweep shares one realization per seed: same features and
          // noise field, and the cell sampler's prefix property nests the
          // observation sets as rho grows.  Each point stays a uniform
          // sample; the coupling only removes between-instance variance from
          // the curve.  The feature sweep changes d, so its instances are
          // separate draws by construction.
          spec.seed = cfg.kind == ExperimentKind::rho_sweep
                          ? mix_seed(cfg.base.seed, seed)
                          : mix_seed(cfg.base.seed, seed, key.spec_index + 1);
          row.n1 = spec.n1;
          row.n2 = spec.n2;
          row.d = spec.d;
          row.k_true = spec.k;
          row.k_fit = rank > 0 ? rank : spec.k;
          row.rho = spec.rho;
          row.metric = "rel_error";

          SynthInstance inst = generate(spec);
          SolveConfig solve_cfg = detail::task_config(cfg, method, row.k_fit, spec.seed);
          detail::FittedSelection fitted =
              detail::select_and_refit(inst.problem, cfg.grid, solve_cfg);
          row.lambda = fitted.lambda;
          row.value = detail::unobserved_rel_error(inst, fitted.factors);
        }
        row.status = "ok";
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
      }
      row.seconds = cfg.timing ? detail::elapsed_seconds(t_start) : 0.0;
    });
  }
  run_task_bag(tasks, cfg.threads);

  std::ofstream out = detail::open_for_write(cfg.out_csv);
  out << experiment_csv_header() << "\n";
  for (const ExperimentRecord& row : result.rows) {
    out << experiment_csv_row(row) << "\n";
    if (row.status != "ok") ++result.failed;
  }
  if (!out) throw ParseError(cfg.out_csv + ": write failed");
  std::ofstream sidecar = detail::open_for_write(cfg.out_csv + ".json");
  sidecar << experiment_config_to_json(cfg).dump(2) << "\n";
  if (!sidecar) throw ParseError(cfg.out_csv + ".json: write failed");
  return result;
}

}  // namespace sgimc
