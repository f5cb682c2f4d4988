#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/penalty.hpp"
#include "sgimc/rng.hpp"
#include "sgimc/solver.hpp"
#include "sgimc/sparse_matrix.hpp"

namespace sgimc {

// Shortest text form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open for reading");
  return in;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  return out;
}

inline double parse_double(const std::string& tok, const std::string& path, index_t line) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError(path + ":" + std::to_string(line) + ": bad number '" + tok + "'");
  }
  return v;
}

}  // namespace detail

// --- MatrixMarket, coordinate real general, 1-based indices ---

inline OmegaSparseMatrix read_matrix_market(const std::string& path) {
  std::ifstream in = detail::open_for_read(path);
  std::string line;
  index_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  ++lineno;
  {
    std::string lower = line;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (lower.rfind("%%matrixmarket", 0) != 0 || lower.find("coordinate") == std::string::npos ||
        lower.find("real") == std::string::npos || lower.find("general") == std::string::npos) {
      throw ParseError(path + ": expected '%%MatrixMarket matrix coordinate real general'");
    }
  }
  index_t rows = 0, cols = 0, nnz = 0;
  bool have_sizes = false;
  std::vector<Triplet> entries;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream ls(line);
    if (!have_sizes) {
      if (!(ls >> rows >> cols >> nnz)) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad size line");
      }
      have_sizes = true;
      entries.reserve(static_cast<std::size_t>(nnz));
      continue;
    }
    index_t i = 0, j = 0;
    std::string tok;
    if (!(ls >> i >> j >> tok)) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad entry line");
    }
    entries.push_back({i - 1, j - 1, detail::parse_double(tok, path, lineno)});
  }
  if (!have_sizes) throw ParseError(path + ": missing size line");
  if (static_cast<index_t>(entries.size()) != nnz) {
    throw ParseError(path + ": header promises " + std::to_string(nnz) + " entries, found " +
                     std::to_string(entries.size()));
  }
  try {
    return OmegaSparseMatrix(rows, cols, std::move(entries));
  } catch (const Error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_matrix_market(const std::string& path, const OmegaSparseMatrix& m) {
  std::ofstream out = detail::open_for_write(path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << m.rows() << " " << m.cols() << " " << m.nnz() << "\n";
  m.for_each([&](index_t i, index_t j, double v) {
    out << (i + 1) << " " << (j + 1) << " " << format_double(v) << "\n";
  });
  if (!out) throw ParseError(path + ": write failed");
}

// --- dense text: "rows cols" header then one row per line ---

inline DenseMatrix read_dense_text(const std::string& path) {
  std::ifstream in = detail::open_for_read(path);
  index_t rows = 0, cols = 0;
  if (!(in >> rows >> cols)) throw ParseError(path + ": bad dense header");
  if (rows < 0 || cols < 0) throw ParseError(path + ": negative dimension");
  DenseMatrix m(rows, cols);
  for (index_t i = 0; i < rows; ++i) {
    for (index_t j = 0; j < cols; ++j) {
      std::string tok;
      if (!(in >> tok)) {
        throw ParseError(path + ": expected " + std::to_string(rows * cols) +
                         " values, stopped at row " + std::to_string(i));
      }
      m(i, j) = detail::parse_double(tok, path, i + 2);
    }
  }
  return m;
}

inline void write_dense_text(const std::string& path, const DenseMatrix& m) {
  std::ofstream out = detail::open_for_write(path);
  out << m.rows() << " " << m.cols() << "\n";
  for (index_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (index_t j = 0; j < m.cols(); ++j) {
      if (j) out << " ";
      out << format_double(row[j]);
    }
    out << "\n";
  }
  if (!out) throw ParseError(path + ": write failed");
}

// Feature files: MatrixMarket header means CSR storage, anything else is
// read as dense text.
inline FeatureMatrix read_features(const std::string& path) {
  {
    std::ifstream probe = detail::open_for_read(path);
    std::string first;
    std::getline(probe, first);
    if (first.rfind("%%", 0) == 0) {
      OmegaSparseMatrix m = read_matrix_market(path);
      std::vector<Triplet> entries;
      entries.reserve(static_cast<std::size_t>(m.nnz()));
      m.for_each([&](index_t i, index_t j, double v) { entries.push_back({i, j, v}); });
      return FeatureMatrix::sparse_csr(m.rows(), m.cols(), std::move(entries));
    }
  }
  return FeatureMatrix::dense(read_dense_text(path));
}

// --- dataset manifests ---

struct DatasetBundle {
  std::string m_path;
  std::string x_path;
  std::string y_path;
  LossKind loss = LossKind::squared_l2;
  bool remap01 = false;  // {0,1} labels remapped to {-1,+1} before validation
};

inline nlohmann::json dataset_bundle_to_json(const DatasetBundle& b) {
  return nlohmann::json{{"m", b.m_path},
                        {"x", b.x_path},
                        {"y", b.y_path},
                        {"loss", loss_name(b.loss)},
                        {"remap01", b.remap01}};
}

inline LossKind loss_from_name(const std::string& name) {
  if (name == "squared_l2") return LossKind::squared_l2;
  if (name == "logistic") return LossKind::logistic;
  throw ValueError("unknown loss '" + name + "'");
}

inline PenaltyTag penalty_from_name(const std::string& name) {
  if (name == "group_l21" || name == "group") return PenaltyTag::group_l21;
  if (name == "frobenius_sq" || name == "frobenius") return PenaltyTag::frobenius_sq;
  if (name == "l1") return PenaltyTag::l1;
  throw ValueError("unknown penalty '" + name + "'");
}

inline DatasetBundle dataset_bundle_from_json(const nlohmann::json& j) {
  DatasetBundle b;
  b.m_path = j.at("m").get<std::string>();
  b.x_path = j.at("x").get<std::string>();
  b.y_path = j.at("y").get<std::string>();
  if (j.contains("loss")) b.loss = loss_from_name(j.at("loss").get<std::string>());
  if (j.contains("remap01")) b.remap01 = j.at("remap01").get<bool>();
  return b;
}

inline Problem load_problem(const DatasetBundle& bundle) {
  OmegaSparseMatrix m = read_matrix_market(bundle.m_path);
  if (bundle.remap01) {
    for (double& v : m.values()) {
      if (v == 0.0) v = -1.0;
      else if (v == 1.0) v = 1.0;
      else throw ValueError(bundle.m_path + ": remap01 expects {0,1} values, found " +
                            format_double(v));
    }
  }
  FeatureMatrix x = read_features(bundle.x_path);
  FeatureMatrix y = read_features(bundle.y_path);
  if (x.rows() != m.rows()) {
    throw ConformanceError(bundle.x_path + ": has " + std::to_string(x.rows()) +
                           " rows but " + bundle.m_path + " has " + std::to_string(m.rows()));
  }
  if (y.rows() != m.cols()) {
    throw ConformanceError(bundle.y_path + ": has " + std::to_string(y.rows()) +
                           " rows but " + bundle.m_path + " has " + std::to_string(m.cols()) +
                           " columns");
  }
  return Problem(std::move(m), std::move(x), std::move(y), bundle.loss);
}

// --- model container, versioned magic "SGIMC1" ---

struct ModelMeta {
  LossKind loss = LossKind::squared_l2;
  PenaltyKind penalty_u, penalty_v;
  double lambda_ridge = 0.0;
  std::vector<index_t> active_rows_u, active_rows_v;
};

namespace detail {

inline void write_block(std::ofstream& out, const DenseMatrix& m) {
  out << m.rows() << " " << m.cols() << "\n";
  for (index_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (index_t j = 0; j < m.cols(); ++j) {
      if (j) out << " ";
      out << format_double(row[j]);
    }
    out << "\n";
  }
}

inline DenseMatrix read_block(std::ifstream& in, const std::string& path) {
  index_t rows = 0, cols = 0;
  if (!(in >> rows >> cols)) throw ParseError(path + ": truncated factor block");
  DenseMatrix m(rows, cols);
  for (index_t i = 0; i < rows; ++i) {
    for (index_t j = 0; j < cols; ++j) {
      std::string tok;
      if (!(in >> tok)) throw ParseError(path + ": truncated factor block");
      m(i, j) = parse_double(tok, path, 0);
    }
  }
  return m;
}

}  // namespace detail

inline void save_model(const std::string& path, const FactorPair& f, const ModelMeta& meta) {
  std::ofstream out = detail::open_for_write(path);
  nlohmann::json header{
      {"k", f.u.cols()},
      {"loss", loss_name(meta.loss)},
      {"penalty_u", {{"tag", penalty_name(meta.penalty_u.tag)}, {"lambda", meta.penalty_u.lambda}}},
      {"penalty_v", {{"tag", penalty_name(meta.penalty_v.tag)}, {"lambda", meta.penalty_v.lambda}}},
      {"lambda_ridge", meta.lambda_ridge},
      {"has_residual", f.has_residual()},
      {"active_rows_u", meta.active_rows_u},
      {"active_rows_v", meta.active_rows_v},
  };
  out << "SGIMC1\n" << header.dump() << "\n";
  detail::write_block(out, f.u);
  detail::write_block(out, f.v);
  if (f.has_residual()) {
    detail::write_block(out, *f.u_residual);
    detail::write_block(out, *f.v_residual);
  }
  if (!out) throw ParseError(path + ": write failed");
}

struct LoadedModel {
  FactorPair factors;
  ModelMeta meta;
};

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in = detail::open_for_read(path);
  std::string magic;
  if (!std::getline(in, magic) || magic != "SGIMC1") {
    throw ParseError(path + ": bad magic '" + magic + "', expected SGIMC1");
  }
  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError(path + ": missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  LoadedModel m;
  m.meta.loss = loss_from_name(header.at("loss").get<std::string>());
  m.meta.penalty_u = PenaltyKind(penalty_from_name(header.at("penalty_u").at("tag")),
                                 header.at("penalty_u").at("lambda").get<double>());
  m.meta.penalty_v = PenaltyKind(penalty_from_name(header.at("penalty_v").at("tag")),
                                 header.at("penalty_v").at("lambda").get<double>());
  m.meta.lambda_ridge = header.value("lambda_ridge", 0.0);
  m.meta.active_rows_u = header.value("active_rows_u", std::vector<index_t>{});
  m.meta.active_rows_v = header.value("active_rows_v", std::vector<index_t>{});
  m.factors.u = detail::read_block(in, path);
  m.factors.v = detail::read_block(in, path);
  if (header.value("has_residual", false)) {
    m.factors.u_residual = detail::read_block(in, path);
    m.factors.v_residual = detail::read_block(in, path);
  }
  return m;
}

// --- pair-similarity construction from class labels ---

struct PairSimilarity {
  index_t n = 0;
  OmegaSparseMatrix train;  // n x n, +1 same class / -1 different, diagonal +1
  std::vector<std::pair<index_t, index_t>> test_pairs;
  std::vector<double> test_values;
};

inline PairSimilarity build_pair_similarity(std::span<const index_t> labels,
                                            double train_fraction, std::uint64_t seed) {
  const index_t n = static_cast<index_t>(labels.size());
  if (n < 2) throw ValueError("build_pair_similarity: need at least 2 items");
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
    throw ValueError("build_pair_similarity: train_fraction must be in (0, 1); a full train "
                     "split leaves no test pairs");
  }
  const index_t total = n * n;
  index_t count = static_cast<index_t>(std::llround(train_fraction * static_cast<double>(total)));
  count = std::max<index_t>(1, std::min(count, total - 1));

  std::vector<bool> in_train(static_cast<std::size_t>(total), false);
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(count));
  for (auto [i, j] : sample_cells(n, n, count, mix_seed(seed, 41))) {
    in_train[static_cast<std::size_t>(i * n + j)] = true;
    entries.push_back({i, j, labels[i] == labels[j] ? 1.0 : -1.0});
  }

  PairSimilarity ps;
  ps.n = n;
  ps.train = OmegaSparseMatrix(n, n, std::move(entries));
  ps.test_pairs.reserve(static_cast<std::size_t>(total - count));
  for (index_t i = 0; i < n; ++i) {
    for (index_t j = 0; j < n; ++j) {
      if (in_train[static_cast<std::size_t>(i * n + j)]) continue;
      ps.test_pairs.emplace_back(i, j);
      ps.test_values.push_back(labels[i] == labels[j] ? 1.0 : -1.0);
    }
  }
  return ps;
}

// --- solve-config JSON (field names match the struct 1:1) ---

inline nlohmann::json admm_config_to_json(const AdmmConfig& a) {
  return nlohmann::json{{"eta", a.eta},           {"eps_abs", a.eps_abs},
                        {"eps_rel", a.eps_rel},   {"max_iter", a.max_iter},
                        {"newton_tol", a.newton_tol}, {"max_newton", a.max_newton},
                        {"max_cg", a.max_cg}};
}

inline AdmmConfig admm_config_from_json(const nlohmann::json& j, AdmmConfig a = {}) {
  if (j.contains("eta")) a.eta = j.at("eta").get<double>();
  if (j.contains("eps_abs")) a.eps_abs = j.at("eps_abs").get<double>();
  if (j.contains("eps_rel")) a.eps_rel = j.at("eps_rel").get<double>();
  if (j.contains("max_iter")) a.max_iter = j.at("max_iter").get<int>();
  if (j.contains("newton_tol")) a.newton_tol = j.at("newton_tol").get<double>();
  if (j.contains("max_newton")) a.max_newton = j.at("max_newton").get<int>();
  if (j.contains("max_cg")) a.max_cg = j.at("max_cg").get<int>();
  return a;
}

inline nlohmann::json solve_config_to_json(const SolveConfig& c) {
  return nlohmann::json{{"k", c.k},
                        {"lambda_u", c.lambda_u},
                        {"lambda_v", c.lambda_v},
                        {"penalty_u", penalty_name(c.penalty_u)},
                        {"penalty_v", penalty_name(c.penalty_v)},
                        {"lambda_ridge", c.lambda_ridge},
                        {"combined", c.combined},
                        {"residual_rank", c.residual_rank},
                        {"lambda_u_residual", c.lambda_u_residual},
                        {"lambda_v_residual", c.lambda_v_residual},
                        {"admm", admm_config_to_json(c.admm)},
                        {"outer_tol", c.outer_tol},
                        {"outer_max_iter", c.outer_max_iter},
                        {"seed", c.seed}};
}

inline SolveConfig solve_config_from_json(const nlohmann::json& j, SolveConfig c = {}) {
  if (j.contains("k")) c.k = j.at("k").get<index_t>();
  if (j.contains("lambda_u")) c.lambda_u = j.at("lambda_u").get<double>();
  if (j.contains("lambda_v")) c.lambda_v = j.at("lambda_v").get<double>();
  if (j.contains("penalty_u")) c.penalty_u = penalty_from_name(j.at("penalty_u"));
  if (j.contains("penalty_v")) c.penalty_v = penalty_from_name(j.at("penalty_v"));
  if (j.contains("lambda_ridge")) c.lambda_ridge = j.at("lambda_ridge").get<double>();
  if (j.contains("combined")) c.combined = j.at("combined").get<bool>();
  if (j.contains("residual_rank")) c.residual_rank = j.at("residual_rank").get<index_t>();
  if (j.contains("lambda_u_residual"))
    c.lambda_u_residual = j.at("lambda_u_residual").get<double>();
  if (j.contains("lambda_v_residual"))
    c.lambda_v_residual = j.at("lambda_v_residual").get<double>();
  if (j.contains("admm")) c.admm = admm_config_from_json(j.at("admm"), c.admm);
  if (j.contains("outer_tol")) c.outer_tol = j.at("outer_tol").get<double>();
  if (j.contains("outer_max_iter")) c.outer_max_iter = j.at("outer_max_iter").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json fit_report_to_json(const FitReport& r) {
  nlohmann::json sweeps = nlohmann::json::array();
  for (const SweepStats& s : r.sweeps) {
    sweeps.push_back({{"sweep", s.sweep},
                      {"objective", s.objective},
                      {"primal_u", s.primal_u},
                      {"dual_u", s.dual_u},
                      {"primal_v", s.primal_v},
                      {"dual_v", s.dual_v},
                      {"active_u", s.active_u},
                      {"active_v", s.active_v},
                      {"prediction_delta", s.prediction_delta},
                      {"seconds", s.seconds}});
  }
  return nlohmann::json{{"sweeps", std::move(sweeps)},
                        {"active_rows_u", r.active_rows_u},
                        {"active_rows_v", r.active_rows_v},
                        {"converged", r.converged},
                        {"aborted", r.aborted},
                        {"abort_reason", r.abort_reason},
                        {"sweeps_run", r.sweeps_run},
                        {"seconds", r.seconds}};
}

}  // namespace sgimc
