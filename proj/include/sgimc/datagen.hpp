#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sgimc/dense_matrix.hpp"
#include "sgimc/error.hpp"
#include "sgimc/feature_matrix.hpp"
#include "sgimc/rng.hpp"
#include "sgimc/solver.hpp"
#include "sgimc/sparse_matrix.hpp"

namespace sgimc {

// Synthetic recovery instance: M = X U* V*^T Y^T + noise with U* = V* =
// [I_k; 0], observed on a uniform sample of cells.  The two scale knobs are
// standard deviations; the classic setup reads the distribution parameters
// as variances, hence the sqrt defaults, but both readings are one config
// away since the convention changes the signal-to-noise ratio materially.
struct SynthSpec {
  index_t n1 = 800;
  index_t n2 = 1600;
  index_t d = 100;
  index_t k = 25;
  double rho = 0.02;
  double noise_sd = std::sqrt(0.005);
  double feature_sd = std::sqrt(0.05);
  std::uint64_t seed = 0;

  void validate() const {
    if (n1 < 1 || n2 < 1 || d < 1 || k < 1) throw ValueError("synth spec: dimensions must be >= 1");
    if (k > d) throw ValueError("synth spec: k must be <= d");
    if (!(rho > 0.0) || rho > 1.0) throw ValueError("synth spec: rho must be in (0, 1]");
    if (noise_sd < 0.0 || feature_sd <= 0.0) throw ValueError("synth spec: bad scale parameter");
  }
};

struct SynthInstance {
  Problem problem;
  DenseMatrix m_full;   // ground truth incl. noise
  DenseMatrix u_true;   // d x k
  DenseMatrix v_true;
};

inline SynthInstance generate(const SynthSpec& spec) {
  spec.validate();
  const DenseMatrix x =
      DenseMatrix::gaussian(spec.n1, spec.d, spec.feature_sd, mix_seed(spec.seed, 101));
  const DenseMatrix y =
      DenseMatrix::gaussian(spec.n2, spec.d, spec.feature_sd, mix_seed(spec.seed, 102));

  DenseMatrix u_true(spec.d, spec.k), v_true(spec.d, spec.k);
  for (index_t l = 0; l < spec.k; ++l) {
    u_true(l, l) = 1.0;
    v_true(l, l) = 1.0;
  }

  // X U* = first k feature columns; same on the Y side.
  DenseMatrix m_full(spec.n1, spec.n2);
  for (index_t i = 0; i < spec.n1; ++i) {
    for (index_t j = 0; j < spec.n2; ++j) {
      double acc = 0.0;
      for (index_t l = 0; l < spec.k; ++l) acc += x(i, l) * y(j, l);
      m_full(i, j) = acc;
    }
  }
  if (spec.noise_sd > 0.0) {
    auto rng = make_rng(mix_seed(spec.seed, 103));
    std::normal_distribution<double> noise(0.0, spec.noise_sd);
    for (double& v : m_full.values()) v += noise(rng);
  }

  const index_t count = static_cast<index_t>(std::llround(spec.rho * static_cast<double>(spec.n1) *
                                                          static_cast<double>(spec.n2)));
  if (count < 1) {
    throw ValueError("generate: rho " + std::to_string(spec.rho) + " yields an empty sample");
  }
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(count));
  for (auto [i, j] : sample_cells(spec.n1, spec.n2, count, mix_seed(spec.seed, 104))) {
    entries.push_back({i, j, m_full(i, j)});
  }

  return SynthInstance{
      Problem(OmegaSparseMatrix(spec.n1, spec.n2, std::move(entries)), FeatureMatrix::dense(x),
              FeatureMatrix::dense(y), LossKind::squared_l2),
      std::move(m_full), std::move(u_true), std::move(v_true)};
}

enum class SweepKind { rho_sweep, feature_sweep };

// Grid of instance specs for the two standard sweeps; `scale` shrinks every
// dimension proportionally (truncating) so the trends stay desk-checkable.
inline std::vector<SynthSpec> sweep_specs(SweepKind kind, double scale = 1.0,
                                          std::uint64_t seed = 0) {
  if (!(scale > 0.0) || scale > 1.0) throw ValueError("sweep_specs: scale must be in (0, 1]");
  const auto scaled = [scale](index_t v) {
    return std::max<index_t>(1, static_cast<index_t>(static_cast<double>(v) * scale));
  };
  const index_t n1 = scaled(800);
  const index_t n2 = scaled(1600);
  const index_t k = scaled(25);

  std::vector<SynthSpec> specs;
  if (kind == SweepKind::rho_sweep) {
    const index_t d = scaled(100);
    for (int step = 0; step < 14; ++step) {
      SynthSpec s;
      s.n1 = n1;
      s.n2 = n2;
      s.d = d;
      s.k = k;
      s.rho = 0.0005 + 0.0015 * step;
      s.seed = seed;
      specs.push_back(s);
    }
  } else {
    for (int step = 1; step <= 8; ++step) {
      SynthSpec s;
      s.n1 = n1;
      s.n2 = n2;
      s.d = scaled(50 * step);
      s.k = k;
      s.rho = 0.2;
      s.seed = seed;
      specs.push_back(s);
    }
  }
  return specs;
}

// Appends `count` i.i.d. N(0, sd^2) feature columns; the non-informative
// feature treatment for semi-synthetic robustness runs.
inline FeatureMatrix append_noise_features(const FeatureMatrix& x, index_t count, double sd,
                                           std::uint64_t stream_seed) {
  if (count < 0) throw ValueError("append_noise_features: negative count");
  const DenseMatrix base = x.to_dense();
  const DenseMatrix noise = DenseMatrix::gaussian(x.rows(), count, sd, stream_seed);
  DenseMatrix out(x.rows(), base.cols() + count);
  for (index_t i = 0; i < out.rows(); ++i) {
    for (index_t j = 0; j < base.cols(); ++j) out(i, j) = base(i, j);
    for (index_t j = 0; j < count; ++j) out(i, base.cols() + j) = noise(i, j);
  }
  return FeatureMatrix::dense(std::move(out));
}

}  // namespace sgimc
