#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sgimc {

// splitmix64 step; the standard way to turn correlated seeds into
// well-separated stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic stream key from a user seed and a few tags.  Streams keyed
// by factor shape (not draw order) keep initialization invariant under
// problem transposition.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t stream_seed) {
  return std::mt19937_64(stream_seed);
}

// Uniform sample of `count` distinct cells of an n1 x n2 grid without
// replacement (partial Fisher-Yates over the flattened index range).
inline std::vector<std::pair<std::int64_t, std::int64_t>> sample_cells(
    std::int64_t n1, std::int64_t n2, std::int64_t count, std::uint64_t stream_seed) {
  const std::int64_t total = n1 * n2;
  if (count < 1 || count > total) {
    throw std::invalid_argument("sample_cells: count " + std::to_string(count) + " of " +
                                std::to_string(total));
  }
  std::vector<std::int64_t> cells(static_cast<std::size_t>(total));
  std::iota(cells.begin(), cells.end(), std::int64_t{0});
  auto rng = make_rng(stream_seed);
  for (std::int64_t t = 0; t < count; ++t) {
    std::uniform_int_distribution<std::int64_t> pick(t, total - 1);
    std::swap(cells[t], cells[pick(rng)]);
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t t = 0; t < count; ++t) out.emplace_back(cells[t] / n2, cells[t] % n2);
  return out;
}

}  // namespace sgimc
