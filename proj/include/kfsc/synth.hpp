#ifndef KFSC_SYNTH_HPP
#define KFSC_SYNTH_HPP

#include "kfsc/rng.hpp"
#include "kfsc/types.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace kfsc {

/// Union-of-subspaces benchmark. Block j is (similarity * A0 + A_j) B_j with
/// standard-normal A0, A_j (m x d0) and B_j (d0 x n0).
struct SynthConfig {
  Index k = 5;
  Index ambient_dim = 25;
  Index subspace_dim = 5;
  Index per_cluster = 50;
  double similarity = 1.0;
  /// Dense noise standard deviation relative to the clean data's.
  double noise_level = 0.0;
  /// Fraction of entries hit by sparse corruption.
  double sparse_density = 0.0;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1 || ambient_dim < 1 || subspace_dim < 1 || per_cluster < 1)
      throw Error(ErrorCode::InvalidConfig, "dimensions and counts must be positive");
    if (subspace_dim >= ambient_dim) throw Error(ErrorCode::InvalidConfig, "subspace_dim must be below ambient_dim");
    if (!(similarity >= 0.0)) throw Error(ErrorCode::InvalidConfig, "similarity must be nonnegative");
    if (!(noise_level >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise_level must be nonnegative");
    if (!(sparse_density >= 0.0 && sparse_density <= 1.0))
      throw Error(ErrorCode::InvalidConfig, "sparse_density must lie in [0,1]");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0))
      throw Error(ErrorCode::InvalidConfig, "missing_rate must lie in [0,1)");
  }
};

struct SynthData {
  /// Corrupted data; carries a mask iff missing_rate > 0 (missing entries hold 0).
  DataMatrix data;
  Labels labels;
  Matrix clean;
  /// Per-subspace spanning matrices (similarity * A0 + A_j), m x d0 each.
  std::vector<Matrix> bases;
  double sigma_x = 0.0;
  /// Dense noise actually added.
  Matrix dense_noise;
  /// Number of sparsely corrupted entries.
  Index sparse_count = 0;
};

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  const Index m = cfg.ambient_dim, d0 = cfg.subspace_dim, n0 = cfg.per_cluster, k = cfg.k;
  const Index n = k * n0;
  Rng rng(cfg.seed);

  SynthData out;
  const Matrix A0 = rng.normal_matrix(m, d0);
  out.clean.resize(m, n);
  out.labels.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < k; ++j) {
    Matrix basis = cfg.similarity * A0 + rng.normal_matrix(m, d0);
    const Matrix coeffs = rng.normal_matrix(d0, n0);
    out.clean.middleCols(j * n0, n0) = basis * coeffs;
    out.bases.push_back(std::move(basis));
    for (Index i = 0; i < n0; ++i) out.labels[static_cast<std::size_t>(j * n0 + i)] = static_cast<int>(j) + 1;
  }

  const double mean = out.clean.mean();
  out.sigma_x = std::sqrt((out.clean.array() - mean).square().sum() / static_cast<double>(out.clean.size()));

  out.dense_noise = rng.normal_matrix(m, n) * (cfg.noise_level * out.sigma_x);
  Matrix values = out.clean + out.dense_noise;

  out.sparse_count = static_cast<Index>(std::llround(cfg.sparse_density * static_cast<double>(m * n)));
  const auto hits = rng.sample_without_replacement(static_cast<std::size_t>(m * n),
                                                   static_cast<std::size_t>(out.sparse_count));
  for (const auto flat : hits) values.data()[flat] += out.sigma_x * rng.normal();

  if (cfg.missing_rate > 0.0) {
    Matrix mask(m, n);
    for (Index i = 0; i < n; ++i) {
      do {
        for (Index r = 0; r < m; ++r) mask(r, i) = rng.uniform() < cfg.missing_rate ? 0.0 : 1.0;
      } while (mask.col(i).sum() == 0.0);
    }
    values.array() *= mask.array();
    out.data = DataMatrix(std::move(values), std::move(mask));
  } else {
    out.data = DataMatrix(std::move(values));
  }
  return out;
}

}  // namespace kfsc

#endif  // KFSC_SYNTH_HPP
