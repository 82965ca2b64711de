#ifndef KFSC_INIT_HPP
#define KFSC_INIT_HPP

#include "kfsc/core.hpp"
#include "kfsc/rng.hpp"
#include "kfsc/types.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace kfsc {

struct KMeansResult {
  Labels labels;
  /// m x k, unit-norm columns.
  Matrix centers;
  /// Sum over samples of 1 - cos(x, center).
  double objective = 0.0;
  /// Objective after every assignment step of the winning restart.
  std::vector<double> objective_trace;
  int reseeded = 0;
};

namespace detail {

// Assigns each column to the center of largest cosine (ties to the lower
// index); returns the distance sum. Works in column chunks.
inline double assign_cosine(const Matrix& X, const Matrix& centers, std::vector<Index>& assignment,
                            Vector& distance) {
  double total = 0.0;
  for (Index start = 0; start < X.cols(); start += kColumnChunk) {
    const Index width = std::min(kColumnChunk, X.cols() - start);
    const Matrix sims = centers.transpose() * X.middleCols(start, width);
    for (Index c = 0; c < width; ++c) {
      Index best = 0;
      for (Index j = 1; j < centers.cols(); ++j)
        if (sims(j, c) > sims(best, c)) best = j;
      const Index i = start + c;
      assignment[static_cast<std::size_t>(i)] = best;
      distance(i) = 1.0 - sims(best, c);
      total += distance(i);
    }
  }
  return total;
}

}  // namespace detail

/// Lloyd's algorithm under the cosine distance 1 - cos(x, c) on unit-norm
/// columns. Keeps the best of `reps` restarts (lowest distance sum, earliest
/// restart on ties). Empty clusters are reseeded at the sample farthest from
/// its own center.
inline KMeansResult spherical_kmeans(const Matrix& X, Index k, int reps, int max_iters, std::uint64_t seed) {
  const Index n = X.cols();
  if (k < 1) throw Error(ErrorCode::InvalidParams, "k must be positive");
  if (n < k) throw Error(ErrorCode::EmptyClusterUnrecoverable, "fewer samples than clusters");
  if (reps < 1) throw Error(ErrorCode::InvalidParams, "reps must be positive");

  Rng rng(seed);
  KMeansResult best;
  best.objective = std::numeric_limits<double>::infinity();

  std::vector<Index> assignment(static_cast<std::size_t>(n)), previous;
  Vector distance(n);
  for (int rep = 0; rep < reps; ++rep) {
    Matrix centers(X.rows(), k);
    const auto picks = rng.sample_without_replacement(static_cast<std::size_t>(n), static_cast<std::size_t>(k));
    for (Index j = 0; j < k; ++j) centers.col(j) = X.col(static_cast<Index>(picks[static_cast<std::size_t>(j)]));

    std::vector<double> trace;
    int reseeded = 0;
    double total = detail::assign_cosine(X, centers, assignment, distance);
    trace.push_back(total);
    for (int it = 0; it < max_iters; ++it) {
      Matrix sums = Matrix::Zero(X.rows(), k);
      for (Index i = 0; i < n; ++i) sums.col(assignment[static_cast<std::size_t>(i)]) += X.col(i);
      std::vector<bool> taken(static_cast<std::size_t>(n), false);
      for (Index j = 0; j < k; ++j) {
        const double norm = sums.col(j).norm();
        if (norm >= kZeroNorm) {
          centers.col(j) = sums.col(j) / norm;
          continue;
        }
        Index far = -1;
        for (Index i = 0; i < n; ++i)
          if (!taken[static_cast<std::size_t>(i)] && (far < 0 || distance(i) > distance(far))) far = i;
        taken[static_cast<std::size_t>(far)] = true;
        centers.col(j) = X.col(far);
        distance(far) = 0.0;
        ++reseeded;
      }
      previous = assignment;
      total = detail::assign_cosine(X, centers, assignment, distance);
      trace.push_back(total);
      if (assignment == previous) break;
    }

    if (total < best.objective) {
      best.objective = total;
      best.centers = centers;
      best.objective_trace = std::move(trace);
      best.reseeded = reseeded;
      best.labels.assign(static_cast<std::size_t>(n), 0);
      for (Index i = 0; i < n; ++i)
        best.labels[static_cast<std::size_t>(i)] = static_cast<int>(assignment[static_cast<std::size_t>(i)]) + 1;
    }
  }
  return best;
}

/// Standard-normal dictionary projected onto the unit-ball constraint set.
inline Dictionary init_dictionary_random(Index m, Index k, Index d, std::uint64_t seed) {
  if (m < 1 || k < 1 || d < 1) throw Error(ErrorCode::InvalidParams, "m, k and d must be positive");
  Rng rng(seed);
  Matrix atoms = rng.normal_matrix(m, k * d);
  project_unit_columns_inplace(atoms);
  return Dictionary(std::move(atoms), k, d);
}

namespace detail {

inline Vector random_unit(Rng& rng, Index m) {
  Vector v(m);
  do {
    for (Index r = 0; r < m; ++r) v(r) = rng.normal();
  } while (!(v.norm() > kZeroNorm));
  return v.normalized();
}

}  // namespace detail

/// Spherical k-means, then for every center the left singular vectors of its
/// d nearest members (cosine distance). Clusters with fewer than d members are
/// padded with random unit columns before the SVD; when d exceeds m the
/// columns beyond m are random unit vectors.
inline Dictionary init_dictionary_kmeans(const Matrix& X, Index k, Index d, int reps, std::uint64_t seed,
                                         std::optional<Index> subset = std::nullopt, int max_iters = 100) {
  if (d < 1) throw Error(ErrorCode::InvalidParams, "d must be positive");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix sample;
  const Matrix* source = &X;
  if (subset && *subset < X.cols()) {
    const auto picks = rng.sample_without_replacement(static_cast<std::size_t>(X.cols()),
                                                      static_cast<std::size_t>(std::max<Index>(*subset, k)));
    sample.resize(X.rows(), static_cast<Index>(picks.size()));
    for (std::size_t c = 0; c < picks.size(); ++c) sample.col(static_cast<Index>(c)) = X.col(static_cast<Index>(picks[c]));
    source = &sample;
  }
  const Matrix& Xs = *source;
  const KMeansResult km = spherical_kmeans(Xs, k, reps, max_iters, seed);
  const Index m = X.rows();
  const Index basis = std::min(m, d);

  Matrix atoms(m, k * d);
  const Matrix sims = km.centers.transpose() * Xs;
  for (Index j = 0; j < k; ++j) {
    std::vector<Index> members;
    for (Index i = 0; i < Xs.cols(); ++i)
      if (km.labels[static_cast<std::size_t>(i)] == j + 1) members.push_back(i);
    std::stable_sort(members.begin(), members.end(), [&](Index a, Index b) { return sims(j, a) > sims(j, b); });
    const Index take = std::min<Index>(d, static_cast<Index>(members.size()));

    Matrix local(m, d);
    for (Index c = 0; c < take; ++c) local.col(c) = Xs.col(members[static_cast<std::size_t>(c)]);
    for (Index c = take; c < d; ++c) local.col(c) = detail::random_unit(rng, m);

    Eigen::JacobiSVD<Matrix> svd(local, Eigen::ComputeThinU);
    auto block = atoms.middleCols(j * d, d);
    block.leftCols(basis) = svd.matrixU().leftCols(basis);
    for (Index c = basis; c < d; ++c) block.col(c) = detail::random_unit(rng, m);
  }
  return Dictionary(std::move(atoms), k, d);
}

/// Initial dictionary for a fit on column-normalized data.
inline Dictionary initial_dictionary(const Matrix& X, const HyperParams& params) {
  if (const auto* r = std::get_if<RandomInit>(&params.init))
    return init_dictionary_random(X.rows(), params.k, params.d, r->seed);
  const auto& km = std::get<KMeansInit>(params.init);
  return init_dictionary_kmeans(X, params.k, params.d, km.reps, km.seed, km.subset, km.max_iters);
}

}  // namespace kfsc

#endif  // KFSC_INIT_HPP
