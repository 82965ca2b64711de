#ifndef KFSC_EVAL_HPP
#define KFSC_EVAL_HPP

#include "kfsc/core.hpp"
#include "kfsc/init.hpp"
#include "kfsc/rng.hpp"
#include "kfsc/types.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace kfsc {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n^3)). Returns row -> column.
inline std::vector<Index> min_cost_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a sentinel.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index row = 1; row <= n; ++row) {
    match[0] = row;
    Index col0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(col0)] = true;
      const Index row0 = match[static_cast<std::size_t>(col0)];
      double delta = inf;
      Index col1 = 0;
      for (Index c = 1; c <= n; ++c) {
        if (used[static_cast<std::size_t>(c)]) continue;
        const double cur = cost(row0 - 1, c - 1) - u[static_cast<std::size_t>(row0)] - v[static_cast<std::size_t>(c)];
        if (cur < minv[static_cast<std::size_t>(c)]) {
          minv[static_cast<std::size_t>(c)] = cur;
          way[static_cast<std::size_t>(c)] = col0;
        }
        if (minv[static_cast<std::size_t>(c)] < delta) {
          delta = minv[static_cast<std::size_t>(c)];
          col1 = c;
        }
      }
      for (Index c = 0; c <= n; ++c) {
        if (used[static_cast<std::size_t>(c)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(c)])] += delta;
          v[static_cast<std::size_t>(c)] -= delta;
        } else {
          minv[static_cast<std::size_t>(c)] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n), 0);
  for (Index c = 1; c <= n; ++c) assignment[static_cast<std::size_t>(match[static_cast<std::size_t>(c)] - 1)] = c - 1;
  return assignment;
}

namespace detail {

// Dense 0-based relabeling in order of first appearance.
inline std::vector<Index> compact_labels(const Labels& labels, Index& count) {
  std::map<int, Index> ids;
  std::vector<Index> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(ids.try_emplace(l, static_cast<Index>(ids.size())).first->second);
  count = static_cast<Index>(ids.size());
  return out;
}

inline Matrix contingency(const Labels& pred, const Labels& truth, Index& rows, Index& cols) {
  if (pred.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "label sequences differ in length");
  const auto p = compact_labels(pred, rows);
  const auto t = compact_labels(truth, cols);
  Matrix table = Matrix::Zero(rows, cols);
  for (std::size_t i = 0; i < p.size(); ++i) table(p[i], t[i]) += 1.0;
  return table;
}

}  // namespace detail

/// Fraction of samples that agree under the best one-to-one matching of
/// predicted to true labels. Label sets of different sizes are allowed.
inline double clustering_accuracy(const Labels& pred, const Labels& truth) {
  Index rows = 0, cols = 0;
  const Matrix table = detail::contingency(pred, truth, rows, cols);
  if (pred.empty()) return 1.0;
  const Index size = std::max(rows, cols);
  if (size > 64) throw Error(ErrorCode::InvalidParams, "label alphabets larger than 64 are not supported");
  Matrix cost = Matrix::Zero(size, size);
  cost.topLeftCorner(rows, cols) = -table;
  const auto match = min_cost_assignment(cost);
  double agree = 0.0;
  for (Index r = 0; r < rows; ++r)
    if (match[static_cast<std::size_t>(r)] < cols) agree += table(r, match[static_cast<std::size_t>(r)]);
  return agree / static_cast<double>(pred.size());
}

/// Normalized mutual information, normalized by the arithmetic mean of the
/// two entropies. Two single-cluster partitions score 1.
inline double nmi(const Labels& pred, const Labels& truth) {
  Index rows = 0, cols = 0;
  const Matrix table = detail::contingency(pred, truth, rows, cols);
  const double n = static_cast<double>(pred.size());
  if (n == 0.0) return 1.0;
  const Vector pr = table.rowwise().sum() / n;
  const Vector pc = table.colwise().sum().transpose() / n;
  auto entropy = [](const Vector& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i)
      if (p(i) > 0.0) h -= p(i) * std::log(p(i));
    return h;
  };
  const double hr = entropy(pr), hc = entropy(pc);
  double mi = 0.0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const double pij = table(r, c) / n;
      if (pij > 0.0) mi += pij * std::log(pij / (pr(r) * pc(c)));
    }
  const double denom = 0.5 * (hr + hc);
  if (denom <= 0.0) return 1.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

enum class KpcInit { Random, KMeans };

struct KpcResult {
  Labels labels;
  /// Orthonormal m x d bases, one per cluster.
  std::vector<Matrix> bases;
  /// Within-cluster residual sum after every assignment step.
  std::vector<double> residual_trace;
  int iterations = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline Matrix top_left_singular_vectors(const Matrix& columns, Index d) {
  const Matrix scatter = columns * columns.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(scatter);
  // Eigenvalues ascend; the last d eigenvectors span the top-d subspace.
  return eig.eigenvectors().rightCols(d).rowwise().reverse();
}

inline Matrix orthonormal_basis(const Matrix& columns) {
  Eigen::HouseholderQR<Matrix> qr(columns);
  return qr.householderQ() * Matrix::Identity(columns.rows(), columns.cols());
}

}  // namespace detail

/// k-plane clustering: alternate nearest-subspace assignment (residual
/// ||x - U U^T x||^2, ties to the lower index) and per-cluster PCA, until the
/// assignment stops changing or `max_iters` is reached.
inline KpcResult kpc_fit(const Matrix& X, Index k, Index d, int max_iters, std::uint64_t seed,
                         KpcInit init = KpcInit::KMeans, int kmeans_reps = 10) {
  const Index m = X.rows(), n = X.cols();
  if (k < 1 || d < 1) throw Error(ErrorCode::InvalidParams, "k and d must be positive");
  if (d > m) throw Error(ErrorCode::InvalidParams, "subspace dimension exceeds the ambient dimension");
  if (n < k) throw Error(ErrorCode::InvalidParams, "fewer samples than clusters");
  KpcResult out;
  if (d == m) out.warnings.push_back("d == m: every subspace reconstructs every sample; labels degenerate to 1");

  const Dictionary D0 = init == KpcInit::KMeans ? init_dictionary_kmeans(X, k, d, kmeans_reps, seed)
                                                : init_dictionary_random(m, k, d, seed);
  for (Index j = 0; j < k; ++j) out.bases.push_back(detail::orthonormal_basis(D0.block(j)));

  Rng rng(seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  std::vector<Index> assignment(static_cast<std::size_t>(n), -1), previous;
  Matrix residuals(k, n);
  for (int it = 0; it < std::max(max_iters, 1); ++it) {
    for (Index j = 0; j < k; ++j) {
      const Matrix& U = out.bases[static_cast<std::size_t>(j)];
      residuals.row(j) = (X - U * (U.transpose() * X)).colwise().squaredNorm();
    }
    previous = assignment;
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      for (Index j = 1; j < k; ++j)
        if (residuals(j, i) < residuals(best, i)) best = j;
      assignment[static_cast<std::size_t>(i)] = best;
      total += residuals(best, i);
    }
    out.residual_trace.push_back(total);
    out.iterations = it + 1;
    if (assignment == previous || it + 1 >= max_iters) break;

    for (Index j = 0; j < k; ++j) {
      std::vector<Index> members;
      for (Index i = 0; i < n; ++i)
        if (assignment[static_cast<std::size_t>(i)] == j) members.push_back(i);
      if (members.empty()) {
        Matrix seed_cols(m, d);
        seed_cols.col(0) = X.col(static_cast<Index>(rng.below(static_cast<std::size_t>(n))));
        for (Index c = 1; c < d; ++c)
          for (Index r = 0; r < m; ++r) seed_cols(r, c) = rng.normal();
        out.bases[static_cast<std::size_t>(j)] = detail::orthonormal_basis(seed_cols);
        out.warnings.push_back("empty cluster " + std::to_string(j + 1) + " reseeded from a random sample");
        continue;
      }
      Matrix cols(m, static_cast<Index>(members.size()));
      for (std::size_t c = 0; c < members.size(); ++c) cols.col(static_cast<Index>(c)) = X.col(members[c]);
      out.bases[static_cast<std::size_t>(j)] = detail::top_left_singular_vectors(cols, d);
    }
  }
  out.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(assignment[static_cast<std::size_t>(i)]) + 1;
  return out;
}

}  // namespace kfsc

#endif  // KFSC_EVAL_HPP
