#include "kfsc/eval.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

using namespace kfsc;

namespace {

Labels random_labels(Rng& rng, std::size_t n, int alphabet) {
  Labels out(n);
  for (auto& l : out) l = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(alphabet)));
  return out;
}

Labels relabel(const Labels& in, const std::vector<int>& map) {
  Labels out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = map[static_cast<std::size_t>(in[i] - 1)];
  return out;
}

// Plain-definition NMI from counted frequencies.
double direct_nmi(const Labels& a, const Labels& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1 / n;
    pb[b[i]] += 1 / n;
    pab[{a[i], b[i]}] += 1 / n;
  }
  double ha = 0, hb = 0, mi = 0;
  for (auto [k, p] : pa) ha -= p * std::log(p);
  for (auto [k, p] : pb) hb -= p * std::log(p);
  for (auto [key, p] : pab) mi += p * std::log(p / (pa[key.first] * pb[key.second]));
  return mi / (0.5 * (ha + hb));
}

}  // namespace

TEST(Accuracy, Examples) {
  EXPECT_DOUBLE_EQ(clustering_accuracy({1, 1, 2, 2}, {2, 2, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(clustering_accuracy({1, 1, 1, 2}, {1, 1, 2, 2}), 0.75);
  EXPECT_DOUBLE_EQ(clustering_accuracy({3, 1, 2, 2, 1}, {3, 1, 2, 2, 1}), 1.0);
  EXPECT_DOUBLE_EQ(clustering_accuracy({1, 1, 1, 1}, {1, 2, 3, 4}), 0.25);
}

TEST(Accuracy, LengthMismatch) {
  try {
    clustering_accuracy({1, 2}, {1});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  EXPECT_THROW(nmi({1}, {1, 2}), Error);
}

TEST(Accuracy, MatchesExhaustiveSearch) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int ka = 1 + static_cast<int>(rng.below(5)), kb = 1 + static_cast<int>(rng.below(5));
    const std::size_t n = 5 + rng.below(30);
    const Labels a = random_labels(rng, n, ka), b = random_labels(rng, n, kb);
    EXPECT_NEAR(clustering_accuracy(a, b), oracle::brute_force_acc(a, b), 1e-15) << "trial " << trial;
  }
}

TEST(Accuracy, InvariantUnderRelabeling) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const Labels a = random_labels(rng, 40, k), b = random_labels(rng, 40, k);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 1);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    EXPECT_DOUBLE_EQ(clustering_accuracy(relabel(a, perm), b), clustering_accuracy(a, b));
    EXPECT_DOUBLE_EQ(clustering_accuracy(a, relabel(b, perm)), clustering_accuracy(a, b));
  }
}

TEST(Hungarian, OptimalOnRandomCosts) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.below(6));
    const Matrix cost = rng.normal_matrix(k, k);
    const auto match = min_cost_assignment(cost);
    double got = 0;
    for (Index r = 0; r < k; ++r) got += cost(r, match[static_cast<std::size_t>(r)]);
    std::vector<Index> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0;
      for (Index r = 0; r < k; ++r) s += cost(r, perm[static_cast<std::size_t>(r)]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(Nmi, Examples) {
  EXPECT_NEAR(nmi({1, 1, 2, 2, 3}, {2, 2, 3, 3, 1}), 1.0, 1e-12);
  EXPECT_NEAR(nmi({1, 1, 1, 1}, {1, 1, 2, 2}), 0.0, 1e-12);
  EXPECT_NEAR(nmi({1, 1, 2, 2}, {1, 2, 1, 2}), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(nmi({4, 4, 4}, {1, 1, 1}), 1.0);
}

TEST(Nmi, SymmetricAndMatchesDefinition) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Labels a = random_labels(rng, 60, 4), b = random_labels(rng, 60, 3);
    EXPECT_NEAR(nmi(a, b), nmi(b, a), 1e-12);
    EXPECT_NEAR(nmi(a, b), direct_nmi(a, b), 1e-12);
    EXPECT_GE(nmi(a, b), 0.0);
    EXPECT_LE(nmi(a, b), 1.0);
  }
}

namespace {

Matrix orthogonal_subspace_data(Index k, Index d, Index m, Index per, std::uint64_t seed, Labels& truth) {
  Rng rng(seed);
  Matrix X(m, k * per);
  truth.clear();
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < per; ++i) {
      Vector x = Vector::Zero(m);
      x.segment(j * d, d) = rng.normal_matrix(d, 1);
      X.col(j * per + i) = x.normalized();
      truth.push_back(static_cast<int>(j) + 1);
    }
  return X;
}

}  // namespace

TEST(Kpc, RecoversOrthogonalSubspaces) {
  Labels truth;
  const Matrix X = orthogonal_subspace_data(3, 2, 8, 20, 5, truth);
  const KpcResult r = kpc_fit(X, 3, 2, 50, 1);
  EXPECT_EQ(clustering_accuracy(r.labels, truth), 1.0);
  EXPECT_EQ(r.residual_trace.size(), static_cast<std::size_t>(r.iterations));
}

TEST(Kpc, CorrectAssignmentIsFixedPoint) {
  Labels truth;
  const Matrix X = orthogonal_subspace_data(3, 2, 8, 20, 6, truth);
  const KpcResult r = kpc_fit(X, 3, 2, 50, 2);
  ASSERT_EQ(clustering_accuracy(r.labels, truth), 1.0);
  EXPECT_NEAR(r.residual_trace.back(), 0.0, 1e-20);
  const Labels again = kpc_fit(X, 3, 2, r.iterations + 1, 2).labels;
  EXPECT_EQ(again, r.labels);
}

TEST(Kpc, ResidualTraceNonincreasing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix X = normalize_columns(DataMatrix(rng.normal_matrix(10, 120))).values;
    for (auto init : {KpcInit::Random, KpcInit::KMeans}) {
      const KpcResult r = kpc_fit(X, 4, 3, 100, seed, init, 2);
      for (std::size_t t = 1; t < r.residual_trace.size(); ++t)
        EXPECT_LE(r.residual_trace[t], r.residual_trace[t - 1] + 1e-10);
    }
  }
}

TEST(Kpc, FullDimensionWarnsAndLargerThrows) {
  Rng rng(7);
  const Matrix X = normalize_columns(DataMatrix(rng.normal_matrix(3, 10))).values;
  const KpcResult r = kpc_fit(X, 2, 3, 10, 0);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_EQ(r.warnings.front().rfind("d == m", 0), 0u);
  EXPECT_EQ(r.labels, Labels(10, 1));
  EXPECT_THROW(kpc_fit(X, 2, 4, 10, 0), Error);
}
