#ifndef KFSC_CORE_HPP
#define KFSC_CORE_HPP

#include "kfsc/rng.hpp"
#include "kfsc/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace kfsc {

inline constexpr double kZeroNorm = 1e-300;
inline constexpr double kSupportThreshold = 1e-10;
inline constexpr double kTauFloor = 1e-12;

/// Scales every column to unit Euclidean norm. With a mask, the norm is taken
/// over observed entries and unobserved entries are set to zero.
inline DataMatrix normalize_columns(const DataMatrix& X) {
  X.validate();
  DataMatrix out = X;
  for (Index i = 0; i < out.cols(); ++i) {
    auto col = out.values.col(i);
    if (out.mask) col = col.cwiseProduct(out.mask->col(i));
    const double norm = col.norm();
    if (!(norm >= kZeroNorm)) {
      if (out.mask && out.mask->col(i).sum() == 0.0)
        throw Error(ErrorCode::EmptyColumnObservation, "column " + std::to_string(i) + " has no observed entry", i);
      throw Error(ErrorCode::ZeroColumn, "column " + std::to_string(i) + " is zero", i);
    }
    col /= norm;
  }
  out.column_normalized = true;
  return out;
}

/// Group soft-thresholding: shrinks the vector's length by u, or returns zero.
inline Vector group_soft_threshold(const Vector& v, double u) {
  const double norm = v.norm();
  if (norm > u) return ((norm - u) / norm) * v;
  return Vector::Zero(v.size());
}

/// Column-wise group soft-thresholding in place.
template <typename Derived>
void group_soft_threshold_columns(Eigen::MatrixBase<Derived>& M, double u) {
  for (Index i = 0; i < M.cols(); ++i) {
    const double norm = M.col(i).norm();
    if (norm > u)
      M.col(i) *= (norm - u) / norm;
    else
      M.col(i).setZero();
  }
}

/// Rescaled columns can land one ulp above norm 1; they are nudged inward so
/// that a second projection is the identity.
template <typename Derived>
void project_unit_columns_inplace(Eigen::MatrixBase<Derived>& D) {
  for (Index c = 0; c < D.cols(); ++c) {
    double norm = D.col(c).norm();
    if (!(norm > 1.0)) continue;
    D.col(c) /= norm;
    while ((norm = D.col(c).norm()) > 1.0) D.col(c) *= 1.0 - std::numeric_limits<double>::epsilon();
  }
}

/// Projects every column onto the unit ball.
inline Matrix project_unit_columns(const Matrix& D) {
  Matrix out = D;
  project_unit_columns_inplace(out);
  return out;
}

/// Sum of column norms (the l2,1 norm) of every coefficient block.
inline double group_l21(const Coefficients& C) {
  double total = 0.0;
  for (Index j = 0; j < C.k; ++j)
    for (Index i = 0; i < C.n(); ++i) total += C.group_norm(j, i);
  return total;
}

namespace detail {

inline void check_shapes(const Matrix& X, const Dictionary& D, const Coefficients& C) {
  if (X.rows() != D.m()) throw Error(ErrorCode::ShapeMismatch, "data rows differ from dictionary rows");
  if (C.k != D.k || C.d != D.d) throw Error(ErrorCode::ShapeMismatch, "dictionary and codes disagree on k or d");
  if (C.n() != X.cols()) throw Error(ErrorCode::ShapeMismatch, "codes and data disagree on n");
}

}  // namespace detail

/// 1/2 ||M .* (X - DC)||_F^2 + lambda * sum_j ||C_j||_{2,1}. `mask` may be null.
inline double objective(const Matrix& X, const Matrix* mask, const Dictionary& D, const Coefficients& C,
                        double lambda) {
  detail::check_shapes(X, D, C);
  if (mask && (mask->rows() != X.rows() || mask->cols() != X.cols()))
    throw Error(ErrorCode::ShapeMismatch, "mask shape differs from data shape");
  Matrix residual = X;
  residual.noalias() -= D.atoms * C.codes;
  const double fit = mask ? residual.cwiseProduct(*mask).squaredNorm() : residual.squaredNorm();
  return 0.5 * fit + lambda * group_l21(C);
}

inline double objective(const DataMatrix& X, const Dictionary& D, const Coefficients& C, double lambda) {
  return objective(X.values, X.mask ? &*X.mask : nullptr, D, C, lambda);
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration (two products per iteration) with Rayleigh-quotient estimates.
/// The start vector is a fixed pseudo-random draw, so the result is
/// deterministic.
inline double largest_eigenvalue(const Matrix& gram, int max_iters = 1000, double rel_tol = 1e-6) {
  if (gram.size() == 0) return 0.0;
  Rng rng(0x5eed5eedULL);
  Vector v(gram.rows());
  for (Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.5 * rng.uniform();
  v.normalize();
  double estimate = 0.0;
  Vector w(gram.rows());
  Vector w2(gram.rows());
  for (int it = 0; it < max_iters; ++it) {
    w.noalias() = gram * v;
    estimate = v.dot(w);
    // Stop on a small eigen-residual; a stalled Rayleigh quotient alone is
    // not enough when the top two eigenvalues are close.
    if ((w - estimate * v).norm() <= rel_tol * std::abs(estimate)) break;
    // Each iteration advances by gram^2, squaring the convergence ratio.
    w2.noalias() = gram * w;
    const double wn = w2.norm();
    if (!(wn > kZeroNorm)) return 0.0;
    v = w2 / wn;
  }
  return std::max(estimate, 0.0);
}

/// Largest singular value, via power iteration on the smaller Gram matrix.
inline double spectral_norm(const Matrix& A, int max_iters = 1000, double rel_tol = 1e-6) {
  if (A.size() == 0) return 0.0;
  const Matrix gram = A.rows() <= A.cols() ? Matrix(A * A.transpose()) : Matrix(A.transpose() * A);
  return std::sqrt(largest_eigenvalue(gram, max_iters, rel_tol));
}

enum class RidgeMode { PerBlock, Joint };

/// Regularized least-squares codes (D^T D + ridge I)^{-1} D^T X, either per
/// block (k independent d x d systems) or jointly (one kd x kd system).
inline Coefficients ridge_codes(const Matrix& X, const Dictionary& D, double ridge, RidgeMode mode) {
  if (X.rows() != D.m()) throw Error(ErrorCode::ShapeMismatch, "data rows differ from dictionary rows");
  if (!(ridge > 0.0)) throw Error(ErrorCode::InvalidParams, "ridge must be positive");
  Matrix codes(D.k * D.d, X.cols());
  if (mode == RidgeMode::Joint) {
    Matrix gram = D.atoms.transpose() * D.atoms;
    gram.diagonal().array() += ridge;
    codes = gram.llt().solve(D.atoms.transpose() * X);
  } else {
    for (Index j = 0; j < D.k; ++j) {
      const auto block = D.block(j);
      Matrix gram = block.transpose() * block;
      gram.diagonal().array() += ridge;
      codes.middleRows(j * D.d, D.d) = gram.llt().solve(block.transpose() * X);
    }
  }
  return Coefficients(std::move(codes), D.k, D.d);
}

/// Midpoint of the interval that guarantees single-group support, evaluated
/// at the initial dictionary: (max_i s_second(i) + min_i s_best(i)) / 2 where
/// s_j(i) = ||D_j^T x_i||.
inline double estimate_lambda(const Matrix& X, const Dictionary& D0) {
  if (D0.k < 2) throw Error(ErrorCode::NeedTwoBlocks, "lambda estimation needs at least two blocks");
  if (X.rows() != D0.m()) throw Error(ErrorCode::ShapeMismatch, "data rows differ from dictionary rows");
  const Matrix proj = D0.atoms.transpose() * X;
  double max_second = -std::numeric_limits<double>::infinity();
  double min_best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < X.cols(); ++i) {
    double best = -1.0, second = -1.0;
    for (Index j = 0; j < D0.k; ++j) {
      const double s = proj.col(i).segment(j * D0.d, D0.d).norm();
      if (s > best) {
        second = best;
        best = s;
      } else if (s > second) {
        second = s;
      }
    }
    max_second = std::max(max_second, second);
    min_best = std::min(min_best, best);
  }
  return 0.5 * (max_second + min_best);
}

/// Labels by unique group support, or nullopt with the first offending column.
inline std::optional<Labels> try_assign_by_support(const Coefficients& C, Index* offending = nullptr) {
  Labels labels(static_cast<std::size_t>(C.n()));
  for (Index i = 0; i < C.n(); ++i) {
    const auto support = C.group_support(i, kSupportThreshold);
    if (support.size() != 1) {
      if (offending) *offending = i;
      return std::nullopt;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(support.front()) + 1;
  }
  return labels;
}

inline Labels assign_by_support(const Coefficients& C) {
  Index bad = 0;
  if (auto labels = try_assign_by_support(C, &bad)) return *labels;
  throw Error(ErrorCode::AmbiguousSupport, "column " + std::to_string(bad) + " lacks a unique nonzero group", bad);
}

inline constexpr Index kColumnChunk = 1024;

/// k x n matrix of squared reconstruction errors ||x_i - D_j c_ij||^2 under
/// per-block ridge codes.
inline Matrix block_residuals(const Matrix& X, const Dictionary& D, double ridge) {
  const Coefficients C = ridge_codes(X, D, ridge, RidgeMode::PerBlock);
  Matrix out(D.k, X.cols());
  for (Index j = 0; j < D.k; ++j) {
    const Matrix recon = X - D.block(j) * C.block(j);
    out.row(j) = recon.colwise().squaredNorm();
  }
  return out;
}

/// Assigns each column to the block with the least ridge reconstruction
/// error; ties go to the lower block index. Columns are processed in chunks,
/// so working memory does not grow with n beyond the labels.
inline Labels assign_by_residual(const Matrix& X, const Dictionary& D, double ridge) {
  if (X.rows() != D.m()) throw Error(ErrorCode::ShapeMismatch, "data rows differ from dictionary rows");
  Labels labels(static_cast<std::size_t>(X.cols()));
  for (Index start = 0; start < X.cols(); start += kColumnChunk) {
    const Index width = std::min(kColumnChunk, X.cols() - start);
    const Matrix res = block_residuals(X.middleCols(start, width), D, ridge);
    for (Index i = 0; i < width; ++i) {
      Index best = 0;
      for (Index j = 1; j < D.k; ++j)
        if (res(j, i) < res(best, i)) best = j;
      labels[static_cast<std::size_t>(start + i)] = static_cast<int>(best) + 1;
    }
  }
  return labels;
}

}  // namespace kfsc

#endif  // KFSC_CORE_HPP
