#ifndef KFSC_VARIANTS_HPP
#define KFSC_VARIANTS_HPP

#include "kfsc/core.hpp"
#include "kfsc/init.hpp"
#include "kfsc/rng.hpp"
#include "kfsc/solver.hpp"
#include "kfsc/types.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kfsc {

struct MiniBatchParams {
  Index batch_size = 50;
  /// Gauss-Seidel sweeps per batch.
  int c_passes = 10;
  /// Projected-gradient steps on D per batch.
  int d_steps = 10;
  /// Passes over the data.
  int epochs = 5;
  /// Shuffle the batch partition every epoch with this seed; sequential if unset.
  std::optional<std::uint64_t> shuffle_seed;
  /// Called after every batch with (epoch, batch column indices, D, batch codes).
  std::function<void(int, const std::vector<Index>&, const Dictionary&, const Coefficients&)> on_batch;

  void validate(Index n) const {
    if (batch_size < 1 || batch_size > n) throw Error(ErrorCode::InvalidParams, "batch_size must lie in [1, n]");
    if (c_passes < 1 || d_steps < 1 || epochs < 1)
      throw Error(ErrorCode::InvalidParams, "c_passes, d_steps and epochs must be positive");
  }
};

struct LandmarkParams {
  Index landmark_count = 500;
  int kmeans_reps = 10;
  int kmeans_iters = 100;
  std::uint64_t seed = 0;
};

struct RobustParams {
  double noise_weight = 0.08;
  NoiseNorm noise_norm = NoiseNorm::ElementwiseL1;
};

struct RobustFit {
  FitResult result;
  /// Sparse-noise estimate, in the column-normalized scale the model is fit in.
  Matrix noise;
};

struct MissingFit {
  FitResult result;
  /// Observed entries of X as given; missing entries from DC rescaled to each
  /// column's observed norm.
  Matrix imputed;
};

namespace detail {

inline Matrix gather_columns(const Matrix& X, const std::vector<Index>& idx) {
  Matrix out(X.rows(), static_cast<Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Index>(c)) = X.col(idx[c]);
  return out;
}

inline void scatter_columns(Matrix& into, const Matrix& from, const std::vector<Index>& idx) {
  for (std::size_t c = 0; c < idx.size(); ++c) into.col(idx[c]) = from.col(static_cast<Index>(c));
}

inline DataMatrix prepare(const DataMatrix& X, HyperParams& params, FitResult& result) {
  check_fit_inputs(X, params, result);
  return normalize_columns(X);
}

}  // namespace detail

/// Mini-batch fitting: every batch gets T_C Gauss-Seidel sweeps (extrapolation
/// history reset per batch) and T_D projected-gradient steps on D from that
/// batch alone. Codes are warm-started across epochs. Labels come from
/// per-block ridge codes over all of X and the least-residual rule.
/// One trace entry per epoch: the summed batch objectives.
inline FitResult fit_minibatch(const DataMatrix& X, HyperParams params, const MiniBatchParams& mb) {
  using clock = std::chrono::steady_clock;
  FitResult result;
  DataMatrix Xn = detail::prepare(X, params, result);
  Xn.mask.reset();
  const Index n = Xn.cols();
  mb.validate(n);

  Dictionary D = initial_dictionary(Xn.values, params);
  if (!params.lambda) params.lambda = estimate_lambda(Xn.values, D);
  const double lambda = *params.lambda;

  Matrix codes_all(params.k * params.d, n);
  std::optional<Rng> shuffler;
  if (mb.shuffle_seed) shuffler.emplace(*mb.shuffle_seed);
  std::vector<Index> order(static_cast<std::size_t>(n));

  SolverState& trace = result.state;
  trace.initial_objective = std::numeric_limits<double>::quiet_NaN();
  double last_epoch_rel_c = 0.0;
  for (int epoch = 0; epoch < mb.epochs; ++epoch) {
    const auto started = clock::now();
    if (shuffler) {
      const auto perm = shuffler->permutation(static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < perm.size(); ++i) order[i] = static_cast<Index>(perm[i]);
    } else {
      for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    }
    const Dictionary D_epoch_start = D;
    double objective_sum = 0.0, delta_sq = 0.0, base_sq = 0.0;
    for (Index start = 0; start < n; start += mb.batch_size) {
      const Index width = std::min(mb.batch_size, n - start);
      const std::vector<Index> idx(order.begin() + start, order.begin() + start + width);
      const Matrix Xb = detail::gather_columns(Xn.values, idx);
      Coefficients Cb = epoch == 0 ? ridge_codes(Xb, D, params.ridge_small, RidgeMode::Joint)
                                   : Coefficients(detail::gather_columns(codes_all, idx), D.k, D.d);
      const double batch_base = Cb.codes.squaredNorm();
      const Matrix batch_start = Cb.codes;
      SolverState state;
      for (int pass = 0; pass < mb.c_passes; ++pass) {
        auto [next, next_state] = update_C_gauss_seidel(Xb, D, Cb, std::move(state), params);
        Cb = std::move(next);
        state = std::move(next_state);
      }
      trace.restarts += state.restarts;
      trace.warnings.insert(trace.warnings.end(), state.warnings.begin(), state.warnings.end());
      D = update_D_pgd(Xb, Cb, D, mb.d_steps);
      detail::scatter_columns(codes_all, Cb.codes, idx);
      objective_sum += objective(Xb, nullptr, D, Cb, lambda);
      delta_sq += (batch_start - Cb.codes).squaredNorm();
      base_sq += batch_base;
      if (mb.on_batch) mb.on_batch(epoch, idx, D, Cb);
    }
    trace.iter = epoch + 1;
    trace.objective_trace.push_back(objective_sum);
    last_epoch_rel_c = detail::relative_change(std::sqrt(delta_sq), std::sqrt(base_sq));
    trace.rel_change_trace.emplace_back(
        last_epoch_rel_c,
        detail::relative_change((D.atoms - D_epoch_start.atoms).norm(), D_epoch_start.atoms.norm()));
    result.seconds_per_iter.push_back(std::chrono::duration<double>(clock::now() - started).count());
  }

  {
    // Stability diagnostic: one more full-data sweep from the final codes.
    const Coefficients C_full(codes_all, D.k, D.d);
    HyperParams plain = params;
    plain.delta = 0.0;
    auto [swept, sweep_state] = update_C_gauss_seidel(Xn.values, D, C_full, SolverState{}, plain);
    const double rel = detail::relative_change(sweep_state.coeff_delta.norm(), C_full.codes.norm());
    trace.warnings.push_back("stability: full-data sweep relative change " + std::to_string(rel) +
                             " vs last epoch " + std::to_string(last_epoch_rel_c));
  }

  result.lambda = lambda;
  result.codes = ridge_codes(Xn.values, D, params.ridge_small, RidgeMode::PerBlock);
  result.labels = assign_by_residual(Xn.values, D, params.ridge_small);
  result.label_rule = "residual";
  result.peak_elements = static_cast<std::size_t>(Xn.values.size() + 2 * codes_all.size() +
                                                  4 * D.atoms.size() + mb.batch_size * (2 * D.m() + 4 * D.k * D.d));
  result.dictionary = std::move(D);
  return result;
}

/// Landmark fitting for large n: spherical k-means with s centers, the batch
/// fit on those (unit-normalized) centers, then every sample labeled by the
/// least ridge reconstruction error under the learned dictionary.
inline FitResult fit_landmark(const DataMatrix& X, HyperParams params, const LandmarkParams& lm) {
  FitResult pre;
  DataMatrix Xn = detail::prepare(X, params, pre);
  Xn.mask.reset();
  const Index n = Xn.cols();
  if (lm.landmark_count < params.k || lm.landmark_count > n)
    throw Error(ErrorCode::InvalidParams, "landmark_count must lie in [k, n]");

  const KMeansResult km = spherical_kmeans(Xn.values, lm.landmark_count, lm.kmeans_reps, lm.kmeans_iters, lm.seed);
  DataMatrix landmarks = normalize_columns(DataMatrix(km.centers));

  FitResult result = fit(landmarks, params);
  result.state.warnings.insert(result.state.warnings.begin(), pre.state.warnings.begin(), pre.state.warnings.end());
  const std::size_t inner_peak = result.peak_elements;
  result.codes = ridge_codes(Xn.values, result.dictionary, params.ridge_small, RidgeMode::PerBlock);
  result.labels = assign_by_residual(Xn.values, result.dictionary, params.ridge_small);
  result.label_rule = "residual";
  const auto kd = static_cast<std::size_t>(params.k * params.d);
  // Inner fit on s columns, the landmark matrix, the final codes, and one
  // chunk of residual work.
  result.peak_elements = inner_peak + static_cast<std::size_t>(landmarks.values.size()) +
                         kd * static_cast<std::size_t>(n) +
                         static_cast<std::size_t>(kColumnChunk) * (kd + 2 * static_cast<std::size_t>(Xn.rows()));
  return result;
}

/// Sparse-noise robust model: alternates the C sweep and D update on X - E
/// with the exact proximal update of E (elementwise or column-wise
/// soft-threshold of X - DC at the noise weight).
inline RobustFit fit_robust_sparse(const DataMatrix& X, HyperParams params, const RobustParams& rp) {
  if (!(rp.noise_weight > 0.0)) throw Error(ErrorCode::InvalidParams, "noise_weight must be positive");
  RobustFit out;
  FitResult& result = out.result;
  DataMatrix Xn = detail::prepare(X, params, result);
  Xn.mask.reset();

  Dictionary D0 = initial_dictionary(Xn.values, params);
  if (!params.lambda) params.lambda = estimate_lambda(Xn.values, D0);
  Coefficients C0 = ridge_codes(Xn.values, D0, params.ridge_small, RidgeMode::Joint);

  auto run = detail::alternate(Xn.values, nullptr, std::move(D0), std::move(C0), params,
                               detail::NoiseModel{rp.noise_weight, rp.noise_norm});
  auto warnings = std::move(result.state.warnings);
  result.state = std::move(run.state);
  result.state.warnings.insert(result.state.warnings.begin(), warnings.begin(), warnings.end());
  result.seconds_per_iter = std::move(run.seconds);
  result.peak_elements = run.peak_elements;
  result.lambda = *params.lambda;
  const Matrix cleaned = Xn.values - run.E;
  std::tie(result.labels, result.label_rule) = detail::label_columns(run.C, cleaned, run.D, params.ridge_small);
  result.dictionary = std::move(run.D);
  result.codes = std::move(run.C);
  out.noise = std::move(run.E);
  return out;
}

/// Missing-data model: residuals and gradients are restricted to observed
/// entries; missing entries are imputed from DC. An all-ones (or absent) mask
/// reduces exactly to `fit`.
inline MissingFit fit_missing(const DataMatrix& X, HyperParams params) {
  MissingFit out;
  FitResult& result = out.result;
  detail::check_fit_inputs(X, params, result);
  const bool all_observed = !X.mask || (X.mask->array() == 1.0).all();
  if (all_observed) {
    DataMatrix plain(X.values);
    auto warnings = std::move(result.state.warnings);
    result = fit(plain, params);
    result.state.warnings.insert(result.state.warnings.begin(), warnings.begin(), warnings.end());
    result.state.warnings.push_back("mask all-ones, reduces to batch");
    out.imputed = X.values;
    return out;
  }

  const DataMatrix Xn = normalize_columns(X);
  const Matrix& mask = *Xn.mask;
  Dictionary D0 = initial_dictionary(Xn.values, params);
  if (!params.lambda) params.lambda = estimate_lambda(Xn.values, D0);
  Coefficients C0 = ridge_codes(Xn.values, D0, params.ridge_small, RidgeMode::Joint);

  auto run = detail::alternate(Xn.values, &mask, std::move(D0), std::move(C0), params);
  auto warnings = std::move(result.state.warnings);
  result.state = std::move(run.state);
  result.state.warnings.insert(result.state.warnings.begin(), warnings.begin(), warnings.end());
  result.seconds_per_iter = std::move(run.seconds);
  result.peak_elements = run.peak_elements;
  result.lambda = *params.lambda;

  const Matrix recon = run.D.atoms * run.C.codes;
  const Matrix unobserved = Matrix::Ones(mask.rows(), mask.cols()) - mask;
  const Matrix completed = Xn.values.cwiseProduct(mask) + recon.cwiseProduct(unobserved);
  std::tie(result.labels, result.label_rule) = detail::label_columns(run.C, completed, run.D, params.ridge_small);

  const Vector scale = X.values.cwiseProduct(*X.mask).colwise().norm().transpose();
  out.imputed = X.values.cwiseProduct(*X.mask) + (recon * scale.asDiagonal()).cwiseProduct(unobserved);
  result.dictionary = std::move(run.D);
  result.codes = std::move(run.C);
  return out;
}

}  // namespace kfsc

#endif  // KFSC_VARIANTS_HPP
