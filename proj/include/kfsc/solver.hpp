#ifndef KFSC_SOLVER_HPP
#define KFSC_SOLVER_HPP

#include "kfsc/core.hpp"
#include "kfsc/init.hpp"
#include "kfsc/types.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kfsc {

/// ||A||_2^2 from the smaller Gram matrix of A.
template <typename Derived>
double squared_spectral_norm(const Eigen::MatrixBase<Derived>& A) {
  if (A.size() == 0) return 0.0;
  const Matrix gram = A.rows() <= A.cols() ? Matrix(A * A.transpose()) : Matrix(A.transpose() * A);
  return largest_eigenvalue(gram);
}

/// Gradient of 1/2 ||M .* (X - DC)||_F^2 with respect to C: -D^T (M .* (X - DC)).
inline Matrix smooth_gradient_C(const Matrix& X, const Matrix* mask, const Dictionary& D, const Coefficients& C) {
  Matrix residual = X;
  residual.noalias() -= D.atoms * C.codes;
  if (mask) residual.array() *= mask->array();
  return -(D.atoms.transpose() * residual);
}

/// Gradient of 1/2 ||M .* (X - DC)||_F^2 with respect to D: -(M .* (X - DC)) C^T.
inline Matrix smooth_gradient_D(const Matrix& X, const Matrix* mask, const Dictionary& D, const Coefficients& C) {
  Matrix residual = X;
  residual.noalias() -= D.atoms * C.codes;
  if (mask) residual.array() *= mask->array();
  return -(residual * C.codes.transpose());
}

namespace detail {

inline double resolved_lambda(const HyperParams& params) {
  if (!params.lambda) throw Error(ErrorCode::InvalidParams, "lambda must be set before running a solver step");
  return *params.lambda;
}

inline double floored_tau(double tau, Index block, std::vector<std::string>* warnings) {
  if (tau >= kTauFloor) return tau;
  if (warnings)
    warnings->push_back("DegenerateBlock(" + std::to_string(block + 1) + "): step constant floored at 1e-12");
  return kTauFloor;
}

// One Gauss-Seidel pass from the (possibly extrapolated) point `start`.
// Leaves D * result in `recon`.
inline Matrix gauss_seidel_pass(const Matrix& X, const Matrix* mask, const Dictionary& D, const Matrix& start,
                                const std::vector<double>& tau, double lambda, Matrix& recon) {
  Matrix codes = start;
  recon.noalias() = D.atoms * start;
  Matrix residual(X.rows(), X.cols());
  Matrix step(D.d, X.cols());
  for (Index j = 0; j < D.k; ++j) {
    const auto block = D.block(j);
    const double t = tau[static_cast<std::size_t>(j)];
    residual = X - recon;
    if (mask) residual.array() *= mask->array();
    auto cj = codes.middleRows(j * D.d, D.d);
    step = cj;
    step.noalias() += (1.0 / t) * (block.transpose() * residual);
    group_soft_threshold_columns(step, lambda / t);
    recon.noalias() += block * (step - cj);
    cj = step;
  }
  return codes;
}

inline double smooth_part(const Matrix& X, const Matrix* mask, const Matrix& recon) {
  if (mask) return 0.5 * (X - recon).cwiseProduct(*mask).squaredNorm();
  return 0.5 * (X - recon).squaredNorm();
}

}  // namespace detail

/// One block-coordinate sweep over the k coefficient blocks with
/// extrapolation. Step constants tau_j = gamma ||D_j||_2^2 are computed for
/// every block before the extrapolation weights delta * sqrt(tau_prev/tau),
/// which are zero for the first two outer iterations. When
/// `params.monotone_restart` is set and the extrapolated sweep does not
/// decrease the objective, the sweep is repeated from C_prev without
/// extrapolation.
inline std::pair<Coefficients, SolverState> update_C_gauss_seidel(const Matrix& X, const Dictionary& D,
                                                                  const Coefficients& C_prev, SolverState state,
                                                                  const HyperParams& params,
                                                                  const Matrix* mask = nullptr) {
  detail::check_shapes(X, D, C_prev);
  const double lambda = detail::resolved_lambda(params);
  const int t = state.iter + 1;
  const Index k = D.k;

  std::vector<double> tau(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j)
    tau[static_cast<std::size_t>(j)] =
        detail::floored_tau(params.gamma * squared_spectral_norm(D.block(j)), j, &state.warnings);

  const bool have_history = t > 2 && state.tau_prev.size() == tau.size() &&
                            state.coeff_delta.rows() == C_prev.codes.rows() &&
                            state.coeff_delta.cols() == C_prev.codes.cols();
  Matrix start = C_prev.codes;
  bool extrapolated = false;
  if (have_history && params.delta > 0.0) {
    for (Index j = 0; j < k; ++j) {
      const double eta =
          params.delta * std::sqrt(state.tau_prev[static_cast<std::size_t>(j)] / tau[static_cast<std::size_t>(j)]);
      start.middleRows(j * D.d, D.d) -= eta * state.coeff_delta.middleRows(j * D.d, D.d);
    }
    extrapolated = true;
  }

  Matrix recon(X.rows(), X.cols());
  Matrix codes = detail::gauss_seidel_pass(X, mask, D, start, tau, lambda, recon);

  if (extrapolated && params.monotone_restart) {
    const Coefficients trial(codes, D.k, D.d);
    const double f_new = detail::smooth_part(X, mask, recon) + lambda * group_l21(trial);
    const double f_old = objective(X, mask, D, C_prev, lambda);
    if (f_new > f_old) {
      codes = detail::gauss_seidel_pass(X, mask, D, C_prev.codes, tau, lambda, recon);
      ++state.restarts;
    }
  }

  state.coeff_delta = C_prev.codes - codes;
  state.tau_prev = std::move(tau);
  state.iter = t;
  return {Coefficients(std::move(codes), D.k, D.d), std::move(state)};
}

/// Simultaneous proximal-gradient step on all blocks from one full gradient
/// and a single step constant tau = gamma ||D||_2^2.
inline Coefficients update_C_jacobi(const Matrix& X, const Dictionary& D, const Coefficients& C_prev,
                                    const HyperParams& params, const Matrix* mask = nullptr,
                                    std::vector<std::string>* warnings = nullptr) {
  detail::check_shapes(X, D, C_prev);
  const double lambda = detail::resolved_lambda(params);
  const double tau = detail::floored_tau(params.gamma * squared_spectral_norm(D.atoms), -1, warnings);
  const Matrix gradient = smooth_gradient_C(X, mask, D, C_prev);
  Matrix codes = C_prev.codes - gradient / tau;
  for (Index j = 0; j < D.k; ++j) {
    auto block = codes.middleRows(j * D.d, D.d);
    group_soft_threshold_columns(block, lambda / tau);
  }
  return Coefficients(std::move(codes), D.k, D.d);
}

/// `steps` projected-gradient steps on 1/2 ||M .* (X - DC)||_F^2 over the
/// unit-ball constraint set with step 1/||CC^T||_2. Returns D_prev when
/// ||CC^T||_2 < 1e-12.
inline Dictionary update_D_pgd(const Matrix& X, const Coefficients& C, const Dictionary& D_prev, int steps,
                               const Matrix* mask = nullptr) {
  detail::check_shapes(X, D_prev, C);
  if (steps < 1) throw Error(ErrorCode::InvalidParams, "steps must be positive");
  const Matrix B = C.codes * C.codes.transpose();
  const double kappa = largest_eigenvalue(B);
  if (kappa < kTauFloor) return D_prev;

  Dictionary D = D_prev;
  if (!mask) {
    const Matrix A = X * C.codes.transpose();
    Matrix gradient(D.atoms.rows(), D.atoms.cols());
    for (int u = 0; u < steps; ++u) {
      gradient = -A;
      gradient.noalias() += D.atoms * B;
      D.atoms -= gradient / kappa;
      project_unit_columns_inplace(D.atoms);
    }
  } else {
    for (int u = 0; u < steps; ++u) {
      D.atoms -= smooth_gradient_D(X, mask, D, C) / kappa;
      project_unit_columns_inplace(D.atoms);
    }
  }
  return D;
}

namespace detail {

struct NoiseModel {
  double weight = 1.0;
  NoiseNorm norm = NoiseNorm::ElementwiseL1;
};

inline void shrink_noise(Matrix& E, const NoiseModel& noise) {
  if (noise.norm == NoiseNorm::ElementwiseL1) {
    E = E.unaryExpr([w = noise.weight](double v) {
      const double a = std::abs(v) - w;
      return a > 0.0 ? std::copysign(a, v) : 0.0;
    });
  } else {
    group_soft_threshold_columns(E, noise.weight);
  }
}

inline double noise_penalty(const Matrix& E, const NoiseModel& noise) {
  if (noise.norm == NoiseNorm::ElementwiseL1) return noise.weight * E.cwiseAbs().sum();
  return noise.weight * E.colwise().norm().sum();
}

inline double relative_change(double diff, double base) {
  if (diff < kZeroNorm && base < kZeroNorm) return 0.0;
  return diff / base;
}

struct AlternationResult {
  Coefficients C;
  Dictionary D;
  SolverState state;
  std::vector<double> seconds;
  Matrix E;
  std::size_t peak_elements = 0;
};

// Outer loop shared by the batch, robust and masked models: C sweep, D
// update, then (robust only) the exact E update, until the relative-change
// rule or max_iters.
inline AlternationResult alternate(const Matrix& X, const Matrix* mask, Dictionary D, Coefficients C,
                                   const HyperParams& params, const std::optional<NoiseModel>& noise = std::nullopt) {
  using clock = std::chrono::steady_clock;
  const double lambda = resolved_lambda(params);
  AlternationResult out;
  SolverState state;

  Matrix E;
  Matrix cleaned;
  if (noise) {
    E = Matrix::Zero(X.rows(), X.cols());
    cleaned = X;
  }
  const Matrix& target_ref = noise ? cleaned : X;
  auto total_objective = [&](const Matrix& target, const Dictionary& dict, const Coefficients& codes) {
    double f = objective(target, mask, dict, codes, lambda);
    if (noise) f += noise_penalty(E, *noise);
    return f;
  };
  state.initial_objective = total_objective(target_ref, D, C);

  for (int t = 1; t <= params.max_iters; ++t) {
    const auto started = clock::now();
    const Matrix& target = noise ? cleaned : X;
    Coefficients C_next;
    if (params.c_solver == CSolver::GaussSeidel) {
      auto [codes, next_state] = update_C_gauss_seidel(target, D, C, std::move(state), params, mask);
      C_next = std::move(codes);
      state = std::move(next_state);
    } else {
      C_next = update_C_jacobi(target, D, C, params, mask, &state.warnings);
      state.coeff_delta = C.codes - C_next.codes;
      state.iter = t;
    }
    Dictionary D_next = update_D_pgd(target, C_next, D, params.inner_d_steps, mask);
    if (noise) {
      E = X;
      E.noalias() -= D_next.atoms * C_next.codes;
      shrink_noise(E, *noise);
      cleaned = X - E;
    }
    const double f = total_objective(noise ? cleaned : X, D_next, C_next);
    const double rel_c = relative_change(state.coeff_delta.norm(), C.codes.norm());
    const double rel_d = relative_change((D.atoms - D_next.atoms).norm(), D.atoms.norm());
    C = std::move(C_next);
    D = std::move(D_next);
    state.objective_trace.push_back(f);
    state.rel_change_trace.emplace_back(rel_c, rel_d);
    out.seconds.push_back(std::chrono::duration<double>(clock::now() - started).count());
    if (std::max(rel_c, rel_d) <= params.tol) break;
  }

  const auto mn = static_cast<std::size_t>(X.size());
  const auto kdn = static_cast<std::size_t>(C.codes.size());
  const auto mkd = static_cast<std::size_t>(D.atoms.size());
  const auto kd2 = static_cast<std::size_t>(C.codes.rows() * C.codes.rows());
  // X, mask, E and X - E; C, C_next, delta and the extrapolated start; the
  // reconstruction and residual; D, D_next, gradient, A and B.
  out.peak_elements = mn * (1 + (mask ? 1 : 0) + (noise ? 2 : 0)) + 4 * kdn + 2 * mn + 4 * mkd + kd2;
  out.C = std::move(C);
  out.D = std::move(D);
  out.state = std::move(state);
  out.E = std::move(E);
  return out;
}

inline std::pair<Labels, std::string> label_columns(const Coefficients& C, const Matrix& X, const Dictionary& D,
                                                    double ridge) {
  if (auto labels = try_assign_by_support(C)) return {std::move(*labels), "support"};
  return {assign_by_residual(X, D, ridge), "residual"};
}

inline void check_fit_inputs(const DataMatrix& X, const HyperParams& params, FitResult& result) {
  params.validate();
  X.validate();
  if (params.k > X.cols()) throw Error(ErrorCode::InvalidParams, "k exceeds the number of samples");
  if (X.cols() < params.k * params.d)
    result.state.warnings.push_back("n < k*d: fewer samples than dictionary atoms");
}

}  // namespace detail

/// Batch k-factorization subspace clustering: normalize, initialize D,
/// ridge-initialize C, alternate the C sweep and the projected-gradient D
/// update, then label by unique group support or, failing that, by the
/// least ridge reconstruction error. A mask on X is treated as zero-filling.
inline FitResult fit(const DataMatrix& X, HyperParams params) {
  FitResult result;
  detail::check_fit_inputs(X, params, result);
  DataMatrix Xn = normalize_columns(X);
  Xn.mask.reset();

  Dictionary D0 = initial_dictionary(Xn.values, params);
  if (!params.lambda) params.lambda = estimate_lambda(Xn.values, D0);
  Coefficients C0 = ridge_codes(Xn.values, D0, params.ridge_small, RidgeMode::Joint);

  auto run = detail::alternate(Xn.values, nullptr, std::move(D0), std::move(C0), params);
  auto warnings = std::move(result.state.warnings);
  result.state = std::move(run.state);
  result.state.warnings.insert(result.state.warnings.begin(), warnings.begin(), warnings.end());
  result.seconds_per_iter = std::move(run.seconds);
  result.peak_elements = run.peak_elements;
  result.lambda = *params.lambda;
  std::tie(result.labels, result.label_rule) =
      detail::label_columns(run.C, Xn.values, run.D, params.ridge_small);
  result.dictionary = std::move(run.D);
  result.codes = std::move(run.C);
  return result;
}

}  // namespace kfsc

#endif  // KFSC_SOLVER_HPP
