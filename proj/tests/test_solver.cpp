#include "kfsc/eval.hpp"
#include "kfsc/solver.hpp"
#include "kfsc/synth.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

using namespace kfsc;

namespace {

HyperParams scalar_params(double lambda) {
  HyperParams p;
  p.k = 1;
  p.d = 1;
  p.lambda = lambda;
  return p;
}

Matrix col(std::initializer_list<double> v) {
  Matrix out(static_cast<Index>(v.size()), 1);
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

void expect_nonincreasing(const std::vector<double>& trace, double initial) {
  double prev = initial;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    EXPECT_LE(trace[t], prev + 1e-8 * std::abs(prev)) << "iteration " << t + 1;
    prev = trace[t];
  }
}

// Gauss-Seidel sweep written out directly: all tau first, then eta, extrapolated start,
// block-by-block prox-gradient against a freshly recomputed reconstruction.
Matrix reference_gauss_seidel(const Matrix& X, const Dictionary& D, const Matrix& C_prev, const Matrix& delta,
                              const std::vector<double>& tau_prev, double lambda, double dlt, bool extrapolate) {
  std::vector<double> tau(static_cast<std::size_t>(D.k));
  for (Index j = 0; j < D.k; ++j) {
    const double s = oracle::dense_spectral_norm(D.block(j));
    tau[static_cast<std::size_t>(j)] = s * s;
  }
  Matrix C = C_prev;
  if (extrapolate)
    for (Index j = 0; j < D.k; ++j)
      C.middleRows(j * D.d, D.d) -=
          dlt * std::sqrt(tau_prev[static_cast<std::size_t>(j)] / tau[static_cast<std::size_t>(j)]) *
          delta.middleRows(j * D.d, D.d);
  for (Index j = 0; j < D.k; ++j) {
    const Matrix G = -D.block(j).transpose() * (X - D.atoms * C);
    const double t = tau[static_cast<std::size_t>(j)];
    Matrix next = C.middleRows(j * D.d, D.d) - G / t;
    for (Index i = 0; i < next.cols(); ++i) {
      const double nrm = next.col(i).norm();
      next.col(i) = nrm > lambda / t ? Vector((nrm - lambda / t) / nrm * next.col(i)) : Vector::Zero(D.d);
    }
    C.middleRows(j * D.d, D.d) = next;
  }
  return C;
}

}  // namespace

TEST(GaussSeidel, ScalarProxStep) {
  const Dictionary D(col({1, 0}), 1, 1);
  const Coefficients C0(Matrix::Zero(1, 1), 1, 1);
  auto [C, state] = update_C_gauss_seidel(col({1, 0}), D, C0, SolverState{}, scalar_params(0.5));
  EXPECT_DOUBLE_EQ(C.codes(0, 0), 0.5);
  EXPECT_EQ(state.iter, 1);
  EXPECT_DOUBLE_EQ(state.coeff_delta(0, 0), -0.5);
  ASSERT_EQ(state.tau_prev.size(), 1u);
  EXPECT_NEAR(state.tau_prev[0], 1.0, 1e-12);

  auto [C2, state2] = update_C_gauss_seidel(col({1, 0}), D, C0, SolverState{}, scalar_params(2.0));
  EXPECT_EQ(C2.codes(0, 0), 0.0);
}

TEST(GaussSeidel, FixedPointAtZeroLambdaExactFit) {
  Rng rng(1);
  const Dictionary D(rng.normal_matrix(6, 6), 3, 2);
  const Coefficients C(rng.normal_matrix(6, 10), 3, 2);
  const Matrix X = D.atoms * C.codes;
  HyperParams p;
  p.k = 3;
  p.d = 2;
  p.lambda = 1e-300;
  auto [next, state] = update_C_gauss_seidel(X, D, C, SolverState{}, p);
  EXPECT_LT(oracle::relative_error(next.codes, C.codes), 1e-12);
}

TEST(GaussSeidel, MatchesDirectAlgorithmWithExtrapolation) {
  Rng rng(2);
  const Index k = 3, d = 2;
  const Dictionary D(project_unit_columns(rng.normal_matrix(5, k * d)), k, d);
  const Matrix X = rng.normal_matrix(5, 12);
  const Matrix C_prev = rng.normal_matrix(k * d, 12);
  SolverState state;
  state.iter = 2;
  state.coeff_delta = 0.1 * rng.normal_matrix(k * d, 12);
  state.tau_prev = {0.8, 1.3, 0.9};
  HyperParams p;
  p.k = k;
  p.d = d;
  p.lambda = 0.2;
  p.monotone_restart = false;
  const Matrix expected = reference_gauss_seidel(X, D, C_prev, state.coeff_delta, state.tau_prev, 0.2, 0.95, true);
  auto [C, next] = update_C_gauss_seidel(X, D, Coefficients(C_prev, k, d), state, p);
  EXPECT_LT(oracle::relative_error(C.codes, expected), 1e-9);
  EXPECT_EQ(next.iter, 3);
  EXPECT_LT(oracle::relative_error(next.coeff_delta, C_prev - C.codes), 1e-15);
}

TEST(GaussSeidel, NoExtrapolationDuringFirstTwoIterations) {
  Rng rng(3);
  const Dictionary D(project_unit_columns(rng.normal_matrix(5, 4)), 2, 2);
  const Matrix X = rng.normal_matrix(5, 7);
  const Coefficients C(rng.normal_matrix(4, 7), 2, 2);
  SolverState state;
  state.iter = 1;
  state.coeff_delta = rng.normal_matrix(4, 7);
  state.tau_prev = {0.5, 0.5};
  HyperParams p;
  p.k = 2;
  p.d = 2;
  p.lambda = 0.1;
  const Matrix expected = reference_gauss_seidel(X, D, C.codes, state.coeff_delta, state.tau_prev, 0.1, 0.95, false);
  auto [out, next] = update_C_gauss_seidel(X, D, C, state, p);
  EXPECT_LT(oracle::relative_error(out.codes, expected), 1e-9);
  EXPECT_EQ(next.iter, 2);
}

TEST(GaussSeidel, DegenerateBlockIsFlooredAndLogged) {
  Matrix atoms = Matrix::Zero(3, 2);
  atoms(0, 0) = 1.0;
  const Dictionary D(atoms, 2, 1);
  HyperParams p;
  p.k = 2;
  p.d = 1;
  p.lambda = 0.1;
  auto [C, state] = update_C_gauss_seidel(Matrix::Ones(3, 2), D, Coefficients(Matrix::Zero(2, 2), 2, 1), {}, p);
  ASSERT_EQ(state.warnings.size(), 1u);
  EXPECT_EQ(state.warnings[0].rfind("DegenerateBlock(2)", 0), 0u);
  EXPECT_TRUE(C.codes.allFinite());
  EXPECT_EQ(C.codes(1, 0), 0.0);
}

TEST(Jacobi, ScalarProxStepMatchesGaussSeidel) {
  const Dictionary D(col({1, 0}), 1, 1);
  const Coefficients C0(Matrix::Zero(1, 1), 1, 1);
  EXPECT_DOUBLE_EQ(update_C_jacobi(col({1, 0}), D, C0, scalar_params(0.5)).codes(0, 0), 0.5);
}

TEST(Jacobi, SingleBlockEqualsGaussSeidelWithoutExtrapolation) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Dictionary D(project_unit_columns(rng.normal_matrix(6, 3)), 1, 3);
    const Matrix X = rng.normal_matrix(6, 9);
    const Coefficients C(rng.normal_matrix(3, 9), 1, 3);
    HyperParams p;
    p.k = 1;
    p.d = 3;
    p.lambda = 0.3;
    p.delta = 0.0;
    const Coefficients jac = update_C_jacobi(X, D, C, p);
    auto [gs, state] = update_C_gauss_seidel(X, D, C, SolverState{}, p);
    EXPECT_LT(oracle::relative_error(gs.codes, jac.codes), 1e-12);
  }
}

TEST(Jacobi, BlockPermutationPermutesOutput) {
  Rng rng(5);
  const Index k = 3, d = 2;
  const Dictionary D(rng.normal_matrix(5, k * d), k, d);
  const Matrix X = rng.normal_matrix(5, 8);
  const Coefficients C(rng.normal_matrix(k * d, 8), k, d);
  HyperParams p;
  p.k = k;
  p.d = d;
  p.lambda = 0.4;
  const std::vector<Index> perm{1, 2, 0};
  Matrix atoms(5, k * d), codes(k * d, 8);
  for (Index j = 0; j < k; ++j) {
    atoms.middleCols(j * d, d) = D.block(perm[static_cast<std::size_t>(j)]);
    codes.middleRows(j * d, d) = C.block(perm[static_cast<std::size_t>(j)]);
  }
  const Coefficients base = update_C_jacobi(X, D, C, p);
  const Coefficients moved = update_C_jacobi(X, Dictionary(atoms, k, d), Coefficients(codes, k, d), p);
  for (Index j = 0; j < k; ++j)
    EXPECT_LT(oracle::relative_error(moved.block(j), base.block(perm[static_cast<std::size_t>(j)])), 1e-12);
}

TEST(Jacobi, FixedPointAtZeroLambdaExactFit) {
  Rng rng(6);
  const Dictionary D(rng.normal_matrix(6, 4), 2, 2);
  const Coefficients C(rng.normal_matrix(4, 5), 2, 2);
  HyperParams p;
  p.k = 2;
  p.d = 2;
  p.lambda = 1e-300;
  EXPECT_LT(oracle::relative_error(update_C_jacobi(D.atoms * C.codes, D, C, p).codes, C.codes), 1e-12);
}

TEST(CoefficientSolvers, SameSupportAtConvergence) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Dictionary D(project_unit_columns(rng.normal_matrix(8, 4)), 2, 2);
    const Matrix X = normalize_columns(DataMatrix(rng.normal_matrix(8, 10))).values;
    HyperParams p;
    p.k = 2;
    p.d = 2;
    p.lambda = 0.3;
    p.delta = 0.0;
    Coefficients gs(Matrix::Zero(4, 10), 2, 2), jac = gs;
    SolverState state;
    for (int it = 0; it < 5000; ++it) {
      auto [next, s] = update_C_gauss_seidel(X, D, gs, std::move(state), p);
      gs = std::move(next);
      state = std::move(s);
      jac = update_C_jacobi(X, D, jac, p);
    }
    for (Index i = 0; i < 10; ++i)
      EXPECT_EQ(gs.group_support(i, 1e-8), jac.group_support(i, 1e-8)) << "trial " << trial << " column " << i;
  }
}

TEST(UpdateD, ScalarStepThenProjection) {
  const Dictionary out = update_D_pgd(Matrix::Constant(1, 1, 2.0), Coefficients(Matrix::Ones(1, 1), 1, 1),
                                      Dictionary(Matrix::Zero(1, 1), 1, 1), 1);
  EXPECT_DOUBLE_EQ(out.atoms(0, 0), 1.0);
}

TEST(UpdateD, FixedPointAndSkipRule) {
  Rng rng(8);
  const Dictionary D(project_unit_columns(rng.normal_matrix(5, 4)), 2, 2);
  const Coefficients C(rng.normal_matrix(4, 9), 2, 2);
  EXPECT_LT(oracle::relative_error(update_D_pgd(D.atoms * C.codes, C, D, 5).atoms, D.atoms), 1e-12);
  const Dictionary skipped = update_D_pgd(rng.normal_matrix(5, 9), Coefficients(Matrix::Zero(4, 9), 2, 2), D, 5);
  EXPECT_EQ(skipped.atoms, D.atoms);
}

TEST(UpdateD, DescentAndFeasibilityOverInnerSteps) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Dictionary D0(project_unit_columns(rng.normal_matrix(6, 6)), 3, 2);
    const Coefficients C(rng.normal_matrix(6, 15), 3, 2);
    const Matrix X = rng.normal_matrix(6, 15);
    double prev = 0.5 * (X - D0.atoms * C.codes).squaredNorm();
    Dictionary D = D0;
    for (int step = 0; step < 8; ++step) {
      D = update_D_pgd(X, C, D, 1);
      const double f = 0.5 * (X - D.atoms * C.codes).squaredNorm();
      EXPECT_LE(f, prev + 1e-10);
      EXPECT_LE(D.max_column_excess(), 1e-12);
      prev = f;
    }
  }
}

TEST(MaskedGradients, MatchFiniteDifferences) {
  Rng rng(10);
  const Index m = 5, n = 7, k = 2, d = 2;
  const Matrix X = rng.normal_matrix(m, n);
  Matrix M(m, n);
  for (Index i = 0; i < M.size(); ++i) M.data()[i] = rng.uniform() < 0.3 ? 0.0 : 1.0;
  const Dictionary D(rng.normal_matrix(m, k * d), k, d);
  const Coefficients C(rng.normal_matrix(k * d, n), k, d);
  auto smooth = [&](const Matrix& atoms, const Matrix& codes) {
    return 0.5 * (X - atoms * codes).cwiseProduct(M).squaredNorm();
  };
  const Matrix gc = oracle::central_difference([&](const Matrix& c) { return smooth(D.atoms, c); }, C.codes, 1e-6);
  const Matrix gd = oracle::central_difference([&](const Matrix& a) { return smooth(a, C.codes); }, D.atoms, 1e-6);
  EXPECT_LT(oracle::relative_error(smooth_gradient_C(X, &M, D, C), gc), 1e-7);
  EXPECT_LT(oracle::relative_error(smooth_gradient_D(X, &M, D, C), gd), 1e-7);
}

TEST(Fit, TwoAxisToyRecoveredWithEstimatedLambda) {
  Rng rng(11);
  Matrix X(4, 8);
  for (Index i = 0; i < 8; ++i) {
    X.col(i) = Vector::Unit(4, i < 4 ? 0 : 1);
    X.col(i) += 1e-3 * Vector(rng.normal_matrix(4, 1));
  }
  HyperParams p;
  p.k = 2;
  p.d = 1;
  p.init = KMeansInit{3, 10, 100, std::nullopt};
  const FitResult r = fit(DataMatrix(X), p);
  const Labels truth{1, 1, 1, 1, 2, 2, 2, 2};
  EXPECT_EQ(oracle::brute_force_acc(r.labels, truth), 1.0);
  EXPECT_GT(r.lambda, 0.0);
}

TEST(Fit, SingleClusterLabelsAreAllOne) {
  Rng rng(12);
  HyperParams p;
  p.k = 1;
  p.d = 2;
  p.lambda = 0.1;
  const FitResult r = fit(DataMatrix(rng.normal_matrix(5, 20)), p);
  EXPECT_EQ(r.labels, Labels(20, 1));
}

TEST(Fit, TracesAreMonotoneAndAligned) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.noise_level = 0.3;
    const SynthData data = generate(cfg);
    for (auto solver : {CSolver::GaussSeidel, CSolver::Jacobi}) {
      HyperParams p;
      p.k = 5;
      p.d = 10;
      p.lambda = 0.3;
      p.c_solver = solver;
      p.init = KMeansInit{seed, 3, 100, std::nullopt};
      const FitResult r = fit(data.data, p);
      expect_nonincreasing(r.state.objective_trace, r.state.initial_objective);
      EXPECT_EQ(r.state.objective_trace.size(), static_cast<std::size_t>(r.state.iter));
      EXPECT_EQ(r.state.rel_change_trace.size(), r.state.objective_trace.size());
      EXPECT_EQ(r.seconds_per_iter.size(), r.state.objective_trace.size());
      EXPECT_LE(r.dictionary.max_column_excess(), 1e-12);
      EXPECT_EQ(r.labels.size(), 250u);
      for (int l : r.labels) EXPECT_TRUE(l >= 1 && l <= 5);
    }
  }
}

TEST(Fit, ObjectiveTraceMatchesRecomputation) {
  SynthConfig cfg;
  cfg.seed = 9;
  const SynthData data = generate(cfg);
  HyperParams p;
  p.k = 5;
  p.d = 10;
  p.lambda = 0.3;
  p.max_iters = 7;
  const FitResult r = fit(data.data, p);
  const Matrix Xn = normalize_columns(data.data).values;
  EXPECT_NEAR(r.state.objective_trace.back(),
              oracle::loop_objective(Xn, Matrix::Ones(25, 250), r.dictionary.atoms, r.codes.codes, 5, 10, 0.3),
              1e-9 * r.state.objective_trace.back());
}

TEST(Fit, RejectsInvalidParameters) {
  const DataMatrix X(Matrix::Identity(3, 3));
  for (auto mutate : std::vector<std::function<void(HyperParams&)>>{
           [](HyperParams& p) { p.delta = 1.0; }, [](HyperParams& p) { p.gamma = 0.5; },
           [](HyperParams& p) { p.k = 0; }, [](HyperParams& p) { p.lambda = -1.0; }}) {
    HyperParams p;
    p.k = 2;
    p.d = 1;
    mutate(p);
    try {
      fit(X, p);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidParams);
    }
  }
}

TEST(Fit, PropagatesZeroColumnAndWarnsOnFewSamples) {
  Matrix X = Matrix::Identity(3, 3);
  X.col(2).setZero();
  HyperParams p;
  p.k = 2;
  p.d = 1;
  p.lambda = 0.1;
  try {
    fit(DataMatrix(X), p);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroColumn);
  }
  p.d = 2;
  const FitResult r = fit(DataMatrix(Matrix::Identity(3, 3)), p);
  EXPECT_TRUE(std::any_of(r.state.warnings.begin(), r.state.warnings.end(),
                          [](const std::string& w) { return w.rfind("n < k*d", 0) == 0; }));
}
