#ifndef KFSC_TYPES_HPP
#define KFSC_TYPES_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace kfsc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Cluster labels, 1-based (label j means block j).
using Labels = std::vector<int>;

enum class ErrorCode {
  ZeroColumn,
  ShapeMismatch,
  NeedTwoBlocks,
  AmbiguousSupport,
  InvalidParams,
  InvalidConfig,
  EmptyColumnObservation,
  EmptyClusterUnrecoverable,
  LengthMismatch,
  ParseError,
  HeaderMismatch,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroColumn: return "ZeroColumn";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NeedTwoBlocks: return "NeedTwoBlocks";
    case ErrorCode::AmbiguousSupport: return "AmbiguousSupport";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyColumnObservation: return "EmptyColumnObservation";
    case ErrorCode::EmptyClusterUnrecoverable: return "EmptyClusterUnrecoverable";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library. `index()` carries the offending
/// column / line when the error has one; `field()` the 1-based field of a
/// parse error.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::optional<Index> index = std::nullopt,
        std::optional<Index> field = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), index_(index), field_(field) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<Index> index() const noexcept { return index_; }
  std::optional<Index> field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::optional<Index> index_;
  std::optional<Index> field_;
};

/// m x n samples-as-columns data, with an optional 0/1 observation mask.
struct DataMatrix {
  Matrix values;
  std::optional<Matrix> mask;
  bool column_normalized = false;

  DataMatrix() = default;
  explicit DataMatrix(Matrix v) : values(std::move(v)) {}
  DataMatrix(Matrix v, Matrix m) : values(std::move(v)), mask(std::move(m)) {}

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  bool has_mask() const { return mask.has_value(); }

  void validate() const {
    if (values.rows() < 1 || values.cols() < 1)
      throw Error(ErrorCode::ShapeMismatch, "data matrix must be at least 1x1");
    if (mask) {
      if (mask->rows() != values.rows() || mask->cols() != values.cols())
        throw Error(ErrorCode::ShapeMismatch, "mask shape differs from data shape");
      for (Index i = 0; i < mask->size(); ++i) {
        const double v = mask->data()[i];
        if (v != 0.0 && v != 1.0) throw Error(ErrorCode::ShapeMismatch, "mask entries must be 0 or 1");
      }
    }
  }
};

/// k blocks of m x d columns stored side by side in one m x (k*d) matrix.
/// Block j occupies columns [j*d, (j+1)*d).
struct Dictionary {
  Matrix atoms;
  Index k = 0;
  Index d = 0;

  Dictionary() = default;
  Dictionary(Matrix a, Index k_, Index d_) : atoms(std::move(a)), k(k_), d(d_) {
    if (atoms.cols() != k * d) throw Error(ErrorCode::ShapeMismatch, "dictionary width must equal k*d");
  }

  Index m() const { return atoms.rows(); }
  auto block(Index j) { return atoms.middleCols(j * d, d); }
  auto block(Index j) const { return atoms.middleCols(j * d, d); }

  /// Largest column norm minus one; <= 1e-12 means the dictionary is feasible.
  double max_column_excess() const {
    double worst = -1.0;
    for (Index c = 0; c < atoms.cols(); ++c) worst = std::max(worst, atoms.col(c).norm() - 1.0);
    return worst;
  }
};

/// k blocks of d x n codes stacked vertically in one (k*d) x n matrix.
struct Coefficients {
  Matrix codes;
  Index k = 0;
  Index d = 0;

  Coefficients() = default;
  Coefficients(Matrix c, Index k_, Index d_) : codes(std::move(c)), k(k_), d(d_) {
    if (codes.rows() != k * d) throw Error(ErrorCode::ShapeMismatch, "code height must equal k*d");
  }

  Index n() const { return codes.cols(); }
  auto block(Index j) { return codes.middleRows(j * d, d); }
  auto block(Index j) const { return codes.middleRows(j * d, d); }

  /// Euclidean norm of block j restricted to column i.
  double group_norm(Index j, Index i) const { return codes.col(i).segment(j * d, d).norm(); }

  /// Blocks whose group norm at column i exceeds `threshold` (0-based).
  std::vector<Index> group_support(Index i, double threshold = 1e-10) const {
    std::vector<Index> support;
    for (Index j = 0; j < k; ++j)
      if (group_norm(j, i) > threshold) support.push_back(j);
    return support;
  }
};

enum class CSolver { GaussSeidel, Jacobi };

/// Penalty on the sparse-noise matrix E: sum |E_ij| or sum of column norms.
enum class NoiseNorm { ElementwiseL1, ColumnwiseL21 };

struct RandomInit {
  std::uint64_t seed = 0;
};

struct KMeansInit {
  std::uint64_t seed = 0;
  int reps = 10;
  int max_iters = 100;
  /// Run k-means on a uniformly drawn subset of this many columns.
  std::optional<Index> subset;
};

struct HyperParams {
  Index k = 2;
  Index d = 1;
  /// Group-sparsity weight. Unset means "estimate from the initial dictionary".
  std::optional<double> lambda;
  int max_iters = 200;
  double delta = 0.95;
  double gamma = 1.0;
  int inner_d_steps = 5;
  double tol = 1e-4;
  double ridge_small = 1e-5;
  CSolver c_solver = CSolver::GaussSeidel;
  std::variant<RandomInit, KMeansInit> init = KMeansInit{};
  /// Re-run a Gauss-Seidel sweep without extrapolation when the
  /// extrapolated sweep failed to decrease the objective.
  bool monotone_restart = true;

  void validate() const {
    if (k < 1) throw Error(ErrorCode::InvalidParams, "k must be positive");
    if (d < 1) throw Error(ErrorCode::InvalidParams, "d must be positive");
    if (lambda && !(*lambda > 0.0)) throw Error(ErrorCode::InvalidParams, "lambda must be positive");
    if (max_iters < 1) throw Error(ErrorCode::InvalidParams, "max_iters must be positive");
    if (!(delta >= 0.0 && delta < 1.0)) throw Error(ErrorCode::InvalidParams, "delta must lie in [0,1)");
    if (!(gamma >= 1.0)) throw Error(ErrorCode::InvalidParams, "gamma must be >= 1");
    if (inner_d_steps < 1) throw Error(ErrorCode::InvalidParams, "inner_d_steps must be positive");
    if (!(tol > 0.0)) throw Error(ErrorCode::InvalidParams, "tol must be positive");
    if (!(ridge_small > 0.0)) throw Error(ErrorCode::InvalidParams, "ridge_small must be positive");
  }
};

struct SolverState {
  int iter = 0;
  /// C_{t-1} - C_t from the last coefficient sweep.
  Matrix coeff_delta;
  /// tau_{j,t-1} per block from the last Gauss-Seidel sweep (empty before the first).
  std::vector<double> tau_prev;
  double initial_objective = 0.0;
  std::vector<double> objective_trace;
  std::vector<std::pair<double, double>> rel_change_trace;
  /// Sweeps where the extrapolated step was discarded.
  int restarts = 0;
  std::vector<std::string> warnings;
};

struct FitResult {
  Labels labels;
  Dictionary dictionary;
  Coefficients codes;
  SolverState state;
  std::vector<double> seconds_per_iter;
  double lambda = 0.0;
  /// How labels were produced: "support" or "residual".
  std::string label_rule;
  /// Elements held by the solver's largest simultaneous set of work buffers.
  std::size_t peak_elements = 0;
};

}  // namespace kfsc

#endif  // KFSC_TYPES_HPP
