#pragma once

// Discrete optimal transport primitives: cosine cost matrices, a log-domain
// Sinkhorn solver, an exact transportation-simplex solver for small
// instances, and the debiased Sinkhorn divergence built on top of them.

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace affakt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Probability vector: nonnegative weights summing to 1 (within 1e-9).
class DiscreteDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Validates the weights; throws InvariantError on negative/non-finite
  /// entries, an empty vector, or a total outside 1 +- kSumTolerance.
  explicit DiscreteDistribution(Vector weights);

  static DiscreteDistribution uniform(std::size_t size);

  const Vector& weights() const noexcept { return weights_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(weights_.size()); }
  double operator[](std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }

 private:
  Vector weights_;
};

/// Nonnegative finite n x m transport cost matrix.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix entries);

  const Matrix& entries() const noexcept { return entries_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(entries_.cols()); }
  double operator()(std::size_t i, std::size_t j) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

 private:
  Matrix entries_;
};

/// Coupling between two distributions. Construction does not re-check the
/// marginals; use max_marginal_violation() for that.
class TransportPlan {
 public:
  TransportPlan(Matrix entries, DiscreteDistribution row_marginal,
                DiscreteDistribution col_marginal);

  const Matrix& entries() const noexcept { return entries_; }
  const DiscreteDistribution& row_marginal() const noexcept { return row_marginal_; }
  const DiscreteDistribution& col_marginal() const noexcept { return col_marginal_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(entries_.cols()); }

  /// max over rows and columns of |achieved sum - prescribed weight|.
  double max_marginal_violation() const;
  /// Frobenius inner product <T, M>.
  double cost(const CostMatrix& cost) const;

 private:
  Matrix entries_;
  DiscreteDistribution row_marginal_;
  DiscreteDistribution col_marginal_;
};

struct SinkhornOptions {
  double epsilon = 0.1;
  int max_iters = 1000;
  double tol = 1e-6;
};

struct SinkhornResult {
  TransportPlan plan;
  int iterations = 0;
  double violation = 0.0;
};

/// Row-pairwise cosine distance 1 - cos(A_i, B_j). Entries are clamped to
/// [0, 2] to absorb rounding. Throws ZeroNormError naming the first
/// zero-norm row of either operand.
CostMatrix cosine_cost(const Matrix& a, const Matrix& b);

/// Entropic OT, min <T,M> - eps H(T) over couplings of (p, q), solved by
/// log-domain Sinkhorn. Convergence is declared on the max marginal
/// violation. Throws ConvergenceError when the budget runs out and
/// NumericalError if a potential turns non-finite.
SinkhornResult sinkhorn_solve(const DiscreteDistribution& p, const DiscreteDistribution& q,
                              const CostMatrix& cost, const SinkhornOptions& options = {});

inline TransportPlan sinkhorn(const DiscreteDistribution& p, const DiscreteDistribution& q,
                              const CostMatrix& cost, const SinkhornOptions& options = {}) {
  return sinkhorn_solve(p, q, cost, options).plan;
}

struct ExactOtResult {
  TransportPlan plan;
  double cost = 0.0;
};

/// Largest |p| * |q| accepted by exact_ot.
inline constexpr std::size_t kExactOtCellCap = 4096;

/// Unregularized OT by the transportation simplex: northwest-corner start,
/// MODI (u-v) pricing, Bland's rule for entering and leaving cells.
/// Returns a vertex-optimal plan. Throws SizeLimitError above the cap.
ExactOtResult exact_ot(const DiscreteDistribution& p, const DiscreteDistribution& q,
                       const CostMatrix& cost);

struct DivergenceOptions {
  /// Solve each ds_OT term with Sinkhorn instead of the exact solver.
  bool entropic = false;
  SinkhornOptions sinkhorn{};
};

/// Plans used by the three ds_OT terms, kept for gradient computation.
struct DivergenceTerms {
  double value = 0.0;
  double cross = 0.0;   // ds(a, b)
  double self_a = 0.0;  // ds(a, a)
  double self_b = 0.0;  // ds(b, b)
  Matrix plan_cross;
  Matrix plan_self_a;
  Matrix plan_self_b;
};

/// ds(a,b) - ds(a,a)/2 - ds(b,b)/2 with ds the OT cost under cosine distance.
DivergenceTerms sinkhorn_divergence_terms(const Matrix& xa, const DiscreteDistribution& wa,
                                          const Matrix& xb, const DiscreteDistribution& wb,
                                          const DivergenceOptions& options = {});

inline double sinkhorn_divergence(const Matrix& xa, const DiscreteDistribution& wa,
                                  const Matrix& xb, const DiscreteDistribution& wb,
                                  const DivergenceOptions& options = {}) {
  return sinkhorn_divergence_terms(xa, wa, xb, wb, options).value;
}

/// d<T, M(Xa, Xb)>/dXa with T held fixed and M the cosine cost. `plan` may
/// be any n x m weight matrix (it is not required to be feasible).
Matrix gradient_wrt_features(const Matrix& plan, const Matrix& xa, const Matrix& xb);

inline Matrix gradient_wrt_features(const TransportPlan& plan, const Matrix& xa,
                                    const Matrix& xb) {
  return gradient_wrt_features(plan.entries(), xa, xb);
}

/// Gradient of the divergence with respect to `xa`, plans frozen. The
/// self term contributes through both of its arguments.
Matrix divergence_gradient(const DivergenceTerms& terms, const Matrix& xa, const Matrix& xb);

/// One OT problem in the text format: `n m epsilon`, then n weights, m
/// weights, then n rows of m costs, all whitespace separated.
struct OtInstance {
  DiscreteDistribution p;
  DiscreteDistribution q;
  CostMatrix cost;
  double epsilon;
};

/// Throws FormatError (offset = character position) on malformed text and
/// the usual invariant errors for bad weights or costs.
OtInstance parse_ot_instance(const std::string& text);

}  // namespace affakt
