#pragma once

// Hierarchical OT between a batch of target embeddings and the classes of a
// labeled source bank. Each source class is first matched to the batch by a
// low-level entropic plan; the resulting transport costs form the cost of a
// high-level plan between batch samples and classes.

#include "affakt/ot_core.hpp"

#include "json.hpp"

#include <cstdint>
#include <vector>

namespace affakt {

/// Softmax-linear classifier settings used to score source samples.
struct ImportanceOptions {
  double l2 = 1e-3;
  double learning_rate = 0.1;
  int iterations = 500;
  /// Converged when the max-abs gradient entry falls below this, or when the
  /// last step changed the loss by less than 1e-9 relative.
  double gradient_tol = 1e-2;
};

struct ImportanceResult {
  std::vector<DiscreteDistribution> weights;
  bool converged = false;
  /// Set when the classifier diverged and the weights fell back to uniform.
  bool fell_back_to_uniform = false;
  int iterations = 0;
  double final_loss = 0.0;
  double final_gradient = 0.0;
};

/// Per-sample importance within each class: the classifier's probability of
/// the sample's own class, renormalized within the class. Features are
/// standardized per dimension before training. Needs at least two classes.
ImportanceResult class_importance(const std::vector<Matrix>& blocks,
                                  const ImportanceOptions& options = {});

struct SourceClass {
  Matrix features;  // J_k x d
  DiscreteDistribution importance;
  Vector mean;
};

struct BankOptions {
  /// Per-class subsample cap; 0 keeps every sample.
  std::size_t cap_per_class = 256;
  std::uint64_t seed = 0;
  ImportanceOptions importance{};
};

/// Immutable per-class source features with importance weights and means.
class SourceClassBank {
 public:
  /// Takes explicit importance weights (checkpoint restore, tests).
  SourceClassBank(std::vector<Matrix> blocks, std::vector<DiscreteDistribution> importance);

  /// Subsamples each block to the cap, then fits class_importance once.
  static SourceClassBank build(std::vector<Matrix> blocks, const BankOptions& options = {});

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t total_samples() const noexcept;
  const SourceClass& cls(std::size_t k) const { return classes_.at(k); }
  const std::vector<SourceClass>& classes() const noexcept { return classes_; }
  /// L_s x d matrix of class means.
  const Matrix& means() const noexcept { return means_; }
  bool importance_fell_back() const noexcept { return importance_fell_back_; }

  /// Bank with classes reordered: class k of the result is class order[k].
  SourceClassBank permuted(const std::vector<std::size_t>& order) const;

 private:
  SourceClassBank() = default;
  void finish();

  std::vector<SourceClass> classes_;
  Matrix means_;
  std::size_t dim_ = 0;
  bool importance_fell_back_ = false;
};

enum class CostMode {
  /// Column k holds the single scalar <T^k, M^k> for every row.
  kBroadcast,
  /// Row i of column k holds n * sum_j T^k_ij M^k_ij.
  kPerRow,
};

struct HotOptions {
  SinkhornOptions sinkhorn{0.1, 100000, 1e-6};
  CostMode cost_mode = CostMode::kPerRow;
};

struct LowLevelPlan {
  TransportPlan plan;
  CostMatrix cost;
};

/// Entropic plan between the batch (uniform) and one class (importance).
LowLevelPlan low_level_ot(const Matrix& batch, const SourceClass& cls,
                          const SinkhornOptions& options = {});

/// n x L_s high-level cost from the per-class low-level plans.
CostMatrix aggregate_cost(const std::vector<LowLevelPlan>& low, CostMode mode = CostMode::kPerRow);

/// Entropic plan with row sums 1/n and column sums 1/L_s. Solved to tol/n so
/// that the row-normalized plan n*T also meets `tol`.
TransportPlan high_level_ot(const CostMatrix& cost, const SinkhornOptions& options = {});

struct HotResult {
  TransportPlan plan;
  CostMatrix cost;
  std::vector<LowLevelPlan> low;
};

/// low_level_ot for every class, aggregate_cost, then high_level_ot.
HotResult hotkt(const Matrix& batch, const SourceClassBank& bank, const HotOptions& options = {});

/// One trace record: aggregate costs, row sums of T and std of each row.
nlohmann::json hot_trace_record(const HotResult& result);

}  // namespace affakt
