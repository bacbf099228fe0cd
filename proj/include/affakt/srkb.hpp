#pragma once

// Correlation prototype bank: a target-class x source-class matrix B that is
// momentum-updated from training plans and blended into test plans.

#include "affakt/ot_core.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace affakt {

enum class ScaleMode {
  /// B rows live on the simplex; updates and blends use n * T_i.
  kNormalized,
  /// B is mixed with the raw plan rows (rows of T sum to 1/n).
  kRaw,
};

struct ReweightResult {
  Matrix plan;                        // n x L_s
  Vector sigma;                       // per-row blend weight
  std::vector<std::size_t> assigned;  // nearest prototype row per sample
};

class CorrelationPrototype {
 public:
  CorrelationPrototype() = default;
  /// B starts at 1/L_s everywhere.
  CorrelationPrototype(std::size_t target_classes, std::size_t source_classes, double alpha, double nu,
                       ScaleMode mode = ScaleMode::kNormalized);

  const Matrix& B() const noexcept { return b_; }
  double alpha() const noexcept { return alpha_; }
  double nu() const noexcept { return nu_; }
  ScaleMode scale_mode() const noexcept { return mode_; }
  std::size_t target_classes() const noexcept { return static_cast<std::size_t>(b_.rows()); }
  std::size_t source_classes() const noexcept { return static_cast<std::size_t>(b_.cols()); }

  void set_nu(double nu);
  /// Replaces the std-based blend weight with a constant (ablation).
  void set_fixed_sigma(std::optional<double> sigma);
  const std::optional<double>& fixed_sigma() const noexcept { return fixed_sigma_; }

  /// B_l <- alpha B_l + (1 - alpha) mean_{i: y_i = l} n T_i; classes absent
  /// from the batch are left untouched.
  void momentum_update(const Matrix& plan, const std::vector<int>& labels);

  /// argmin_l ||row - B_l||_2, lowest index on ties. `row` must already be
  /// in the prototype's scale.
  std::size_t nearest_row(const Eigen::RowVectorXd& row) const;

  /// Blend of each plan row with its nearest prototype row, returned at the
  /// plan's own row scale (rows sum to 1/n).
  ReweightResult reweight(const Matrix& plan) const;

  /// |B_a - B_b| per source class, largest first (stable on ties).
  std::vector<std::pair<std::size_t, double>> diff(std::size_t a = 0, std::size_t b = 1) const;

  nlohmann::json to_json() const;
  static CorrelationPrototype from_json(const nlohmann::json& j);

 private:
  Eigen::RowVectorXd scaled_row(const Matrix& plan, Eigen::Index i) const;

  Matrix b_;
  double alpha_ = 0.95;
  double nu_ = 0.1;
  ScaleMode mode_ = ScaleMode::kNormalized;
  std::optional<double> fixed_sigma_;
};

/// Population standard deviation of a row (divisor = length).
double row_std(const Eigen::RowVectorXd& row);

std::string to_string(ScaleMode mode);
ScaleMode scale_mode_from_string(const std::string& text);

}  // namespace affakt
