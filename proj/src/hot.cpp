#include "affakt/hot.hpp"

#include "affakt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace affakt {

namespace {

// Row-wise softmax in place.
void softmax_rows(Matrix& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - top).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

std::vector<DiscreteDistribution> uniform_weights(const std::vector<Matrix>& blocks) {
  std::vector<DiscreteDistribution> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(DiscreteDistribution::uniform(static_cast<std::size_t>(b.rows())));
  return out;
}

}  // namespace

ImportanceResult class_importance(const std::vector<Matrix>& blocks,
                                  const ImportanceOptions& options) {
  if (blocks.size() < 2) throw InvariantError("class_importance: needs at least two classes");
  const Eigen::Index d = blocks.front().cols();
  Eigen::Index total = 0;
  for (const auto& b : blocks) {
    if (b.rows() < 1) throw InvariantError("class_importance: empty class block");
    if (b.cols() != d) throw DimensionError("class_importance: class blocks differ in width");
    total += b.rows();
  }
  const auto classes = static_cast<Eigen::Index>(blocks.size());

  Matrix x(total, d);
  std::vector<Eigen::Index> label(static_cast<std::size_t>(total));
  Eigen::Index offset = 0;
  for (Eigen::Index k = 0; k < classes; ++k) {
    const Matrix& b = blocks[static_cast<std::size_t>(k)];
    x.middleRows(offset, b.rows()) = b;
    for (Eigen::Index j = 0; j < b.rows(); ++j) label[static_cast<std::size_t>(offset + j)] = k;
    offset += b.rows();
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::RowVectorXd sd = (x.array().square().colwise().sum() / static_cast<double>(total)).sqrt();
  for (Eigen::Index c = 0; c < d; ++c)
    if (!(sd(c) > 1e-12)) sd(c) = 1.0;
  x = x.array().rowwise() / sd.array();

  Matrix onehot = Matrix::Zero(total, classes);
  for (Eigen::Index i = 0; i < total; ++i) onehot(i, label[static_cast<std::size_t>(i)]) = 1.0;

  Matrix w = Matrix::Zero(d, classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(classes);
  Matrix prob;
  ImportanceResult result;
  double previous_loss = std::numeric_limits<double>::infinity();
  const double inv_total = 1.0 / static_cast<double>(total);

  auto loss_and_probs = [&]() {
    prob = (x * w).rowwise() + b;
    softmax_rows(prob);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < total; ++i)
      loss -= std::log(std::max(prob(i, label[static_cast<std::size_t>(i)]), 1e-300));
    return loss * inv_total + 0.5 * options.l2 * w.squaredNorm();
  };

  double loss = loss_and_probs();
  for (int it = 0; it < options.iterations; ++it) {
    const Matrix residual = (prob - onehot) * inv_total;
    const Matrix grad_w = x.transpose() * residual + options.l2 * w;
    const Eigen::RowVectorXd grad_b = residual.colwise().sum();
    result.final_gradient = std::max(grad_w.cwiseAbs().maxCoeff(), grad_b.cwiseAbs().maxCoeff());
    result.iterations = it;
    if (result.final_gradient < options.gradient_tol) {
      result.converged = true;
      break;
    }
    w -= options.learning_rate * grad_w;
    b -= options.learning_rate * grad_b;
    previous_loss = loss;
    loss = loss_and_probs();
    result.iterations = it + 1;
    if (!std::isfinite(loss)) break;
    if (std::abs(previous_loss - loss) <= 1e-9 * std::max(1.0, std::abs(loss))) {
      result.converged = true;
      break;
    }
  }
  result.final_loss = loss;
  if (!result.converged && result.iterations >= options.iterations && std::isfinite(loss)) {
    // Budget exhausted: judge by the gradient at the last iterate.
    const Matrix residual = (prob - onehot) * inv_total;
    const Matrix grad_w = x.transpose() * residual + options.l2 * w;
    result.final_gradient = std::max(grad_w.cwiseAbs().maxCoeff(),
                                     residual.colwise().sum().cwiseAbs().maxCoeff());
    result.converged = result.final_gradient < options.gradient_tol;
  }

  if (!result.converged) {
    result.fell_back_to_uniform = true;
    result.weights = uniform_weights(blocks);
    return result;
  }

  offset = 0;
  for (Eigen::Index k = 0; k < classes; ++k) {
    const Eigen::Index rows = blocks[static_cast<std::size_t>(k)].rows();
    Vector score = prob.block(offset, k, rows, 1);
    score = score.cwiseMax(std::numeric_limits<double>::min());
    result.weights.emplace_back(score / score.sum());
    offset += rows;
  }
  return result;
}

SourceClassBank::SourceClassBank(std::vector<Matrix> blocks,
                                 std::vector<DiscreteDistribution> importance) {
  if (blocks.empty()) throw InvariantError("source bank must contain at least one class");
  if (blocks.size() != importance.size()) {
    throw DimensionError("source bank: one importance vector per class is required");
  }
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    if (static_cast<std::size_t>(blocks[k].rows()) != importance[k].size()) {
      throw DimensionError("source bank: class " + std::to_string(k) +
                           " importance length does not match its sample count");
    }
    if ((importance[k].weights().array() <= 0.0).any()) {
      throw InvariantError("source bank: importance of class " + std::to_string(k) +
                           " must be strictly positive");
    }
    classes_.push_back(SourceClass{std::move(blocks[k]), std::move(importance[k]), Vector()});
  }
  finish();
}

void SourceClassBank::finish() {
  dim_ = static_cast<std::size_t>(classes_.front().features.cols());
  if (dim_ < 1) throw DimensionError("source bank: zero-width features");
  means_.resize(static_cast<Eigen::Index>(classes_.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 0; k < classes_.size(); ++k) {
    auto& c = classes_[k];
    if (c.features.rows() < 1) throw InvariantError("source bank: class " + std::to_string(k) + " is empty");
    if (static_cast<std::size_t>(c.features.cols()) != dim_) {
      throw DimensionError("source bank: class " + std::to_string(k) + " has a different width");
    }
    c.mean = c.features.colwise().mean().transpose();
    means_.row(static_cast<Eigen::Index>(k)) = c.mean.transpose();
  }
}

SourceClassBank SourceClassBank::build(std::vector<Matrix> blocks, const BankOptions& options) {
  if (blocks.empty()) throw InvariantError("source bank must contain at least one class");
  if (options.cap_per_class > 0) {
    std::mt19937_64 rng(options.seed);
    for (auto& block : blocks) {
      const auto rows = static_cast<std::size_t>(block.rows());
      if (rows <= options.cap_per_class) continue;
      std::vector<Eigen::Index> pick(rows);
      std::iota(pick.begin(), pick.end(), 0);
      std::shuffle(pick.begin(), pick.end(), rng);
      pick.resize(options.cap_per_class);
      std::sort(pick.begin(), pick.end());
      Matrix kept(static_cast<Eigen::Index>(pick.size()), block.cols());
      for (std::size_t r = 0; r < pick.size(); ++r) kept.row(static_cast<Eigen::Index>(r)) = block.row(pick[r]);
      block = std::move(kept);
    }
  }
  std::vector<DiscreteDistribution> importance;
  bool fell_back = false;
  if (blocks.size() >= 2) {
    ImportanceResult fit = class_importance(blocks, options.importance);
    importance = std::move(fit.weights);
    fell_back = fit.fell_back_to_uniform;
  } else {
    importance = uniform_weights(blocks);
  }
  SourceClassBank bank(std::move(blocks), std::move(importance));
  bank.importance_fell_back_ = fell_back;
  return bank;
}

std::size_t SourceClassBank::total_samples() const noexcept {
  std::size_t total = 0;
  for (const auto& c : classes_) total += static_cast<std::size_t>(c.features.rows());
  return total;
}

SourceClassBank SourceClassBank::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != classes_.size()) throw DimensionError("permutation length mismatch");
  SourceClassBank out;
  for (std::size_t k : order) out.classes_.push_back(classes_.at(k));
  out.importance_fell_back_ = importance_fell_back_;
  out.finish();
  return out;
}

LowLevelPlan low_level_ot(const Matrix& batch, const SourceClass& cls,
                          const SinkhornOptions& options) {
  if (batch.cols() != cls.features.cols()) {
    throw DimensionError("low_level_ot: batch width " + std::to_string(batch.cols()) +
                         " differs from class width " + std::to_string(cls.features.cols()));
  }
  CostMatrix cost = cosine_cost(batch, cls.features);
  TransportPlan plan = sinkhorn(DiscreteDistribution::uniform(static_cast<std::size_t>(batch.rows())),
                                cls.importance, cost, options);
  return LowLevelPlan{std::move(plan), std::move(cost)};
}

CostMatrix aggregate_cost(const std::vector<LowLevelPlan>& low, CostMode mode) {
  if (low.empty()) throw DimensionError("aggregate_cost: no classes");
  const Eigen::Index n = low.front().plan.entries().rows();
  Matrix m(n, static_cast<Eigen::Index>(low.size()));
  for (std::size_t k = 0; k < low.size(); ++k) {
    const Matrix& t = low[k].plan.entries();
    if (t.rows() != n) {
      throw DimensionError("aggregate_cost: class " + std::to_string(k) + " plan has " +
                           std::to_string(t.rows()) + " rows, expected " + std::to_string(n));
    }
    const auto col = static_cast<Eigen::Index>(k);
    if (mode == CostMode::kBroadcast) {
      m.col(col).setConstant((t.array() * low[k].cost.entries().array()).sum());
    } else {
      m.col(col) = static_cast<double>(n) * (t.array() * low[k].cost.entries().array()).rowwise().sum();
    }
  }
  return CostMatrix(std::move(m));
}

TransportPlan high_level_ot(const CostMatrix& cost, const SinkhornOptions& options) {
  SinkhornOptions tightened = options;
  tightened.tol = options.tol / static_cast<double>(cost.rows());
  return sinkhorn(DiscreteDistribution::uniform(cost.rows()), DiscreteDistribution::uniform(cost.cols()),
                  cost, tightened);
}

HotResult hotkt(const Matrix& batch, const SourceClassBank& bank, const HotOptions& options) {
  if (batch.rows() < 1) throw DimensionError("hotkt: empty batch");
  std::vector<LowLevelPlan> low;
  low.reserve(bank.num_classes());
  for (const auto& cls : bank.classes()) low.push_back(low_level_ot(batch, cls, options.sinkhorn));
  CostMatrix cost = aggregate_cost(low, options.cost_mode);
  TransportPlan plan = high_level_ot(cost, options.sinkhorn);
  return HotResult{std::move(plan), std::move(cost), std::move(low)};
}

nlohmann::json hot_trace_record(const HotResult& result) {
  const Matrix& t = result.plan.entries();
  const Matrix& m = result.cost.entries();
  nlohmann::json costs = nlohmann::json::array();
  nlohmann::json row_sums = nlohmann::json::array();
  nlohmann::json row_std = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    costs.push_back(std::move(row));
    row_sums.push_back(t.row(i).sum());
    const double mean = t.row(i).mean();
    row_std.push_back(std::sqrt((t.row(i).array() - mean).square().mean()));
  }
  return {{"aggregate_costs", costs}, {"row_sums", row_sums}, {"row_std", row_std}};
}

}  // namespace affakt
