#include "affakt/srkb.hpp"

#include "affakt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace affakt {

std::string to_string(ScaleMode mode) { return mode == ScaleMode::kRaw ? "raw" : "normalized"; }

ScaleMode scale_mode_from_string(const std::string& text) {
  if (text == "normalized") return ScaleMode::kNormalized;
  if (text == "raw") return ScaleMode::kRaw;
  throw ConfigError("unknown scale mode '" + text + "' (expected normalized or raw)");
}

double row_std(const Eigen::RowVectorXd& row) {
  if (row.size() == 0) return 0.0;
  const double mean = row.mean();
  return std::sqrt((row.array() - mean).square().sum() / static_cast<double>(row.size()));
}

CorrelationPrototype::CorrelationPrototype(std::size_t target_classes, std::size_t source_classes, double alpha,
                                           double nu, ScaleMode mode)
    : alpha_(alpha), nu_(nu), mode_(mode) {
  if (target_classes == 0 || source_classes == 0) throw DimensionError("prototype needs positive class counts");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvariantError("alpha must lie in [0, 1]");
  set_nu(nu);
  const auto lt = static_cast<Eigen::Index>(target_classes);
  const auto ls = static_cast<Eigen::Index>(source_classes);
  b_ = Matrix::Constant(lt, ls, 1.0 / static_cast<double>(source_classes));
}

void CorrelationPrototype::set_nu(double nu) {
  if (!(nu >= 0.0) || !std::isfinite(nu)) throw InvariantError("nu must be a finite value >= 0");
  nu_ = nu;
}

void CorrelationPrototype::set_fixed_sigma(std::optional<double> sigma) {
  if (sigma && !(*sigma >= 0.0 && *sigma <= 1.0)) throw InvariantError("fixed sigma must lie in [0, 1]");
  fixed_sigma_ = sigma;
}

Eigen::RowVectorXd CorrelationPrototype::scaled_row(const Matrix& plan, Eigen::Index i) const {
  if (mode_ == ScaleMode::kRaw) return plan.row(i);
  return static_cast<double>(plan.rows()) * plan.row(i);
}

void CorrelationPrototype::momentum_update(const Matrix& plan, const std::vector<int>& labels) {
  if (plan.cols() != b_.cols()) throw DimensionError("momentum_update: plan width does not match prototype");
  if (static_cast<std::size_t>(plan.rows()) != labels.size()) {
    throw DimensionError("momentum_update: one label per plan row required");
  }
  Matrix sums = Matrix::Zero(b_.rows(), b_.cols());
  std::vector<int> counts(static_cast<std::size_t>(b_.rows()), 0);
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= b_.rows()) {
      throw InvariantError("momentum_update: label " + std::to_string(label) + " out of range");
    }
    sums.row(label) += scaled_row(plan, i);
    ++counts[static_cast<std::size_t>(label)];
  }
  for (Eigen::Index l = 0; l < b_.rows(); ++l) {
    const int count = counts[static_cast<std::size_t>(l)];
    if (count == 0) continue;
    b_.row(l) = alpha_ * b_.row(l) + (1.0 - alpha_) * (sums.row(l) / static_cast<double>(count));
  }
}

std::size_t CorrelationPrototype::nearest_row(const Eigen::RowVectorXd& row) const {
  if (row.size() != b_.cols()) throw DimensionError("nearest_row: width does not match prototype");
  std::size_t best = 0;
  double best_dist = (b_.row(0) - row).squaredNorm();
  for (Eigen::Index l = 1; l < b_.rows(); ++l) {
    const double dist = (b_.row(l) - row).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<std::size_t>(l);
    }
  }
  return best;
}

ReweightResult CorrelationPrototype::reweight(const Matrix& plan) const {
  if (plan.cols() != b_.cols()) throw DimensionError("reweight: plan width does not match prototype");
  const Eigen::Index n = plan.rows();
  const double scale = mode_ == ScaleMode::kRaw ? 1.0 : static_cast<double>(n);
  ReweightResult out{Matrix(n, plan.cols()), Vector(n), std::vector<std::size_t>(static_cast<std::size_t>(n))};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd row = scaled_row(plan, i);
    const std::size_t nearest = nearest_row(row);
    double sigma = 0.0;
    if (fixed_sigma_) {
      sigma = *fixed_sigma_;
    } else {
      // std of the raw row, not the scaled one
      const double s = row_std(plan.row(i));
      sigma = s < nu_ ? 0.0 : s - nu_;
    }
    const auto l = static_cast<Eigen::Index>(nearest);
    if (sigma == 0.0) {
      out.plan.row(i) = b_.row(l) / scale;
    } else {
      out.plan.row(i) = (sigma * row + (1.0 - sigma) * b_.row(l)) / scale;
    }
    out.sigma(i) = sigma;
    out.assigned[static_cast<std::size_t>(i)] = nearest;
  }
  return out;
}

std::vector<std::pair<std::size_t, double>> CorrelationPrototype::diff(std::size_t a, std::size_t b) const {
  if (a >= target_classes() || b >= target_classes()) throw DimensionError("diff: row index out of range");
  std::vector<std::pair<std::size_t, double>> rows;
  for (Eigen::Index k = 0; k < b_.cols(); ++k) {
    rows.emplace_back(static_cast<std::size_t>(k),
                      std::abs(b_(static_cast<Eigen::Index>(a), k) - b_(static_cast<Eigen::Index>(b), k)));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  return rows;
}

nlohmann::json CorrelationPrototype::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index l = 0; l < b_.rows(); ++l) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index k = 0; k < b_.cols(); ++k) r.push_back(b_(l, k));
    rows.push_back(std::move(r));
  }
  nlohmann::json j{{"alpha", alpha_}, {"nu", nu_},           {"L_t", b_.rows()},
                   {"L_s", b_.cols()}, {"rows", rows},        {"scale_mode", to_string(mode_)}};
  j["fixed_sigma"] = fixed_sigma_ ? nlohmann::json(*fixed_sigma_) : nlohmann::json(nullptr);
  return j;
}

CorrelationPrototype CorrelationPrototype::from_json(const nlohmann::json& j) {
  try {
    const auto lt = j.at("L_t").get<std::size_t>();
    const auto ls = j.at("L_s").get<std::size_t>();
    ScaleMode mode = ScaleMode::kNormalized;
    if (j.contains("scale_mode")) mode = scale_mode_from_string(j.at("scale_mode").get<std::string>());
    CorrelationPrototype proto(lt, ls, j.at("alpha").get<double>(), j.at("nu").get<double>(), mode);
    const auto& rows = j.at("rows");
    if (rows.size() != lt) throw FormatError("prototype json: expected " + std::to_string(lt) + " rows", 0);
    for (std::size_t l = 0; l < lt; ++l) {
      if (rows[l].size() != ls) throw FormatError("prototype json: row " + std::to_string(l) + " has wrong width", 0);
      for (std::size_t k = 0; k < ls; ++k) {
        const double v = rows[l][k].get<double>();
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvariantError("prototype json: entries must be finite and >= 0");
        proto.b_(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) = v;
      }
    }
    if (j.contains("fixed_sigma") && !j.at("fixed_sigma").is_null()) {
      proto.set_fixed_sigma(j.at("fixed_sigma").get<double>());
    }
    return proto;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prototype json: ") + e.what(), 0);
  }
}

}  // namespace affakt
