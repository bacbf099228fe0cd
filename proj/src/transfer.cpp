#include "affakt/transfer.hpp"

#include "affakt/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace affakt {

void CurriculumSchedule::validate() const {
  if (!(xi_max >= 0.0 && xi_max <= 1.0)) throw InvariantError("xi must lie in [0, 1]");
  if (total_epochs < 1) throw InvariantError("total epochs must be positive");
}

double curriculum_weight(const CurriculumSchedule& schedule, int epoch) {
  schedule.validate();
  if (epoch < 1 || epoch > schedule.total_epochs + 1) {
    throw InvariantError("epoch " + std::to_string(epoch) + " outside [1, " +
                         std::to_string(schedule.total_epochs + 1) + "]");
  }
  const double phase = static_cast<double>(epoch - 1) / static_cast<double>(schedule.total_epochs);
  return schedule.xi_max / 2.0 * (1.0 - std::cos(phase * std::numbers::pi));
}

Matrix transfer_combination(const Matrix& plan, const Matrix& class_means) {
  if (plan.cols() != class_means.rows()) {
    throw DimensionError("transfer: plan has " + std::to_string(plan.cols()) + " classes, bank has " +
                         std::to_string(class_means.rows()));
  }
  return static_cast<double>(plan.rows()) * (plan * class_means);
}

Matrix transfer_features(const Matrix& plan, const Matrix& class_means, const DenseNetwork& f2) {
  if (f2.in_dim() != class_means.cols()) {
    throw DimensionError("transfer: F2 expects " + std::to_string(f2.in_dim()) +
                         " inputs but class means have width " + std::to_string(class_means.cols()));
  }
  return f2.forward(transfer_combination(plan, class_means));
}

Matrix fuse(const Matrix& transferred, const Matrix& target, double xi_prime) {
  if (transferred.rows() != target.rows() || transferred.cols() != target.cols()) {
    throw DimensionError("fuse: shapes differ");
  }
  if (!(xi_prime >= 0.0 && xi_prime <= 1.0)) throw InvariantError("fuse: xi' must lie in [0, 1]");
  return xi_prime * transferred + (1.0 - xi_prime) * target;
}

Matrix fuse_modalities(const Matrix& visual, const Matrix& audio) {
  if (visual.rows() != audio.rows() || visual.cols() != audio.cols()) {
    throw DimensionError("fuse_modalities: shapes differ");
  }
  return 0.5 * visual + 0.5 * audio;
}

}  // namespace affakt
