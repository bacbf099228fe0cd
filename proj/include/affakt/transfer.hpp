#pragma once

#include "affakt/dense.hpp"
#include "affakt/ot_core.hpp"

namespace affakt {

/// Cosine ramp of the transfer weight from 0 (epoch 1) to xi_max (epoch N+1).
struct CurriculumSchedule {
  double xi_max = 0.2;
  int total_epochs = 20;

  void validate() const;
};

/// xi' = xi/2 * (1 - cos((e - 1) / N * pi)), for 1 <= e <= N + 1.
double curriculum_weight(const CurriculumSchedule& schedule, int epoch);

/// n * T * means: row i is the convex combination of class means weighted by
/// the row-normalized plan.
Matrix transfer_combination(const Matrix& plan, const Matrix& class_means);

/// F2 applied to transfer_combination().
Matrix transfer_features(const Matrix& plan, const Matrix& class_means, const DenseNetwork& f2);

/// xi' * X_trans + (1 - xi') * X_target.
Matrix fuse(const Matrix& transferred, const Matrix& target, double xi_prime);

/// Equal-weight late fusion of two modality embeddings.
Matrix fuse_modalities(const Matrix& visual, const Matrix& audio);

}  // namespace affakt
