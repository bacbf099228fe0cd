#include "doctest.h"

#include "affakt/error.hpp"
#include "affakt/transfer.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace affakt;
using affakt::testing::random_gaussian;
using affakt::testing::random_matrix;

namespace {

// Random plan whose rows sum to 1/n.
Matrix random_row_plan(Eigen::Index n, Eigen::Index ls, std::mt19937_64& rng) {
  Matrix t = random_matrix(n, ls, rng, 0.01, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) t.row(i) /= t.row(i).sum() * static_cast<double>(n);
  return t;
}

}  // namespace

TEST_CASE("curriculum: endpoints, monotone, reference value") {
  const CurriculumSchedule s{0.2, 20};
  CHECK(curriculum_weight(s, 1) == 0.0);
  CHECK(curriculum_weight(s, 21) == 0.2);
  double prev = 0.0;
  for (int e = 1; e <= 21; ++e) {
    const double x = curriculum_weight(s, e);
    CHECK(x >= prev);
    prev = x;
  }
  CHECK(curriculum_weight(s, 20) == doctest::Approx(0.1 * (1 - std::cos(0.95 * M_PI))).epsilon(1e-15));
  CHECK(curriculum_weight(s, 20) == doctest::Approx(0.19877).epsilon(1e-4));
  CHECK(curriculum_weight(s, 11) == doctest::Approx(0.1).epsilon(1e-15));
  for (double xi : {0.0, 0.35, 0.7, 1.0})
    for (int n : {1, 3, 20, 50}) CHECK(curriculum_weight({xi, n}, n + 1) == xi);
}

TEST_CASE("curriculum: range errors") {
  CHECK_THROWS_AS(curriculum_weight({0.2, 20}, 0), InvariantError);
  CHECK_THROWS_AS(curriculum_weight({0.2, 20}, 22), InvariantError);
  CHECK_THROWS_AS(curriculum_weight({1.5, 20}, 1), InvariantError);
  CHECK_THROWS_AS(curriculum_weight({0.2, 0}, 1), InvariantError);
}

TEST_CASE("transfer: identity F2 gives convex combinations of means") {
  Matrix means(2, 3);
  means << 1, 2, 3, -1, 0, 5;
  Matrix t(1, 2);
  t << 0.7, 0.3;
  const Matrix out = transfer_features(t, means, DenseNetwork::identity(3));
  CHECK((out.row(0) - (0.7 * means.row(0) + 0.3 * means.row(1))).cwiseAbs().maxCoeff() < 1e-15);

  Matrix onehot = Matrix::Zero(4, 2);
  onehot(0, 1) = onehot(1, 0) = onehot(2, 1) = onehot(3, 1) = 0.25;
  const Matrix picked = transfer_features(onehot, means, DenseNetwork::identity(3));
  CHECK(picked.row(0) == means.row(1));
  CHECK(picked.row(1) == means.row(0));
}

TEST_CASE("transfer: matches a straight-line recomputation") {
  std::mt19937_64 rng(11);
  const Matrix means = random_gaussian(5, 4, rng);
  const Matrix t = random_row_plan(3, 5, rng);
  const DenseNetwork f2 = DenseNetwork::mlp({4, 6, 4}, Activation::kIdentity, InitScheme::kRandom, 0.0, rng);
  const Matrix out = transfer_features(t, means, f2);
  for (Eigen::Index i = 0; i < 3; ++i) {
    Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(4);
    for (Eigen::Index k = 0; k < 5; ++k) z += 3.0 * t(i, k) * means.row(k);
    const auto& l1 = f2.layers()[0];
    const auto& l2 = f2.layers()[1];
    Eigen::RowVectorXd h = (l1.weight * z.transpose() + l1.bias).cwiseMax(0.0).transpose();
    Eigen::RowVectorXd y = (l2.weight * h.transpose() + l2.bias).transpose();
    CHECK((out.row(i) - y).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("transfer: coefficients are a convex combination") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix t = random_row_plan(4, 7, rng);
    // Means = identity rows expose the coefficients directly.
    const Matrix coeff = transfer_combination(t, Matrix::Identity(7, 7));
    CHECK(coeff.minCoeff() >= 0.0);
    CHECK((coeff.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("transfer: dimension errors") {
  CHECK_THROWS_AS(transfer_combination(Matrix::Zero(2, 3), Matrix::Zero(4, 5)), DimensionError);
  CHECK_THROWS_AS(transfer_features(Matrix::Zero(2, 3), Matrix::Zero(3, 5), DenseNetwork::identity(4)),
                  DimensionError);
}

TEST_CASE("fuse: endpoints and affine identities") {
  std::mt19937_64 rng(13);
  const Matrix x = random_gaussian(3, 4, rng);
  const Matrix y = random_gaussian(3, 4, rng);
  const Matrix z = random_gaussian(3, 4, rng);
  CHECK(fuse(x, y, 0.0) == y);
  CHECK(fuse(x, y, 1.0) == x);
  CHECK((fuse(Matrix::Ones(2, 2), Matrix::Zero(2, 2), 0.5).array() == 0.5).all());

  const double a = 0.3, b = -1.7, xi = 0.4;
  // Affine in the first argument: fuse(aX + bY, Z) = a fuse(X, Z) + b fuse(Y, Z) + (1 - a - b)(1 - xi) Z
  const Matrix lhs = fuse(a * x + b * y, z, xi);
  const Matrix rhs = a * fuse(x, z, xi) + b * fuse(y, z, xi) + (1 - a - b) * (1 - xi) * z;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
  // Symmetric swap: fuse(X, Y, xi) = fuse(Y, X, 1 - xi)
  CHECK((fuse(x, y, xi) - fuse(y, x, 1 - xi)).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(fuse(x, Matrix::Zero(3, 5), 0.5), DimensionError);
  CHECK_THROWS_AS(fuse(x, y, 1.2), InvariantError);
}

TEST_CASE("fuse_modalities") {
  std::mt19937_64 rng(14);
  const Matrix a = random_gaussian(3, 4, rng);
  CHECK(fuse_modalities(a, a) == a);
  CHECK((fuse_modalities(2.0 * a, a) - 1.5 * a).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix b = random_gaussian(3, 4, rng);
  const Matrix out = fuse_modalities(a, b);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(out.data()[i] == (a.data()[i] + b.data()[i]) / 2.0);
  CHECK_THROWS_AS(fuse_modalities(a, Matrix::Zero(2, 4)), DimensionError);
}
