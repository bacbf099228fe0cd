#pragma once

// Small fully connected networks with hand-written backpropagation and an
// Adam optimizer. Everything is float64.

#include "affakt/ot_core.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace affakt {

enum class Activation : std::uint32_t { kIdentity = 0, kRelu = 1, kSoftmax = 2 };

std::string to_string(Activation activation);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// Parameter gradients, shaped like the network's layers.
struct LayerGradient {
  Matrix weight;
  Vector bias;
};
using NetworkGradient = std::vector<LayerGradient>;

enum class InitScheme {
  /// He-normal weights for relu layers, 1/sqrt(in) otherwise; zero biases.
  kRandom,
  /// For [d -> h -> d] relu networks with h >= 2d: relu(x) - relu(-x) = x,
  /// plus N(0, noise) on every weight.
  kIdentity,
};

class DenseNetwork {
 public:
  DenseNetwork() = default;
  /// Validates chaining, finiteness, and that softmax only appears last.
  explicit DenseNetwork(std::vector<DenseLayer> layers);

  /// Single identity-weighted layer; forward() returns its input.
  static DenseNetwork identity(Eigen::Index dim);

  /// dims = {in, hidden..., out}; hidden layers use relu.
  static DenseNetwork mlp(const std::vector<Eigen::Index>& dims, Activation final_activation,
                          InitScheme scheme, double identity_noise, std::mt19937_64& rng);

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& mutable_layers() noexcept { return layers_; }
  Eigen::Index in_dim() const { return layers_.front().in_dim(); }
  Eigen::Index out_dim() const { return layers_.back().out_dim(); }
  Eigen::Index parameter_count() const;

  /// Activations kept for backward(): input of every layer and final output.
  struct Tape {
    std::vector<Matrix> inputs;
    Matrix output;
  };

  /// Rows of `x` are samples.
  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Tape& tape) const;

  /// Given dLoss/dOutput, accumulates parameter gradients into `grad`
  /// (resized on first use) and returns dLoss/dInput.
  Matrix backward(const Tape& tape, const Matrix& grad_output, NetworkGradient& grad) const;

  NetworkGradient zero_gradient() const;

  /// All weights (column-major) then biases, layer by layer.
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);
  static Vector flatten(const NetworkGradient& grad);

 private:
  std::vector<DenseLayer> layers_;
};

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(const DenseNetwork& net, AdamOptions options = {});

  /// One bias-corrected Adam step.
  void step(DenseNetwork& net, const NetworkGradient& grad);
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  long steps() const noexcept { return t_; }

 private:
  AdamOptions options_{};
  NetworkGradient first_;
  NetworkGradient second_;
  long t_ = 0;
};

}  // namespace affakt
