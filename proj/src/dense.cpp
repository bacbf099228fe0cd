#include "affakt/dense.hpp"

#include "affakt/error.hpp"

#include <cmath>

namespace affakt {

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kSoftmax:
      return "softmax";
  }
  return "unknown";
}

DenseNetwork::DenseNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvariantError("dense network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& layer = layers_[l];
    if (layer.weight.rows() < 1 || layer.weight.cols() < 1) {
      throw DimensionError("layer " + std::to_string(l) + " has an empty weight matrix");
    }
    if (layer.bias.size() != layer.weight.rows()) {
      throw DimensionError("layer " + std::to_string(l) + " bias length does not match its outputs");
    }
    if (l > 0 && layer.in_dim() != layers_[l - 1].out_dim()) {
      throw DimensionError("layer " + std::to_string(l) + " expects " + std::to_string(layer.in_dim()) +
                           " inputs but the previous layer emits " +
                           std::to_string(layers_[l - 1].out_dim()));
    }
    if (layer.activation == Activation::kSoftmax && l + 1 != layers_.size()) {
      throw InvariantError("softmax is only allowed as the final activation");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw InvariantError("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

DenseNetwork DenseNetwork::identity(Eigen::Index dim) {
  return DenseNetwork({DenseLayer{Matrix::Identity(dim, dim), Vector::Zero(dim), Activation::kIdentity}});
}

DenseNetwork DenseNetwork::mlp(const std::vector<Eigen::Index>& dims, Activation final_activation,
                               InitScheme scheme, double identity_noise, std::mt19937_64& rng) {
  if (dims.size() < 2) throw DimensionError("mlp needs at least input and output sizes");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<DenseLayer> layers;
  const bool identity_init = scheme == InitScheme::kIdentity && dims.size() == 3 &&
                             dims.front() == dims.back() && dims[1] >= 2 * dims.front();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Eigen::Index in = dims[l];
    const Eigen::Index out = dims[l + 1];
    const bool last = l + 2 == dims.size();
    DenseLayer layer{Matrix(out, in), Vector::Zero(out), last ? final_activation : Activation::kRelu};
    const double scale = identity_init ? identity_noise
                                       : std::sqrt((layer.activation == Activation::kRelu ? 2.0 : 1.0) /
                                                   static_cast<double>(in));
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) layer.weight(r, c) = scale * normal(rng);
    if (identity_init) {
      const Eigen::Index d = dims.front();
      if (l == 0) {
        layer.weight.topRows(d) += Matrix::Identity(d, d);
        layer.weight.middleRows(d, d) -= Matrix::Identity(d, d);
      } else {
        layer.weight.leftCols(d) += Matrix::Identity(d, d);
        layer.weight.middleCols(d, d) -= Matrix::Identity(d, d);
      }
    }
    layers.push_back(std::move(layer));
  }
  return DenseNetwork(std::move(layers));
}

Eigen::Index DenseNetwork::parameter_count() const {
  Eigen::Index total = 0;
  for (const auto& layer : layers_) total += layer.weight.size() + layer.bias.size();
  return total;
}

Matrix DenseNetwork::forward(const Matrix& x) const {
  Tape tape;
  return forward(x, tape);
}

Matrix DenseNetwork::forward(const Matrix& x, Tape& tape) const {
  if (x.cols() != in_dim()) {
    throw DimensionError("network expects " + std::to_string(in_dim()) + " inputs, got " +
                         std::to_string(x.cols()));
  }
  tape.inputs.clear();
  Matrix h = x;
  for (const auto& layer : layers_) {
    tape.inputs.push_back(h);
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    switch (layer.activation) {
      case Activation::kIdentity:
        break;
      case Activation::kRelu:
        z = z.cwiseMax(0.0);
        break;
      case Activation::kSoftmax:
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          const double top = z.row(i).maxCoeff();
          z.row(i) = (z.row(i).array() - top).exp();
          z.row(i) /= z.row(i).sum();
        }
        break;
    }
    h = std::move(z);
  }
  tape.output = h;
  return h;
}

NetworkGradient DenseNetwork::zero_gradient() const {
  NetworkGradient grad;
  for (const auto& layer : layers_) {
    grad.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size())});
  }
  return grad;
}

Matrix DenseNetwork::backward(const Tape& tape, const Matrix& grad_output, NetworkGradient& grad) const {
  if (tape.inputs.size() != layers_.size()) throw InvariantError("backward: tape does not match network");
  if (grad.size() != layers_.size()) grad = zero_gradient();
  Matrix g = grad_output;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const DenseLayer& layer = layers_[k];
    const Matrix& out = (k + 1 == layers_.size()) ? tape.output : tape.inputs[k + 1];
    switch (layer.activation) {
      case Activation::kIdentity:
        break;
      case Activation::kRelu:
        g = (out.array() > 0.0).select(g, 0.0);
        break;
      case Activation::kSoftmax: {
        // J^T g for y = softmax(z): y * (g - <g, y>)
        const Vector inner = (g.array() * out.array()).rowwise().sum();
        g = out.array() * (g.colwise() - inner).array();
        break;
      }
    }
    grad[k].weight.noalias() += g.transpose() * tape.inputs[k];
    grad[k].bias += g.colwise().sum().transpose();
    g = g * layer.weight;
  }
  return g;
}

Vector DenseNetwork::flat_parameters() const {
  Vector flat(parameter_count());
  Eigen::Index at = 0;
  for (const auto& layer : layers_) {
    flat.segment(at, layer.weight.size()) = layer.weight.reshaped();
    at += layer.weight.size();
    flat.segment(at, layer.bias.size()) = layer.bias;
    at += layer.bias.size();
  }
  return flat;
}

void DenseNetwork::set_flat_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw DimensionError("flat parameter vector has the wrong length");
  Eigen::Index at = 0;
  for (auto& layer : layers_) {
    layer.weight.reshaped() = flat.segment(at, layer.weight.size());
    at += layer.weight.size();
    layer.bias = flat.segment(at, layer.bias.size());
    at += layer.bias.size();
  }
}

Vector DenseNetwork::flatten(const NetworkGradient& grad) {
  Eigen::Index total = 0;
  for (const auto& g : grad) total += g.weight.size() + g.bias.size();
  Vector flat(total);
  Eigen::Index at = 0;
  for (const auto& g : grad) {
    flat.segment(at, g.weight.size()) = g.weight.reshaped();
    at += g.weight.size();
    flat.segment(at, g.bias.size()) = g.bias;
    at += g.bias.size();
  }
  return flat;
}

Adam::Adam(const DenseNetwork& net, AdamOptions options)
    : options_(options), first_(net.zero_gradient()), second_(net.zero_gradient()) {}

void Adam::step(DenseNetwork& net, const NetworkGradient& grad) {
  auto& layers = net.mutable_layers();
  if (grad.size() != layers.size() || first_.size() != layers.size()) {
    throw DimensionError("adam: gradient does not match the network");
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.learning_rate;
  const double eps = options_.epsilon;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    first_[l].weight = b1 * first_[l].weight + (1.0 - b1) * grad[l].weight;
    second_[l].weight = b2 * second_[l].weight + (1.0 - b2) * grad[l].weight.cwiseAbs2();
    first_[l].bias = b1 * first_[l].bias + (1.0 - b1) * grad[l].bias;
    second_[l].bias = b2 * second_[l].bias + (1.0 - b2) * grad[l].bias.cwiseAbs2();
    layers[l].weight.array() -=
        lr * (first_[l].weight.array() / c1) / ((second_[l].weight.array() / c2).sqrt() + eps);
    layers[l].bias.array() -=
        lr * (first_[l].bias.array() / c1) / ((second_[l].bias.array() / c2).sqrt() + eps);
  }
}

}  // namespace affakt
