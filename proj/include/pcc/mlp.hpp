#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "pcc/binio.hpp"
#include "pcc/error.hpp"
#include "pcc/random.hpp"

namespace pcc {

/// Dense ReLU stack with a linear 2-D output layer.
struct MlpShape {
  std::size_t input = 0;
  std::vector<std::size_t> hidden = {1024, 512, 256, 128, 64};
  std::size_t output = 2;

  bool operator==(const MlpShape&) const = default;
};

template <typename Scalar>
struct DenseLayer {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Matrix weight;  // out x in
  Vector bias;
};

template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  /// Activations kept from a forward pass for backpropagation.
  struct Cache {
    std::vector<Matrix> activations;  // input (scaled) and every layer output
    std::uint64_t version = 0;
  };

  Mlp() = default;

  explicit Mlp(const MlpShape& shape) : shape_(shape) {
    require(shape.input > 0 && shape.output > 0, "mlp: input and output widths must be positive");
    std::size_t in = shape.input;
    auto widths = shape.hidden;
    widths.push_back(shape.output);
    for (auto out : widths) {
      require(out > 0, "mlp: layer widths must be positive");
      DenseLayer<Scalar> l;
      l.weight = Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      l.bias = Vector::Zero(static_cast<Eigen::Index>(out));
      layers_.push_back(std::move(l));
      in = out;
    }
  }

  /// He-style uniform fan-in initialisation, zero biases.
  void initialize(std::uint64_t seed) {
    auto rng = substream(seed, 0x696e6974ULL);
    for (auto& l : layers_) {
      const double bound = std::sqrt(6.0 / static_cast<double>(l.weight.cols()));
      for (Eigen::Index i = 0; i < l.weight.size(); ++i)
        l.weight.data()[i] = static_cast<Scalar>(bound * (2.0 * uniform01(rng) - 1.0));
      l.bias.setZero();
    }
    ++version_;
  }

  const MlpShape& shape() const { return shape_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  /// Global gain applied to every input before the first layer.
  Scalar input_scale() const { return input_scale_; }
  void set_input_scale(Scalar s) { input_scale_ = s; ++version_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Column-wise batch forward pass: x is input x n, result is output x n.
  Matrix forward(const Matrix& x) const {
    Cache c;
    return forward(x, c);
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    require(x.rows() == static_cast<Eigen::Index>(shape_.input), "mlp: input width mismatch");
    cache.version = version_;
    cache.activations.clear();
    cache.activations.push_back(input_scale_ * x);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      Matrix z = l.weight * cache.activations.back();
      z.colwise() += l.bias;
      if (i + 1 < layers_.size()) z = z.cwiseMax(Scalar(0));
      cache.activations.push_back(std::move(z));
    }
    return cache.activations.back();
  }

  Vector forward_one(const Vector& x) const { return forward(Matrix(x)).col(0); }

  /// Gradients of a scalar loss given dL/d(output) for the cached batch.
  std::vector<DenseLayer<Scalar>> backward(const Cache& cache, const Matrix& grad_out) const {
    require(cache.version == version_, "mlp: parameters changed between forward and backward");
    std::vector<DenseLayer<Scalar>> grads(layers_.size());
    Matrix delta = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Matrix& in = cache.activations[i];
      grads[i].weight.noalias() = delta * in.transpose();
      grads[i].bias = delta.rowwise().sum();
      if (i == 0) break;
      Matrix back = layers_[i].weight.transpose() * delta;
      const Matrix& act = cache.activations[i];
      delta = back.cwiseProduct((act.array() > Scalar(0)).template cast<Scalar>().matrix());
    }
    return grads;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out(shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      out.layers()[i].weight = layers_[i].weight.template cast<Other>();
      out.layers()[i].bias = layers_[i].bias.template cast<Other>();
    }
    out.set_input_scale(static_cast<Other>(input_scale_));
    return out;
  }

  bool same_parameters(const Mlp& o) const {
    if (!(shape_ == o.shape_) || input_scale_ != o.input_scale_) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].weight != o.layers_[i].weight || layers_[i].bias != o.layers_[i].bias) return false;
    return true;
  }

 private:
  MlpShape shape_;
  std::vector<DenseLayer<Scalar>> layers_;
  Scalar input_scale_ = Scalar(1);
  std::uint64_t version_ = 0;
};

/// Adam with bias correction.
template <typename Scalar>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void step(Mlp<Scalar>& net, const std::vector<DenseLayer<Scalar>>& grads, double lr) {
    auto& layers = net.layers();
    if (m_.empty()) {
      for (const auto& l : layers) {
        DenseLayer<Scalar> z;
        z.weight.setZero(l.weight.rows(), l.weight.cols());
        z.bias.setZero(l.bias.size());
        m_.push_back(z);
        v_.push_back(z);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    const auto step_size = static_cast<Scalar>(lr * std::sqrt(c2) / c1);
    const auto b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
    const auto eps = static_cast<Scalar>(epsilon * std::sqrt(c2));
    for (std::size_t i = 0; i < layers.size(); ++i) {
      update(layers[i].weight, grads[i].weight, m_[i].weight, v_[i].weight, b1, b2, step_size, eps);
      update(layers[i].bias, grads[i].bias, m_[i].bias, v_[i].bias, b1, b2, step_size, eps);
    }
    net.bump_version();
  }

 private:
  template <typename M>
  static void update(M& p, const M& g, M& m, M& v, Scalar b1, Scalar b2, Scalar step, Scalar eps) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= step * m.array() / (v.array().sqrt() + eps);
  }

  std::vector<DenseLayer<Scalar>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Checkpoint: "PCCM", version, layer count, (in, out) per layer, input
/// scale, then every weight (row-major) and bias as little-endian doubles.
template <typename Scalar>
void save_mlp(const Mlp<Scalar>& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot write " + path.string());
  binio::write_magic(os, "PCCM");
  binio::write<std::uint32_t>(os, 1);
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.weight.cols()));
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.weight.rows()));
  }
  binio::write<double>(os, static_cast<double>(net.input_scale()));
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) binio::write<double>(os, static_cast<double>(l.weight(r, c)));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) binio::write<double>(os, static_cast<double>(l.bias(r)));
  }
  if (!os) throw io_error("write failed: " + path.string());
}

template <typename Scalar>
Mlp<Scalar> load_mlp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read " + path.string());
  binio::expect_magic(is, "PCCM", "model checkpoint");
  if (binio::read<std::uint32_t>(is) != 1) throw validation_error("model checkpoint: unsupported version");
  const auto count = binio::read<std::uint32_t>(is);
  require(count >= 1, "model checkpoint: no layers");
  MlpShape shape;
  shape.hidden.clear();
  std::size_t prev = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto in = binio::read<std::uint32_t>(is);
    const auto out = binio::read<std::uint32_t>(is);
    if (i == 0) shape.input = in;
    else require(in == prev, "model checkpoint: layer shapes do not chain");
    if (i + 1 < count) shape.hidden.push_back(out);
    else shape.output = out;
    prev = out;
  }
  Mlp<Scalar> net(shape);
  const double scale = binio::read<double>(is);
  for (auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = static_cast<Scalar>(binio::read<double>(is));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = static_cast<Scalar>(binio::read<double>(is));
  }
  net.set_input_scale(static_cast<Scalar>(scale));
  return net;
}

}  // namespace pcc
