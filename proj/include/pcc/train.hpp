#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pcc/aoa.hpp"
#include "pcc/dissim.hpp"
#include "pcc/error.hpp"
#include "pcc/features.hpp"
#include "pcc/geometry.hpp"
#include "pcc/mlp.hpp"
#include "pcc/random.hpp"

namespace pcc {

struct TrainConfig {
  MlpShape shape;        // input width is filled in from the features
  std::size_t epochs = 200;
  std::size_t batch = 256;            // pairs (charting) or samples (fingerprinting)
  std::size_t steps_per_epoch = 0;    // 0: ceil(clusters / batch)
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-3;  // geometric decay towards this value
  double beta = 0.1;
  double lambda = 0.1;
  bool auto_input_scale = true;       // rescale inputs to unit RMS entry
  std::uint64_t seed = 1;

  void validate() const {
    require(epochs >= 1, "train: epochs must be at least 1");
    require(batch >= 1, "train: batch size must be at least 1");
    require(beta > 0.0, "train: beta must be positive");
    require(lambda >= 0.0 && lambda <= 1.0, "train: lambda must lie in [0, 1]");
    require(learning_rate > 0.0 && final_learning_rate > 0.0, "train: learning rates must be positive");
  }

  double rate_at(std::size_t epoch) const {
    if (epochs <= 1) return learning_rate;
    const double f = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return learning_rate * std::pow(final_learning_rate / learning_rate, f);
  }
};

inline double siamese_loss(double d, const Vec2& x, const Vec2& y, double beta) {
  const double r = (y - x).norm();
  return (d - r) * (d - r) / (d + beta);
}

/// Gradient of siamese_loss with respect to y; the x gradient is its negative.
inline Vec2 siamese_gradient(double d, const Vec2& x, const Vec2& y, double beta) {
  const Vec2 diff = y - x;
  const double r = diff.norm();
  if (r == 0.0) return Vec2::Zero();
  return (-2.0 * (d - r) / (d + beta) / r) * diff;
}

/// Bearing information for one cluster; empty estimates add nothing to the loss.
struct TriContext {
  std::vector<AoAEstimate> estimates;
};

struct TriContexts {
  ScenarioGeometry geometry;
  double height = 1.0;
  std::vector<TriContext> clusters;

  double log_likelihood(std::size_t c, const Vec2& x) const {
    const auto& e = clusters.at(c).estimates;
    return e.empty() ? 0.0 : log_vonmises_likelihood(x, e, geometry, height);
  }
  Vec2 gradient(std::size_t c, const Vec2& x) const {
    const auto& e = clusters.at(c).estimates;
    return e.empty() ? Vec2::Zero() : log_vonmises_gradient(x, e, geometry, height);
  }
};

/// Only informative bearings (kappa above the threshold) enter the context.
inline TriContext tri_context(const ClusterBearings& b, double kappa_min = 0.1) {
  TriContext ctx;
  for (std::size_t i = 0; i < b.estimates.size(); ++i)
    if (b.valid[i] && b.estimates[i].kappa > kappa_min) ctx.estimates.push_back(b.estimates[i]);
  return ctx;
}

struct PairLoss {
  double loss = 0.0;
  Vec2 grad_x = Vec2::Zero();
  Vec2 grad_y = Vec2::Zero();
};

/// (1 - lambda) siamese - lambda (log L_tri(y) + log L_tri(x)).
inline PairLoss combined_loss(const Vec2& x, const Vec2& y, double d, double beta, double lambda,
                              const TriContexts* tri, std::size_t cx, std::size_t cy) {
  PairLoss out;
  if (lambda < 1.0) {
    out.loss = (1.0 - lambda) * siamese_loss(d, x, y, beta);
    out.grad_y = (1.0 - lambda) * siamese_gradient(d, x, y, beta);
    out.grad_x = -out.grad_y;
  }
  if (lambda > 0.0 && tri) {
    out.loss -= lambda * (tri->log_likelihood(cy, y) + tri->log_likelihood(cx, x));
    out.grad_y -= lambda * tri->gradient(cy, y);
    out.grad_x -= lambda * tri->gradient(cx, x);
  }
  return out;
}

template <typename Scalar>
struct TrainResult {
  Mlp<Scalar> net;
  std::vector<double> loss_history;  // mean batch loss per epoch
};

template <typename Scalar>
using FeatureMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Features as columns of a matrix, one column per cluster.
template <typename Scalar>
FeatureMatrix<Scalar> feature_matrix(const std::vector<FeatureVector>& f, const std::vector<std::size_t>& which) {
  require(!which.empty(), "features: no clusters selected");
  const auto dim = static_cast<Eigen::Index>(f.at(which.front()).values.size());
  FeatureMatrix<Scalar> x(dim, static_cast<Eigen::Index>(which.size()));
  for (std::size_t c = 0; c < which.size(); ++c) {
    const auto& v = f.at(which[c]).values;
    require(static_cast<Eigen::Index>(v.size()) == dim, "features: inconsistent lengths");
    for (Eigen::Index i = 0; i < dim; ++i) x(i, static_cast<Eigen::Index>(c)) = static_cast<Scalar>(v[i]);
  }
  return x;
}

namespace detail {

template <typename Scalar>
Mlp<Scalar> make_network(const FeatureMatrix<Scalar>& x, const TrainConfig& cfg) {
  MlpShape shape = cfg.shape;
  shape.input = static_cast<std::size_t>(x.rows());
  Mlp<Scalar> net(shape);
  net.initialize(cfg.seed);
  if (cfg.auto_input_scale) {
    const double ms = x.template cast<double>().squaredNorm() / static_cast<double>(x.size());
    if (ms > 0.0 && std::isfinite(ms)) net.set_input_scale(static_cast<Scalar>(1.0 / std::sqrt(ms)));
  }
  return net;
}

template <typename Scalar>
FeatureMatrix<Scalar> gather_columns(const FeatureMatrix<Scalar>& x, const std::vector<std::size_t>& cols) {
  FeatureMatrix<Scalar> out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(cols[c]));
  return out;
}

inline void check_finite_loss(double loss, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw numerical_error("training diverged: non-finite loss in epoch " + std::to_string(epoch + 1));
}

}  // namespace detail

/// One minibatch of pairs: returns the mean pair loss and the parameter
/// gradient. Both branches run through the same network in a single pass over
/// the distinct clusters of the batch.
template <typename Scalar>
std::pair<double, std::vector<DenseLayer<Scalar>>> pair_batch_gradient(
    const Mlp<Scalar>& net, const FeatureMatrix<Scalar>& x, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
    const std::function<double(std::size_t, std::size_t)>& dissim, double beta, double lambda, const TriContexts* tri) {
  std::vector<std::size_t> cols;
  for (const auto& [i, j] : pairs) {
    cols.push_back(i);
    cols.push_back(j);
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  auto slot = [&](std::size_t c) {
    return static_cast<Eigen::Index>(std::lower_bound(cols.begin(), cols.end(), c) - cols.begin());
  };

  typename Mlp<Scalar>::Cache cache;
  const auto out = net.forward(detail::gather_columns(x, cols), cache);
  typename Mlp<Scalar>::Matrix grad = Mlp<Scalar>::Matrix::Zero(out.rows(), out.cols());
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(pairs.size());
  for (const auto& [i, j] : pairs) {
    const Eigen::Index si = slot(i), sj = slot(j);
    const Vec2 xi = out.col(si).template cast<double>();
    const Vec2 yj = out.col(sj).template cast<double>();
    const auto pl = combined_loss(xi, yj, dissim(i, j), beta, lambda, tri, i, j);
    total += pl.loss;
    grad.col(si) += (w * pl.grad_x).template cast<Scalar>();
    grad.col(sj) += (w * pl.grad_y).template cast<Scalar>();
  }
  return {total * w, net.backward(cache, grad)};
}

namespace detail {

template <typename Scalar>
TrainResult<Scalar> train_pairs(const FeatureMatrix<Scalar>& x, const std::function<double(std::size_t, std::size_t)>& dissim,
                                const TriContexts* tri, double lambda, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x.cols());
  require(n >= 2, "train: at least two clusters are needed for pairs");
  TrainResult<Scalar> res{make_network(x, cfg), {}};
  Adam<Scalar> adam;
  auto rng = substream(cfg.seed, 0x70616972ULL);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (n + cfg.batch - 1) / cfg.batch;
  std::vector<std::pair<std::size_t, std::size_t>> pairs(cfg.batch);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      for (auto& p : pairs) {
        p.first = pick(rng);
        do p.second = pick(rng);
        while (p.second == p.first);
      }
      auto [loss, grads] = pair_batch_gradient(res.net, x, pairs, dissim, cfg.beta, lambda, tri);
      check_finite_loss(loss, epoch);
      sum += loss;
      adam.step(res.net, grads, cfg.rate_at(epoch));
    }
    res.loss_history.push_back(sum / static_cast<double>(steps));
  }
  return res;
}

}  // namespace detail

/// Supervised regression of 2-D positions (columns of `labels`) with MSE loss.
template <typename Scalar>
TrainResult<Scalar> train_fingerprint(const FeatureMatrix<Scalar>& x, const Eigen::Matrix2Xd& labels, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x.cols());
  require(n >= 1, "train: no training clusters");
  require(static_cast<std::size_t>(labels.cols()) == n, "train: label count does not match features");
  TrainResult<Scalar> res{detail::make_network(x, cfg), {}};
  Adam<Scalar> adam;
  auto rng = substream(cfg.seed, 0x66707274ULL);
  std::vector<std::size_t> order(n);
  const std::size_t batch = std::min(cfg.batch, n);
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (n + batch - 1) / batch;
  std::size_t cursor = n;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::size_t> cols;
      while (cols.size() < batch) {
        if (cursor == n) {
          for (std::size_t i = 0; i < n; ++i) order[i] = i;
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        cols.push_back(order[cursor++]);
      }
      typename Mlp<Scalar>::Cache cache;
      const auto out = res.net.forward(detail::gather_columns(x, cols), cache);
      typename Mlp<Scalar>::Matrix grad(out.rows(), out.cols());
      double loss = 0.0;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        const Vec2 e = out.col(ci).template cast<double>() - labels.col(static_cast<Eigen::Index>(cols[c]));
        loss += e.squaredNorm();
        grad.col(ci) = (2.0 / static_cast<double>(cols.size()) * e).cast<Scalar>();
      }
      loss /= static_cast<double>(cols.size());
      detail::check_finite_loss(loss, epoch);
      sum += loss;
      adam.step(res.net, res.net.backward(cache, grad), cfg.rate_at(epoch));
    }
    res.loss_history.push_back(sum / static_cast<double>(steps));
  }
  return res;
}

/// Siamese channel charting on a dissimilarity matrix over the same clusters.
template <typename Scalar>
TrainResult<Scalar> train_siamese(const FeatureMatrix<Scalar>& x, const DissimilarityMatrix& d, const TrainConfig& cfg) {
  require(d.n == static_cast<std::size_t>(x.cols()), "train: dissimilarity matrix does not match features");
  return detail::train_pairs<Scalar>(x, [&](std::size_t i, std::size_t j) { return d(i, j); }, nullptr, 0.0, cfg);
}

/// Charting with the triangulation likelihood mixed in (weight cfg.lambda);
/// d is expected in meters.
template <typename Scalar>
TrainResult<Scalar> train_augmented(const FeatureMatrix<Scalar>& x, const DissimilarityMatrix& d, const TriContexts& tri,
                                    const TrainConfig& cfg) {
  require(d.n == static_cast<std::size_t>(x.cols()), "train: dissimilarity matrix does not match features");
  require(tri.clusters.size() == d.n, "train: triangulation contexts do not match features");
  return detail::train_pairs<Scalar>(x, [&](std::size_t i, std::size_t j) { return d(i, j); }, &tri, cfg.lambda, cfg);
}

inline void save_loss_history(const std::vector<double>& history, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot write " + path.string());
  os.precision(17);
  os << "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) os << i + 1 << ',' << history[i] << '\n';
}

}  // namespace pcc
