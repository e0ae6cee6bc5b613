#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <vector>

#include "pcc/binio.hpp"
#include "pcc/dataset.hpp"
#include "pcc/linalg.hpp"
#include "pcc/parallel.hpp"

namespace pcc {

/// Which delay taps of the subcarrier-axis transform enter the features.
/// The window is half-open: [tap_start, tap_start + taps).
struct TapConfig {
  std::size_t fft_length = 53;
  std::size_t tap_start = 22;
  std::size_t taps = 12;

  void validate(const ScenarioGeometry& g) const {
    require(taps >= 1, "tap config: need at least one tap");
    require(tap_start + taps <= fft_length, "tap config: tap window exceeds the transform length");
    require(fft_length >= g.subcarriers, "tap config: transform length shorter than the subcarrier count");
  }
};

/// Unitary transform along subcarriers, X[k] = N^{-1/2} sum_n x[n] e^{+j 2 pi k n / N},
/// zero padded to `length`. Maps a path delay to a positive tap index.
inline std::vector<cd> subcarrier_transform(std::span<const cd> x, std::size_t length) {
  require(length >= x.size() && length > 0, "transform: length shorter than input");
  std::vector<cd> out(length);
  const double norm = 1.0 / std::sqrt(static_cast<double>(length));
  for (std::size_t k = 0; k < length; ++k) {
    cd acc = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n)
      acc += x[n] * std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>((k * n) % length) /
                                        static_cast<double>(length));
    out[k] = acc * norm;
  }
  return out;
}

/// Precomputed rows of the unitary transform for the selected taps.
class TapExtractor {
 public:
  TapExtractor(const ScenarioGeometry& g, const TapConfig& cfg) : g_(g), cfg_(cfg) {
    cfg.validate(g);
    kernel_.resize(static_cast<Eigen::Index>(cfg.taps), static_cast<Eigen::Index>(g.subcarriers));
    const double norm = 1.0 / std::sqrt(static_cast<double>(cfg.fft_length));
    for (std::size_t t = 0; t < cfg.taps; ++t)
      for (std::size_t n = 0; n < g.subcarriers; ++n) {
        const std::size_t k = cfg.tap_start + t;
        kernel_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) =
            norm * std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>((k * n) % cfg.fft_length) /
                                       static_cast<double>(cfg.fft_length));
      }
  }

  const TapConfig& config() const { return cfg_; }

  /// B x M_r x M_c x N_sub (vectorized) -> B x M_r x M_c x N_tap (vectorized).
  template <typename T>
  std::vector<cd> operator()(std::span<const std::complex<T>> h) const {
    require(h.size() == g_.csi_size(), "time domain: CSI shape mismatch");
    const std::size_t antennas = g_.arrays * g_.rows * g_.cols;
    Eigen::MatrixXcd freq(static_cast<Eigen::Index>(g_.subcarriers), static_cast<Eigen::Index>(antennas));
    for (std::size_t a = 0; a < antennas; ++a)
      for (std::size_t n = 0; n < g_.subcarriers; ++n)
        freq(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(a)) = cd(h[a * g_.subcarriers + n]);
    const Eigen::MatrixXcd taps = kernel_ * freq;
    std::vector<cd> out(antennas * cfg_.taps);
    for (std::size_t a = 0; a < antennas; ++a)
      for (std::size_t t = 0; t < cfg_.taps; ++t)
        out[a * cfg_.taps + t] = taps(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(a));
    return out;
  }

 private:
  ScenarioGeometry g_;
  TapConfig cfg_;
  Eigen::MatrixXcd kernel_;
};

template <typename T>
std::vector<cd> to_time_domain(std::span<const std::complex<T>> h, const ScenarioGeometry& g, const TapConfig& cfg) {
  return TapExtractor(g, cfg)(h);
}

inline std::size_t feature_length(const ScenarioGeometry& g, const TapConfig& cfg) {
  const std::size_t m = g.rows * g.cols;
  return 2 * g.transmitters * g.arrays * cfg.taps * m * m;
}

/// Block ordering of the feature vector; bump when the layout changes.
inline constexpr std::uint32_t feature_ordering_version = 1;

/// Per-cluster covariance features. For every (tx, array, tap) the block
/// F = sum over the cluster's packets from that tx of vec(H'[b,:,:,t]) vec(...)^H
/// is stored as Re(vec F) followed by Im(vec F), row-major, blocks in
/// lexicographic (tx, b, t) order. Transmitters absent from the cluster
/// leave zero blocks.
template <typename T>
std::vector<double> cluster_features(const BasicDataset<T>& clean, const Cluster& cluster,
                                     const TapExtractor& taps) {
  require(!cluster.indices.empty(), "features: empty cluster");
  const auto& g = clean.geometry;
  const std::size_t m = g.rows * g.cols;
  const std::size_t nt = taps.config().taps;
  const std::size_t block = 2 * m * m;
  std::vector<double> f(feature_length(g, taps.config()), 0.0);
  Eigen::VectorXcd v(static_cast<Eigen::Index>(m));
  Eigen::MatrixXcd acc(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (const auto& [tx, members] : cluster.per_tx_indices) {
    require(tx >= 1 && tx <= g.transmitters, "features: tx index out of range");
    std::vector<std::vector<cd>> td;
    td.reserve(members.size());
    for (auto l : members) td.push_back(taps(std::span<const std::complex<T>>(clean.datapoints.at(l).csi)));
    for (std::size_t b = 0; b < g.arrays; ++b)
      for (std::size_t t = 0; t < nt; ++t) {
        acc.setZero();
        for (const auto& h : td) {
          for (std::size_t a = 0; a < m; ++a) v(static_cast<Eigen::Index>(a)) = h[(b * m + a) * nt + t];
          acc.noalias() += v * v.adjoint();
        }
        const std::size_t offset = (((tx - 1) * g.arrays + b) * nt + t) * block;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const cd x = acc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            f[offset + i * m + j] = x.real();
            f[offset + m * m + i * m + j] = x.imag();
          }
      }
  }
  return f;
}

/// Sum of the traces of all blocks of a feature vector.
inline double feature_trace_sum(std::span<const double> f, std::size_t antennas_per_array) {
  const std::size_t m = antennas_per_array;
  const std::size_t block = 2 * m * m;
  double s = 0.0;
  for (std::size_t off = 0; off + block <= f.size(); off += block)
    for (std::size_t i = 0; i < m; ++i) s += f[off + i * m + i];
  return s;
}

/// Scales f by 1 / (trace sum + eps).
inline void normalize_features(std::vector<double>& f, std::size_t antennas_per_array, double eps = 1e-12) {
  const double s = 1.0 / (feature_trace_sum(f, antennas_per_array) + eps);
  for (auto& x : f) x *= s;
}

struct FeatureVector {
  std::uint32_t cluster_id = 0;
  std::vector<float> values;

  bool operator==(const FeatureVector&) const = default;
};

/// Normalized features for every cluster.
template <typename T>
std::vector<FeatureVector> compute_features(const BasicDataset<T>& clean, const std::vector<Cluster>& clusters,
                                            const TapConfig& cfg) {
  const TapExtractor taps(clean.geometry, cfg);
  const std::size_t m = clean.geometry.antennas_per_array();
  std::vector<FeatureVector> out(clusters.size());
  parallel_for(clusters.size(), [&](std::size_t c) {
    auto f = cluster_features(clean, clusters[c], taps);
    normalize_features(f, m);
    out[c].cluster_id = static_cast<std::uint32_t>(c);
    out[c].values.assign(f.begin(), f.end());
    for (float x : out[c].values)
      if (!std::isfinite(x)) throw numerical_error("features: non-finite feature value");
  });
  return out;
}

inline void save_features(const std::vector<FeatureVector>& features, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot write " + path.string());
  const std::uint32_t dim = features.empty() ? 0 : static_cast<std::uint32_t>(features.front().values.size());
  binio::write_magic(os, "PCCF");
  binio::write<std::uint32_t>(os, 1);
  binio::write<std::uint32_t>(os, feature_ordering_version);
  binio::write<std::uint32_t>(os, dim);
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(features.size()));
  for (const auto& f : features) {
    require(f.values.size() == dim, "features: inconsistent feature lengths");
    binio::write<std::uint32_t>(os, f.cluster_id);
    for (float x : f.values) binio::write<float>(os, x);
  }
  if (!os) throw io_error("write failed: " + path.string());
}

inline std::vector<FeatureVector> load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read " + path.string());
  binio::expect_magic(is, "PCCF", "feature cache");
  if (binio::read<std::uint32_t>(is) != 1) throw validation_error("feature cache: unsupported version");
  if (binio::read<std::uint32_t>(is) != feature_ordering_version)
    throw validation_error("feature cache: unsupported ordering version");
  const auto dim = binio::read<std::uint32_t>(is);
  const auto count = binio::read<std::uint32_t>(is);
  std::vector<FeatureVector> out(count);
  for (auto& f : out) {
    f.cluster_id = binio::read<std::uint32_t>(is);
    f.values.resize(dim);
    for (auto& x : f.values) x = binio::read<float>(is);
  }
  return out;
}

}  // namespace pcc
