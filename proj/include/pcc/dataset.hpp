#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "pcc/geometry.hpp"

namespace pcc {

/// One received Wi-Fi packet: CSI over all receive antennas and subcarriers,
/// stored vectorized in (b, m_r, m_c, n) row-major order.
template <typename T>
struct BasicDatapoint {
  std::vector<std::complex<T>> csi;
  Vec3 position = Vec3::Zero();
  double timestamp = 0.0;
  std::uint32_t tx_index = 1;  // 1-based

  bool operator==(const BasicDatapoint&) const = default;
};

template <typename T>
struct BasicDataset {
  using sample_type = std::complex<T>;

  ScenarioGeometry geometry;
  std::vector<BasicDatapoint<T>> datapoints;
  std::optional<Area> area;

  std::size_t size() const { return datapoints.size(); }
  bool empty() const { return datapoints.empty(); }

  void sort_by_time() {
    std::stable_sort(datapoints.begin(), datapoints.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  }

  bool is_time_sorted() const {
    return std::is_sorted(datapoints.begin(), datapoints.end(),
                          [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  }

  /// Checks shapes, indices and finiteness against the geometry.
  void validate() const {
    geometry.validate();
    const std::size_t q = geometry.csi_size();
    for (const auto& p : datapoints) {
      require(p.csi.size() == q, "datapoint CSI shape does not match geometry");
      require(std::isfinite(p.timestamp), "datapoint timestamp must be finite");
      require(p.tx_index >= 1 && p.tx_index <= geometry.transmitters, "datapoint tx_index out of range");
    }
    require(is_time_sorted(), "datapoints must be sorted by timestamp");
  }

  bool operator==(const BasicDataset&) const = default;
};

using Datapoint = BasicDatapoint<double>;
using Dataset = BasicDataset<double>;

/// Datapoints sharing one absolute time window [w * dt, (w + 1) * dt).
struct Cluster {
  std::int64_t window = 0;
  std::vector<std::size_t> indices;
  double mean_time = 0.0;
  Vec3 mean_position = Vec3::Zero();
  std::map<std::uint32_t, std::vector<std::size_t>> per_tx_indices;

  Vec2 mean_position_2d() const { return mean_position.head<2>(); }
};

/// Groups datapoints by floor(t / delta_t). Clusters come back in ascending
/// window order, member indices in dataset order.
template <typename T>
std::vector<Cluster> cluster_datapoints(const BasicDataset<T>& dataset, double delta_t) {
  require(delta_t > 0.0 && std::isfinite(delta_t), "cluster window must be positive");
  std::map<std::int64_t, Cluster> by_window;
  for (std::size_t l = 0; l < dataset.datapoints.size(); ++l) {
    const auto& p = dataset.datapoints[l];
    const auto w = static_cast<std::int64_t>(std::floor(p.timestamp / delta_t));
    auto& c = by_window[w];
    c.window = w;
    c.indices.push_back(l);
    c.per_tx_indices[p.tx_index].push_back(l);
  }
  std::vector<Cluster> clusters;
  clusters.reserve(by_window.size());
  for (auto& [w, c] : by_window) {
    double t_sum = 0.0;
    Vec3 x_sum = Vec3::Zero();
    for (auto l : c.indices) {
      t_sum += dataset.datapoints[l].timestamp;
      x_sum += dataset.datapoints[l].position;
    }
    const auto n = static_cast<double>(c.indices.size());
    c.mean_time = t_sum / n;
    c.mean_position = x_sum / n;
    clusters.push_back(std::move(c));
  }
  return clusters;
}

}  // namespace pcc
