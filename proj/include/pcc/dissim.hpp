#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "pcc/binio.hpp"
#include "pcc/dataset.hpp"
#include "pcc/linalg.hpp"
#include "pcc/parallel.hpp"
#include "pcc/random.hpp"

namespace pcc {

/// One B x M_r x M_c snapshot per cluster (vectorized row-major).
struct CombinedCSI {
  std::vector<cd> values;
  std::vector<bool> zero_slice;  // per array: the cluster carried no energy there
};

/// Per array: principal eigenvector of the covariance over all members and
/// subcarriers, scaled by the square root of its eigenvalue. The largest
/// magnitude entry of every slice is rotated to be real and positive.
template <typename T>
CombinedCSI combine_cluster_csi(const BasicDataset<T>& clean, const Cluster& cluster) {
  require(!cluster.indices.empty(), "combine: empty cluster");
  const auto& g = clean.geometry;
  const std::size_t m = g.antennas_per_array();
  CombinedCSI out;
  out.values.assign(g.arrays * m, cd(0.0));
  out.zero_slice.assign(g.arrays, false);
  Eigen::VectorXcd v(static_cast<Eigen::Index>(m));
  for (std::size_t b = 0; b < g.arrays; ++b) {
    Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (auto l : cluster.indices) {
      const auto& h = clean.datapoints.at(l).csi;
      require(h.size() == g.csi_size(), "combine: CSI shape mismatch");
      for (std::size_t n = 0; n < g.subcarriers; ++n) {
        for (std::size_t a = 0; a < m; ++a) v(static_cast<Eigen::Index>(a)) = cd(h[(b * m + a) * g.subcarriers + n]);
        r.noalias() += v * v.adjoint();
      }
    }
    if (r.cwiseAbs().maxCoeff() == 0.0) {
      out.zero_slice[b] = true;
      continue;
    }
    const auto eig = hermitian_eigen_descending(r, 1);
    Eigen::VectorXcd u = eig.vectors.col(0) * std::sqrt(std::max(eig.values(0), 0.0));
    Eigen::Index big = 0;
    for (Eigen::Index a = 1; a < u.size(); ++a)
      if (std::abs(u(a)) > std::abs(u(big))) big = a;
    if (std::abs(u(big)) > 0.0) u *= std::conj(u(big)) / std::abs(u(big));
    for (std::size_t a = 0; a < m; ++a) out.values[b * m + a] = u(static_cast<Eigen::Index>(a));
  }
  return out;
}

/// How the per-array similarity is formed from two snapshots a, b.
enum class CosineForm {
  /// |sum_m a_m^* b_m|^2 / (|a|^2 |b|^2): squared cosine similarity.
  coherent,
  /// sum_m |a_m^* b_m|^2 / (|a|^2 |b|^2): per-antenna products, phase blind.
  per_entry,
};

/// d = B - sum_b similarity_b. An array slice with zero norm contributes 1.
inline double cosine_dissimilarity(std::span<const cd> hi, std::span<const cd> hj, std::size_t arrays,
                                   CosineForm form = CosineForm::coherent) {
  require(hi.size() == hj.size() && arrays > 0 && hi.size() % arrays == 0,
          "cosine dissimilarity: shape mismatch");
  const std::size_t m = hi.size() / arrays;
  double d = 0.0;
  for (std::size_t b = 0; b < arrays; ++b) {
    double ni = 0.0, nj = 0.0, per_entry = 0.0;
    cd inner = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      const cd x = hi[b * m + a];
      const cd y = hj[b * m + a];
      ni += std::norm(x);
      nj += std::norm(y);
      inner += std::conj(x) * y;
      per_entry += std::norm(std::conj(x) * y);
    }
    if (ni <= 0.0 || nj <= 0.0) {
      d += 1.0;
      continue;
    }
    const double sim = (form == CosineForm::coherent ? std::norm(inner) : per_entry) / (ni * nj);
    d += 1.0 - std::clamp(sim, 0.0, 1.0);
  }
  return d;
}

enum class DissimilarityKind : std::uint32_t { cs = 0, cs_fuse = 1, cs_fuse_geo = 2, scaled_meters = 3 };

/// Dense symmetric dissimilarity matrix over clusters.
struct DissimilarityMatrix {
  DissimilarityKind kind = DissimilarityKind::cs;
  std::size_t n = 0;
  std::vector<double> values;            // row-major n x n
  std::vector<std::uint32_t> cluster_ids;

  DissimilarityMatrix() = default;
  DissimilarityMatrix(DissimilarityKind k, std::size_t size)
      : kind(k), n(size), values(size * size, 0.0), cluster_ids(size) {
    for (std::size_t i = 0; i < size; ++i) cluster_ids[i] = static_cast<std::uint32_t>(i);
  }

  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }

  double max_asymmetry() const {
    double a = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) a = std::max(a, std::abs((*this)(i, j) - (*this)(j, i)));
    return a;
  }
};

inline DissimilarityMatrix cs_dissimilarities(const std::vector<CombinedCSI>& combined, std::size_t arrays,
                                              CosineForm form = CosineForm::coherent) {
  const std::size_t n = combined.size();
  DissimilarityMatrix d(DissimilarityKind::cs, n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j)
      d(i, j) = cosine_dissimilarity(combined[i].values, combined[j].values, arrays, form);
  });
  return d;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  require(!v.empty(), "median of empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace detail

struct FuseOptions {
  /// Dissimilarity units per second of time difference. Empty: choose it so
  /// that the median of slope * |dt| over gated pairs equals their median d_CS.
  std::optional<double> slope;
  double time_threshold = 3.0;  // s
};

/// Median-matching slope over pairs with 0 < |dt| <= threshold.
inline double calibrate_time_slope(const DissimilarityMatrix& d_cs, std::span<const double> times,
                                   double time_threshold) {
  std::vector<double> ds, dts;
  for (std::size_t i = 0; i < d_cs.n; ++i)
    for (std::size_t j = i + 1; j < d_cs.n; ++j) {
      const double dt = std::abs(times[i] - times[j]);
      if (dt <= time_threshold && dt > 0.0) {
        ds.push_back(d_cs(i, j));
        dts.push_back(dt);
      }
    }
  if (ds.empty()) return 1.0;
  const double mdt = detail::median_of(dts);
  const double md = detail::median_of(ds);
  return md > 0.0 ? md / mdt : 1.0;
}

/// d_fuse = min(d_CS, slope * |dt|) for |dt| <= threshold, else d_CS; zero diagonal.
inline DissimilarityMatrix fuse_with_time(const DissimilarityMatrix& d_cs, std::span<const double> times,
                                          const FuseOptions& opt = {}) {
  require(times.size() == d_cs.n, "fuse: need one timestamp per cluster");
  require(opt.time_threshold > 0.0, "fuse: time threshold must be positive");
  const double slope = opt.slope ? *opt.slope : calibrate_time_slope(d_cs, times, opt.time_threshold);
  require(slope > 0.0, "fuse: slope must be positive");
  DissimilarityMatrix out = d_cs;
  out.kind = DissimilarityKind::cs_fuse;
  for (std::size_t i = 0; i < out.n; ++i)
    for (std::size_t j = 0; j < out.n; ++j) {
      if (i == j) {
        out(i, j) = 0.0;
        continue;
      }
      const double dt = std::abs(times[i] - times[j]);
      if (dt <= opt.time_threshold) out(i, j) = std::min(d_cs(i, j), slope * dt);
    }
  return out;
}

struct GeodesicResult {
  DissimilarityMatrix distances;
  std::size_t disconnected_pairs = 0;  // filled with 1.5 x the largest finite geodesic
};

/// Shortest paths through the symmetric k-nearest-neighbour graph of `d`
/// (an edge is kept if either endpoint selects it).
inline GeodesicResult geodesic_dissimilarities(const DissimilarityMatrix& d, std::size_t k) {
  const std::size_t n = d.n;
  require(k >= 1, "geodesic: k must be at least 1");
  require(k < n, "geodesic: k must be smaller than the number of clusters");

  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  {
    std::vector<std::vector<char>> edge(n, std::vector<char>(n, 0));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      order.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) { return d(i, a) < d(i, b) || (d(i, a) == d(i, b) && a < b); });
      for (std::size_t q = 0; q < k; ++q) edge[i][order[q]] = edge[order[q]][i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (edge[i][j]) adj[i].emplace_back(j, 0.5 * (d(i, j) + d(j, i)));
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  GeodesicResult res;
  res.distances = DissimilarityMatrix(DissimilarityKind::cs_fuse_geo, n);
  res.distances.cluster_ids = d.cluster_ids;
  parallel_for(n, [&](std::size_t s) {
    std::vector<double> dist(n, inf);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0.0;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      auto [du, u] = pq.top();
      pq.pop();
      if (du > dist[u]) continue;
      for (const auto& [v, w] : adj[u])
        if (du + w < dist[v]) {
          dist[v] = du + w;
          pq.emplace(dist[v], v);
        }
    }
    for (std::size_t j = 0; j < n; ++j) res.distances(s, j) = dist[j];
  });

  double max_finite = 0.0;
  for (double v : res.distances.values)
    if (std::isfinite(v)) max_finite = std::max(max_finite, v);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!std::isfinite(res.distances(i, j))) {
        res.distances(i, j) = 1.5 * max_finite;
        if (i < j) ++res.disconnected_pairs;
      }
  return res;
}

struct ScaleResult {
  double scale = 1.0;
  DissimilarityMatrix scaled;
};

/// Least-squares scale s* = sum d e / sum d^2 between dissimilarities d and
/// distances e of triangulated positions, over a random subset of at most
/// `max_pairs` pairs among clusters with a position.
inline ScaleResult scale_to_meters(const DissimilarityMatrix& d_geo, const std::vector<std::optional<Vec2>>& positions,
                                   std::size_t max_pairs = 100000, std::uint64_t seed = 7) {
  require(positions.size() == d_geo.n, "scale: need one (optional) position per cluster");
  std::vector<std::size_t> have;
  for (std::size_t i = 0; i < positions.size(); ++i)
    if (positions[i]) have.push_back(i);
  require(have.size() >= 2, "scale: need triangulated positions for at least 2 clusters");

  const std::size_t total = have.size() * (have.size() - 1) / 2;
  double num = 0.0, den = 0.0;
  auto add = [&](std::size_t i, std::size_t j) {
    const double dv = d_geo(i, j);
    num += dv * (*positions[i] - *positions[j]).norm();
    den += dv * dv;
  };
  if (total <= max_pairs) {
    for (std::size_t a = 0; a < have.size(); ++a)
      for (std::size_t b = a + 1; b < have.size(); ++b) add(have[a], have[b]);
  } else {
    auto rng = substream(seed, 0x7363616cULL);
    std::uniform_int_distribution<std::size_t> pick(0, have.size() - 1);
    for (std::size_t p = 0; p < max_pairs;) {
      const std::size_t a = pick(rng), b = pick(rng);
      if (a == b) continue;
      add(have[a], have[b]);
      ++p;
    }
  }
  if (den <= 0.0) throw validation_error("scale: all dissimilarities are zero");
  ScaleResult res;
  res.scale = num / den;
  res.scaled = d_geo;
  res.scaled.kind = DissimilarityKind::scaled_meters;
  for (auto& v : res.scaled.values) v *= res.scale;
  return res;
}

inline void save_dissimilarities(const DissimilarityMatrix& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot write " + path.string());
  binio::write_magic(os, "PCDM");
  binio::write<std::uint32_t>(os, 1);
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(d.kind));
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(d.n));
  for (auto id : d.cluster_ids) binio::write<std::uint32_t>(os, id);
  for (double v : d.values) binio::write<float>(os, static_cast<float>(v));
  if (!os) throw io_error("write failed: " + path.string());
}

inline DissimilarityMatrix load_dissimilarities(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read " + path.string());
  binio::expect_magic(is, "PCDM", "dissimilarity cache");
  if (binio::read<std::uint32_t>(is) != 1) throw validation_error("dissimilarity cache: unsupported version");
  const auto kind = binio::read<std::uint32_t>(is);
  require(kind <= 3, "dissimilarity cache: unknown kind tag");
  const auto n = binio::read<std::uint32_t>(is);
  DissimilarityMatrix d(static_cast<DissimilarityKind>(kind), n);
  for (auto& id : d.cluster_ids) id = binio::read<std::uint32_t>(is);
  for (auto& v : d.values) v = binio::read<float>(is);
  return d;
}

}  // namespace pcc
