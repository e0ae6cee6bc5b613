#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "pcc/dataset.hpp"
#include "pcc/linalg.hpp"
#include "pcc/parallel.hpp"

namespace pcc {

/// Clutter subspace of one transmitter: orthonormal Q x K basis of the
/// dominant eigenvectors of the CSI autocovariance.
struct ClutterModel {
  MatrixXcd basis;
  Eigen::VectorXd eigenvalues;  // K retained, descending

  Eigen::Index order() const { return basis.cols(); }
  Eigen::Index dimension() const { return basis.rows(); }
};

namespace detail {

inline constexpr Eigen::Index autocov_chunk = 256;

template <typename GetVector>
MatrixXcd accumulate_chunked(Eigen::Index q, std::size_t count, GetVector&& get) {
  MatrixXcd r = MatrixXcd::Zero(q, q);
  MatrixXcd block(q, autocov_chunk);
  std::size_t i = 0;
  while (i < count) {
    const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(autocov_chunk, count - i));
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto v = get(i + static_cast<std::size_t>(j));
      require(static_cast<Eigen::Index>(v.size()) == q, "autocovariance: vector length mismatch");
      for (Eigen::Index k = 0; k < q; ++k) block(k, j) = cd(v[k]);
    }
    r.selfadjointView<Eigen::Lower>().rankUpdate(block.leftCols(m));
    i += static_cast<std::size_t>(m);
  }
  return r.selfadjointView<Eigen::Lower>();
}

}  // namespace detail

/// R = sum_l h_l h_l^H over equally sized complex vectors.
template <typename T>
MatrixXcd accumulate_autocovariance(std::span<const std::vector<std::complex<T>>> vectors) {
  if (vectors.empty()) return MatrixXcd();
  const auto q = static_cast<Eigen::Index>(vectors.front().size());
  return detail::accumulate_chunked(q, vectors.size(),
                                    [&](std::size_t l) { return std::span<const std::complex<T>>(vectors[l]); });
}

template <typename T>
MatrixXcd accumulate_autocovariance(const std::vector<std::vector<std::complex<T>>>& vectors) {
  return accumulate_autocovariance(std::span<const std::vector<std::complex<T>>>(vectors));
}

/// Clutter subspace of order K from a Hermitian autocovariance.
inline ClutterModel estimate_clutter_subspace(const MatrixXcd& r, Eigen::Index k) {
  require(r.rows() == r.cols() && r.rows() > 0, "clutter: autocovariance must be square and nonempty");
  require(k >= 1 && k <= r.rows(), "clutter: order K must satisfy 1 <= K <= Q");
  auto eig = hermitian_top_eigen(r, k, k);
  ClutterModel m;
  m.basis = std::move(eig.vectors);
  m.eigenvalues = eig.values.cwiseMax(0.0);
  return m;
}

/// Eigen-gap rule: smallest K in [1, k_max] maximizing l_K / l_{K+1}.
/// `values` must hold at least k_max + 1 eigenvalues, descending.
inline Eigen::Index choose_clutter_order(const Eigen::VectorXd& values, Eigen::Index k_max) {
  require(k_max >= 1 && values.size() >= k_max + 1, "clutter: need k_max + 1 eigenvalues for the gap rule");
  const double floor = std::max(values(0), 0.0) * 1e-15 + 1e-300;
  Eigen::Index best = 1;
  double best_ratio = -1.0;
  for (Eigen::Index k = 1; k <= k_max; ++k) {
    const double ratio = std::max(values(k - 1), floor) / std::max(values(k), floor);
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = k;
    }
  }
  return best;
}

/// h - C (C^H h).
template <typename T>
std::vector<std::complex<T>> remove_clutter(std::span<const std::complex<T>> h, const ClutterModel& model) {
  require(static_cast<Eigen::Index>(h.size()) == model.dimension(), "clutter: dimension mismatch");
  VectorXcd v(model.dimension());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = cd(h[static_cast<std::size_t>(i)]);
  const VectorXcd coeff = model.basis.adjoint() * v;
  v.noalias() -= model.basis * coeff;
  std::vector<std::complex<T>> out(h.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::complex<T>(static_cast<T>(v(i).real()), static_cast<T>(v(i).imag()));
  return out;
}

template <typename T>
std::vector<std::complex<T>> remove_clutter(const std::vector<std::complex<T>>& h, const ClutterModel& model) {
  return remove_clutter(std::span<const std::complex<T>>(h), model);
}

/// Per-transmitter clutter models, keyed by 1-based tx index.
using CrapModel = std::map<std::uint32_t, ClutterModel>;

struct CrapOptions {
  /// Clutter order. Empty selects the eigen-gap rule, capped at max_order.
  std::optional<Eigen::Index> order;
  Eigen::Index max_order = 16;
};

/// Acquires the clutter subspace for every transmitter present among the
/// datapoints selected by `use` (all datapoints if empty).
template <typename T>
CrapModel estimate_crap(const BasicDataset<T>& ds, const CrapOptions& opt, const std::vector<bool>& use = {}) {
  require(!opt.order || *opt.order >= 1, "clutter: order K must be at least 1");
  const auto q = static_cast<Eigen::Index>(ds.geometry.csi_size());
  std::map<std::uint32_t, std::vector<std::size_t>> members;
  for (std::size_t l = 0; l < ds.size(); ++l)
    if (use.empty() || use[l]) members[ds.datapoints[l].tx_index].push_back(l);

  std::vector<std::uint32_t> txs;
  for (const auto& [tx, idx] : members) {
    if (opt.order)
      require(idx.size() >= static_cast<std::size_t>(*opt.order),
              "clutter: fewer datapoints than clutter order K for transmitter " + std::to_string(tx));
    txs.push_back(tx);
  }
  std::vector<ClutterModel> models(txs.size());
  parallel_for(txs.size(), [&](std::size_t i) {
    const auto& idx = members.at(txs[i]);
    const MatrixXcd r = detail::accumulate_chunked(
        q, idx.size(), [&](std::size_t j) { return std::span<const std::complex<T>>(ds.datapoints[idx[j]].csi); });
    Eigen::Index k = 0;
    if (opt.order) {
      k = *opt.order;
    } else {
      const Eigen::Index kmax = std::min<Eigen::Index>(opt.max_order, q - 1);
      require(kmax >= 1, "clutter: dimension too small for automatic order selection");
      const auto spectrum = hermitian_top_eigen(r, kmax + 1, 1);
      k = choose_clutter_order(spectrum.values, kmax);
    }
    models[i] = estimate_clutter_subspace(r, k);
  });
  CrapModel out;
  for (std::size_t i = 0; i < txs.size(); ++i) out.emplace(txs[i], std::move(models[i]));
  return out;
}

/// Projects every datapoint off its transmitter's clutter subspace.
/// Labels, timestamps and ordering are preserved.
template <typename T>
BasicDataset<T> apply_clutter_removal(const BasicDataset<T>& ds, const CrapModel& model) {
  BasicDataset<T> out;
  out.geometry = ds.geometry;
  out.area = ds.area;
  out.datapoints.resize(ds.size());
  parallel_for(ds.size(), [&](std::size_t l) {
    const auto& p = ds.datapoints[l];
    auto it = model.find(p.tx_index);
    require(it != model.end(), "clutter: no clutter model for transmitter " + std::to_string(p.tx_index));
    auto& o = out.datapoints[l];
    o.position = p.position;
    o.timestamp = p.timestamp;
    o.tx_index = p.tx_index;
    o.csi = remove_clutter(std::span<const std::complex<T>>(p.csi), it->second);
  });
  return out;
}

/// In-place variant of apply_clutter_removal.
template <typename T>
void remove_clutter_in_place(BasicDataset<T>& ds, const CrapModel& model) {
  parallel_for(ds.size(), [&](std::size_t l) {
    auto& p = ds.datapoints[l];
    auto it = model.find(p.tx_index);
    require(it != model.end(), "clutter: no clutter model for transmitter " + std::to_string(p.tx_index));
    p.csi = remove_clutter(std::span<const std::complex<T>>(p.csi), it->second);
  });
}

/// Clutter acquisition and removal per transmitter with a fixed order K.
template <typename T>
BasicDataset<T> apply_crap(const BasicDataset<T>& ds, Eigen::Index k) {
  require(k >= 1, "clutter: order K must be at least 1");
  return apply_clutter_removal(ds, estimate_crap(ds, CrapOptions{k}));
}

}  // namespace pcc
