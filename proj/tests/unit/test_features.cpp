#include <gtest/gtest.h>

#include <numbers>

#include "helpers.hpp"
#include "pcc/features.hpp"

using namespace pcc;
using testing_util::random_vector;

namespace {

/// Single-antenna geometry with 53 subcarriers.
ScenarioGeometry mono_geometry() { return testing_util::tiny_geometry(1, 1, 2, 53, 1); }

Dataset random_dataset(const ScenarioGeometry& g, std::size_t count, std::uint64_t seed,
                       std::uint32_t skip_tx = 0) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.geometry = g;
  std::uint32_t tx = 1;
  for (std::size_t i = 0; i < count; ++i) {
    Datapoint p;
    if (tx == skip_tx) tx = tx % g.transmitters + 1;
    p.tx_index = tx;
    tx = tx % g.transmitters + 1;
    p.timestamp = 0.01 * static_cast<double>(i);
    p.csi = random_vector(g.csi_size(), rng);
    ds.datapoints.push_back(p);
  }
  return ds;
}

Cluster whole(const Dataset& ds) { return cluster_datapoints(ds, 1e6).at(0); }

}  // namespace

TEST(TimeDomain, ConstantIsAnImpulseAtTapZero) {
  const std::vector<cd> ones(53, 1.0);
  const auto full = subcarrier_transform(ones, 53);
  EXPECT_NEAR(std::abs(full[0]), std::sqrt(53.0), 1e-12);
  for (std::size_t k = 1; k < 53; ++k) EXPECT_LT(std::abs(full[k]), 1e-12);
  auto g = mono_geometry();
  std::vector<cd> h(g.csi_size(), 1.0);
  const auto taps = to_time_domain<double>(h, g, TapConfig{});
  ASSERT_EQ(taps.size(), 2u * 12u);
  for (const auto& x : taps) EXPECT_LT(std::abs(x), 1e-12);
}

TEST(TimeDomain, DelayedToneLandsOnTap25) {
  std::vector<cd> x(53);
  for (std::size_t n = 0; n < 53; ++n) x[n] = std::polar(1.0, -2.0 * std::numbers::pi * 25.0 * n / 53.0);
  const auto full = subcarrier_transform(x, 53);
  for (std::size_t k = 0; k < 53; ++k) {
    cd naive = 0.0;
    for (std::size_t n = 0; n < 53; ++n) naive += x[n] * std::exp(cd(0.0, 2.0 * std::numbers::pi * k * n / 53.0));
    naive /= std::sqrt(53.0);
    EXPECT_LT(std::abs(full[k] - naive), 1e-10);
  }
  EXPECT_NEAR(std::norm(full[25]), 53.0, 1e-9);
  auto g = mono_geometry();
  std::vector<cd> h(g.csi_size());
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t n = 0; n < 53; ++n) h[a * 53 + n] = x[n];
  const auto taps = to_time_domain<double>(h, g, TapConfig{});
  EXPECT_NEAR(std::norm(taps[25 - 22]), 53.0, 1e-9);
  EXPECT_NEAR(std::norm(taps[12 + 25 - 22]), 53.0, 1e-9);
}

TEST(TimeDomain, ParsevalBeforeSlicing) {
  std::mt19937_64 rng(2);
  const auto x = random_vector(53, rng);
  const auto y = subcarrier_transform(x, 53);
  double ex = 0.0, ey = 0.0;
  for (std::size_t i = 0; i < 53; ++i) {
    ex += std::norm(x[i]);
    ey += std::norm(y[i]);
  }
  EXPECT_NEAR(ex, ey, 1e-10 * ex);
}

TEST(TimeDomain, RejectsBadTapWindow) {
  const auto g = mono_geometry();
  EXPECT_THROW(TapExtractor(g, TapConfig{53, 45, 12}), Error);
  EXPECT_THROW(TapExtractor(g, TapConfig{53, 0, 0}), Error);
}

TEST(Features, StandardGeometryDimension) {
  EXPECT_EQ(feature_length(standard_geometry(), TapConfig{}), 24576u);
}

TEST(Features, MissingTransmitterGivesZeroBlock) {
  const auto g = testing_util::tiny_geometry(2, 2, 2, 53, 4);
  const auto ds = random_dataset(g, 12, 3, 3);
  const auto f = cluster_features(ds, whole(ds), TapExtractor(g, TapConfig{}));
  const std::size_t per_tx = f.size() / 4;
  for (std::size_t tx = 0; tx < 4; ++tx) {
    double e = 0.0;
    for (std::size_t i = tx * per_tx; i < (tx + 1) * per_tx; ++i) e += f[i] * f[i];
    if (tx == 2) EXPECT_EQ(e, 0.0);
    else EXPECT_GT(e, 0.0);
  }
}

TEST(Features, BlocksAreHermitianPsd) {
  const auto g = testing_util::tiny_geometry(2, 2, 2, 53, 2);
  const auto ds = random_dataset(g, 9, 4);
  const auto f = cluster_features(ds, whole(ds), TapExtractor(g, TapConfig{}));
  const std::size_t m = 4;
  for (std::size_t off = 0; off < f.size(); off += 2 * m * m) {
    MatrixXcd blk(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) blk(i, j) = cd(f[off + i * m + j], f[off + m * m + i * m + j]);
    EXPECT_LT((blk - blk.adjoint()).norm(), 1e-12 * std::max(1.0, blk.norm()));
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(blk);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9 * blk.trace().real());
  }
}

TEST(Features, InvariantToPacketPhaseAndMemberOrder) {
  const auto g = testing_util::tiny_geometry(1, 2, 2, 53, 2);
  auto ds = random_dataset(g, 8, 5);
  const TapExtractor taps(g, TapConfig{});
  const auto base = cluster_features(ds, whole(ds), taps);
  auto rotated = ds;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (auto& p : rotated.datapoints) {
    const cd r = std::polar(1.0, phase(rng));
    for (auto& x : p.csi) x *= r;
  }
  const auto fr = cluster_features(rotated, whole(rotated), taps);
  Cluster shuffled = whole(ds);
  std::reverse(shuffled.indices.begin(), shuffled.indices.end());
  for (auto& [tx, v] : shuffled.per_tx_indices) std::reverse(v.begin(), v.end());
  const auto fs = cluster_features(ds, shuffled, taps);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(fr[i], base[i], 1e-10 * (1.0 + std::abs(base[i])));
    EXPECT_NEAR(fs[i], base[i], 1e-10 * (1.0 + std::abs(base[i])));
  }
}

TEST(Features, AdditiveOverMergedClusters) {
  const auto g = testing_util::tiny_geometry(1, 1, 2, 53, 2);
  auto ds = random_dataset(g, 10, 7);
  for (std::size_t i = 0; i < 10; ++i) ds.datapoints[i].timestamp = i < 4 ? 0.5 : 1.5;
  const TapExtractor taps(g, TapConfig{});
  const auto parts = cluster_datapoints(ds, 1.0);
  ASSERT_EQ(parts.size(), 2u);
  const auto a = cluster_features(ds, parts[0], taps);
  const auto b = cluster_features(ds, parts[1], taps);
  const auto all = cluster_features(ds, cluster_datapoints(ds, 10.0).at(0), taps);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_NEAR(all[i], a[i] + b[i], 1e-10 * (1.0 + std::abs(all[i])));
}

TEST(Features, NormalizationAndCacheRoundTrip) {
  const auto g = testing_util::tiny_geometry(1, 2, 2, 53, 2);
  auto ds = random_dataset(g, 6, 8);
  for (std::size_t i = 0; i < 6; ++i) ds.datapoints[i].timestamp = static_cast<double>(i / 2);
  const auto clusters = cluster_datapoints(ds, 1.0);
  const auto f = compute_features(ds, clusters, TapConfig{});
  ASSERT_EQ(f.size(), 3u);
  for (const auto& v : f) {
    std::vector<double> d(v.values.begin(), v.values.end());
    EXPECT_NEAR(feature_trace_sum(d, 4), 1.0, 1e-6);
  }
  const auto dir = testing_util::temp_dir("features");
  save_features(f, dir / "features.bin");
  EXPECT_EQ(load_features(dir / "features.bin"), f);
  {
    std::ofstream os(dir / "bad.bin", std::ios::binary);
    os << "NOPE";
  }
  EXPECT_THROW(load_features(dir / "bad.bin"), Error);
}
