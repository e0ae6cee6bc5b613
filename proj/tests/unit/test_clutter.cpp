#include <gtest/gtest.h>

#include "helpers.hpp"
#include "pcc/clutter.hpp"
#include "pcc/simulator.hpp"

using namespace pcc;
using testing_util::random_vector;

namespace {

double norm_of(const std::vector<cd>& v) {
  double s = 0.0;
  for (const auto& x : v) s += std::norm(x);
  return std::sqrt(s);
}

MatrixXcd projector(const ClutterModel& m) { return m.basis * m.basis.adjoint(); }

}  // namespace

TEST(Autocovariance, SingleVectorOuterProduct) {
  const std::vector<std::vector<cd>> v{{cd(1, 0), cd(0, 1)}};
  const MatrixXcd r = accumulate_autocovariance(v);
  MatrixXcd expect(2, 2);
  expect << cd(1, 0), cd(0, -1), cd(0, 1), cd(1, 0);
  EXPECT_LT((r - expect).norm(), 1e-15);
}

TEST(Autocovariance, OrthonormalBasisGivesIdentity) {
  const std::vector<std::vector<cd>> v{{cd(1, 0), cd(0, 0)}, {cd(0, 0), cd(1, 0)}};
  EXPECT_LT((accumulate_autocovariance(v) - MatrixXcd::Identity(2, 2)).norm(), 1e-15);
}

TEST(Autocovariance, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(1);
  std::vector<std::vector<cd>> v;
  for (int i = 0; i < 50; ++i) v.push_back(random_vector(300, rng));  // more than one chunk of rows
  const MatrixXcd r = accumulate_autocovariance(v);
  MatrixXcd naive = MatrixXcd::Zero(300, 300);
  for (const auto& h : v)
    for (int i = 0; i < 300; ++i)
      for (int j = 0; j < 300; ++j) naive(i, j) += h[i] * std::conj(h[j]);
  EXPECT_LT((r - naive).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Autocovariance, EmptyListIsZeroAndIndependentOfThreads) {
  EXPECT_EQ(accumulate_autocovariance(std::vector<std::vector<cd>>{}).size(), 0);
  std::mt19937_64 rng(2);
  std::vector<std::vector<cd>> v;
  for (int i = 0; i < 700; ++i) v.push_back(random_vector(40, rng));
  set_thread_count(1);
  const MatrixXcd a = accumulate_autocovariance(v);
  set_thread_count(6);
  const MatrixXcd b = accumulate_autocovariance(v);
  set_thread_count(1);
  EXPECT_EQ(a, b);
}

TEST(Subspace, DiagonalEigenstructure) {
  MatrixXcd r = MatrixXcd::Zero(3, 3);
  r.diagonal() << 5, 2, 1;
  const auto m1 = estimate_clutter_subspace(r, 1);
  EXPECT_NEAR(std::abs(m1.basis(0, 0)), 1.0, 1e-12);
  MatrixXcd p2 = MatrixXcd::Zero(3, 3);
  p2(0, 0) = p2(1, 1) = 1.0;
  EXPECT_LT((projector(estimate_clutter_subspace(r, 2)) - p2).norm(), 1e-12);
  EXPECT_NEAR(m1.eigenvalues(0), 5.0, 1e-12);
}

TEST(Subspace, RecoversKnownRank3Projector) {
  std::mt19937_64 rng(4);
  const int q = 20;
  MatrixXcd a(q, 3);
  for (int c = 0; c < 3; ++c) {
    const auto v = random_vector(q, rng);
    for (int i = 0; i < q; ++i) a(i, c) = v[i];
  }
  const MatrixXcd u = Eigen::HouseholderQR<MatrixXcd>(a).householderQ() * MatrixXcd::Identity(q, 3);
  const Eigen::Vector3d w(9.0, 4.0, 2.5);
  const MatrixXcd r = u * w.cast<cd>().asDiagonal() * u.adjoint();
  const auto m = estimate_clutter_subspace(r, 3);
  EXPECT_LT((projector(m) - u * u.adjoint()).norm(), 1e-8);
  EXPECT_LT((m.basis.adjoint() * m.basis - MatrixXcd::Identity(3, 3)).norm(), 1e-9);
  EXPECT_GE(m.eigenvalues(0), m.eigenvalues(1));
  EXPECT_GE(m.eigenvalues(1), m.eigenvalues(2));
}

TEST(Subspace, RejectsBadOrders) {
  const MatrixXcd r = MatrixXcd::Identity(3, 3);
  EXPECT_THROW(estimate_clutter_subspace(r, 4), Error);
  EXPECT_THROW(estimate_clutter_subspace(r, 0), Error);
  MatrixXcd bad = r;
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(estimate_clutter_subspace(bad, 1), Error);
}

TEST(Subspace, IterativeSolverAgreesWithDenseSolver) {
  std::mt19937_64 rng(8);
  std::vector<std::vector<cd>> v;
  for (int i = 0; i < 30; ++i) v.push_back(random_vector(600, rng));
  const MatrixXcd r = accumulate_autocovariance(v);
  const auto dense = hermitian_eigen_descending(r, 5);
  const auto iter = hermitian_top_eigen_iterative(r, 5, 5);
  EXPECT_LT((dense.values - iter.values).norm(), 1e-9 * dense.values(0));
  const MatrixXcd pd = dense.vectors * dense.vectors.adjoint();
  const MatrixXcd pi = iter.vectors * iter.vectors.adjoint();
  EXPECT_LT((pd - pi).norm(), 1e-8);
}

TEST(Removal, ExamplesAndProperties) {
  ClutterModel e1;
  e1.basis = MatrixXcd::Zero(2, 1);
  e1.basis(0, 0) = 1.0;
  e1.eigenvalues = Eigen::VectorXd::Ones(1);
  const auto out = remove_clutter(std::vector<cd>{3.0, 4.0}, e1);
  EXPECT_EQ(out[0], cd(0.0));
  EXPECT_EQ(out[1], cd(4.0));
  const std::vector<cd> orth{0.0, cd(2.0, -1.0)};
  EXPECT_EQ(remove_clutter(orth, e1), orth);
  EXPECT_THROW(remove_clutter(std::vector<cd>{1.0, 2.0, 3.0}, e1), Error);

  std::mt19937_64 rng(3);
  std::vector<std::vector<cd>> v;
  for (int i = 0; i < 12; ++i) v.push_back(random_vector(16, rng));
  const auto m = estimate_clutter_subspace(accumulate_autocovariance(v), 4);
  const auto h = random_vector(16, rng);
  const auto once = remove_clutter(h, m);
  const auto twice = remove_clutter(once, m);
  VectorXcd hv = Eigen::Map<const VectorXcd>(once.data(), 16);
  EXPECT_LT((m.basis.adjoint() * hv).norm(), 1e-8 * norm_of(h));
  for (int i = 0; i < 16; ++i) EXPECT_LT(std::abs(once[i] - twice[i]), 1e-9);
  EXPECT_LE(norm_of(once), norm_of(h));
  const cd rot = std::polar(1.0, 0.7);
  std::vector<cd> hr = h;
  for (auto& x : hr) x *= rot;
  const auto rotated = remove_clutter(hr, m);
  for (int i = 0; i < 16; ++i) EXPECT_LT(std::abs(rotated[i] - rot * once[i]), 1e-12);
}

TEST(Crap, RepeatedVectorIsRemovedCompletely) {
  Dataset ds;
  ds.geometry = testing_util::tiny_geometry();
  std::mt19937_64 rng(1);
  const auto h = random_vector(ds.geometry.csi_size(), rng);
  for (int i = 0; i < 5; ++i) {
    Datapoint p;
    p.tx_index = 1;
    p.timestamp = i;
    p.csi = h;
    ds.datapoints.push_back(p);
  }
  const auto clean = apply_crap(ds, 1);
  for (const auto& p : clean.datapoints) EXPECT_LT(norm_of(p.csi), 1e-12 * norm_of(h));
}

TEST(Crap, SimulatedClutterIsRemovedAndLabelsKept) {
  SimConfig cfg;
  cfg.target_gain = 0.0;
  cfg.noise_std = 0.0;
  cfg.clutter_paths_per_tx = 1;
  const auto ds = simulate_dataset(cfg, generate_trajectory(1, 5.0, cfg.area, 0.2));
  const auto clean = apply_crap(ds, 1);
  ASSERT_EQ(clean.size(), ds.size());
  double rms = 0.0, worst = 0.0;
  for (const auto& p : ds.datapoints) rms += std::pow(norm_of(p.csi), 2) / static_cast<double>(p.csi.size());
  rms = std::sqrt(rms / static_cast<double>(ds.size()));
  for (std::size_t l = 0; l < ds.size(); ++l) {
    EXPECT_EQ(clean.datapoints[l].timestamp, ds.datapoints[l].timestamp);
    EXPECT_EQ(clean.datapoints[l].position, ds.datapoints[l].position);
    EXPECT_EQ(clean.datapoints[l].tx_index, ds.datapoints[l].tx_index);
    for (const auto& x : clean.datapoints[l].csi) worst = std::max(worst, std::abs(x));
  }
  EXPECT_LT(worst, 1e-9 * rms);
  EXPECT_THROW(apply_crap(ds, 0), Error);
}

TEST(Crap, TooFewDatapointsForOrder) {
  Dataset ds;
  ds.geometry = testing_util::tiny_geometry();
  std::mt19937_64 rng(1);
  Datapoint p;
  p.tx_index = 1;
  p.csi = random_vector(ds.geometry.csi_size(), rng);
  ds.datapoints.push_back(p);
  EXPECT_THROW(apply_crap(ds, 2), Error);
}

TEST(Crap, ResidualEnergyNonincreasingInOrder) {
  SimConfig cfg;
  cfg.clutter_paths_per_tx = 3;
  cfg.timing_jitter_std = 5e-9;
  const auto ds = simulate_dataset(cfg, generate_trajectory(2, 4.0, cfg.area, 0.2));
  double prev = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 1; k <= 5; ++k) {
    const auto clean = apply_crap(ds, k);
    double e = 0.0;
    for (const auto& p : clean.datapoints) e += std::pow(norm_of(p.csi), 2);
    EXPECT_LE(e, prev * (1.0 + 1e-12));
    prev = e;
  }
}

TEST(Crap, AutomaticOrderFindsSingleStaticPath) {
  SimConfig cfg;
  const auto ds = simulate_dataset(cfg, generate_trajectory(2, 20.0, cfg.area, 0.2));
  const auto model = estimate_crap(ds, CrapOptions{});
  ASSERT_EQ(model.size(), 4u);
  for (const auto& [tx, m] : model) EXPECT_EQ(m.order(), 1) << "tx " << tx;
}
