// Acceptance run: one PASS/FAIL line per criterion.
// Usage: pcc_acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "pcc/pcc.hpp"

using namespace pcc;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

json standard_config() { return read_json(std::filesystem::path(PCC_SOURCE_DIR) / "configs" / "standard.json"); }

SimConfig standard_sim() { return sim_config_from_json(standard_config().at("sim")); }
TrajectoryConfig standard_trajectory() { return trajectory_config_from_json(standard_config().at("trajectory")); }
PipelineConfig standard_pipeline() { return pipeline_config_from_json(standard_config().at("pipeline")); }
TrainConfig standard_train() { return train_config_from_json(standard_config().at("train")); }

Dataset simulate(const SimConfig& sc, const TrajectoryConfig& tc) {
  return simulate_dataset(sc, generate_trajectory(tc, sc.area));
}

double energy(std::span<const std::complex<double>> h) {
  double e = 0.0;
  for (const auto& x : h) e += std::norm(x);
  return e;
}

// ---- 1: clutter removal on pure clutter ----

Outcome crap_correctness() {
  auto sc = standard_sim();
  sc.target_gain = 0.0;
  sc.clutter_paths_per_tx = 3;
  sc.noise_std = 0.0;
  sc.phase_random = true;
  auto ds = simulate(sc, standard_trajectory());
  double before = 0.0;
  for (const auto& p : ds.datapoints) before += energy(p.csi);
  const auto t0 = Clock::now();
  const auto model = estimate_crap(ds, CrapOptions{3});
  remove_clutter_in_place(ds, model);
  const double secs = seconds_since(t0);
  double after = 0.0;
  for (const auto& p : ds.datapoints) after += energy(p.csi);
  const double ratio = after / before;
  return {ratio < 1e-6 && secs < 30.0,
          fmt("residual/input energy %.3e (< 1e-6), %zu datapoints, CRAP %.1f s (< 30 s)", ratio, ds.size(), secs)};
}

// ---- shared standard scenario for 2, 4, 8, 9, 10 ----

struct Standard {
  Preprocessed pre;
  std::vector<double> cluster_snr_db;
  double sim_seconds = 0.0, clean_seconds = 0.0, preprocess_seconds = 0.0, baseline_seconds = 0.0;
  std::size_t baseline_flagged = 0;
  bool baseline_matches = false;
  LocalizationMetrics baseline;
  std::map<TrainMode, TrainOutputs> models;
  std::map<TrainMode, double> train_seconds;
};

/// Per-cluster target SNR after clutter removal: the known target response of
/// each packet (up to its unknown common phase, which is fitted) is the signal;
/// everything else left in the cleaned CSI, including target energy removed by
/// the projection, is the error.
std::vector<double> target_snr(const CleanDataset<double>& clean, const SimConfig& sc) {
  const Simulator sim(sc);
  const auto& g = clean.dataset.geometry;
  const double tau = sc.effective_timing_offset();
  std::vector<std::complex<double>> rot(g.subcarriers);
  for (std::size_t n = 0; n < g.subcarriers; ++n)
    rot[n] = std::polar(1.0, -2.0 * std::numbers::pi * tau * g.subcarrier_offset(n));
  std::vector<double> snr(clean.clusters.size());
  parallel_for(clean.clusters.size(), [&](std::size_t c) {
    double signal = 0.0, error = 0.0;
    for (auto l : clean.clusters[c].indices) {
      const auto& p = clean.dataset.datapoints[l];
      auto t = sim.target_response(p.position, p.tx_index);
      std::complex<double> cross = 0.0;
      double et = 0.0, eh = 0.0;
      for (std::size_t q = 0; q < t.size(); ++q) {
        t[q] *= rot[q % g.subcarriers];
        cross += std::conj(t[q]) * p.csi[q];
        et += std::norm(t[q]);
        eh += std::norm(p.csi[q]);
      }
      signal += et;
      error += std::max(0.0, eh + et - 2.0 * std::abs(cross));
    }
    snr[c] = 10.0 * std::log10(signal / std::max(error, 1e-300));
  });
  return snr;
}

Standard& standard() {
  static std::optional<Standard> s;
  if (s) return *s;
  s.emplace();
  const auto sc = standard_sim();
  const auto pc = standard_pipeline();
  auto t0 = Clock::now();
  auto ds = simulate(sc, standard_trajectory());
  s->sim_seconds = seconds_since(t0);

  t0 = Clock::now();
  auto clean = clean_dataset(std::move(ds), pc);
  s->clean_seconds = seconds_since(t0);
  s->cluster_snr_db = target_snr(clean, sc);

  t0 = Clock::now();
  const auto tri = triangulate_clusters(clean.dataset, clean.clusters, clean.dataset.area.value_or(Area{}),
                                        pc.triangulation, pc.kappa);
  s->baseline_seconds = s->clean_seconds + seconds_since(t0);

  t0 = Clock::now();
  s->pre = preprocess(clean, pc);
  s->preprocess_seconds = seconds_since(t0);

  s->baseline_matches = tri.size() == s->pre.triangulation.size();
  std::vector<double> err;
  for (auto c : s->pre.split.test) {
    const auto& r = tri[c];
    s->baseline_matches = s->baseline_matches && r.position == s->pre.triangulation[c].position;
    if (!r.position) {
      ++s->baseline_flagged;
      continue;
    }
    err.push_back((*r.position - s->pre.clusters[c].mean_position.head<2>()).norm());
  }
  if (!err.empty()) s->baseline = localization_metrics(err);
  return *s;
}

const TrainOutputs& standard_model(TrainMode mode) {
  auto& s = standard();
  auto it = s.models.find(mode);
  if (it != s.models.end()) return it->second;
  const auto pc = standard_pipeline();
  const auto t0 = Clock::now();
  auto out = train_model(s.pre, mode, standard_train(), pc.triangulation.kappa_min, pc.scale_pairs, pc.scale_seed);
  s.train_seconds[mode] = seconds_since(t0);
  return s.models.emplace(mode, std::move(out)).first->second;
}

Points2 test_predictions(TrainMode mode) {
  const auto& s = standard();
  const auto& m = standard_model(mode);
  Points2 p(2, static_cast<Eigen::Index>(s.pre.split.test.size()));
  for (std::size_t i = 0; i < s.pre.split.test.size(); ++i)
    p.col(static_cast<Eigen::Index>(i)) = m.predictions.col(static_cast<Eigen::Index>(s.pre.split.test[i]));
  return p;
}

Points2 test_labels() { return standard().pre.labels(standard().pre.split.test); }

MetricReport pcc_report() {
  static std::optional<MetricReport> r;
  if (!r) r = evaluate_predictions(test_predictions(TrainMode::cc), test_labels(), true);
  return *r;
}

// ---- 2: target preservation ----

Outcome crap_preservation() {
  const auto& s = standard();
  std::size_t good = 0;
  for (double v : s.cluster_snr_db) good += v > 10.0 ? 1 : 0;
  const double frac = static_cast<double>(good) / static_cast<double>(s.cluster_snr_db.size());
  std::vector<double> sorted = s.cluster_snr_db;
  std::sort(sorted.begin(), sorted.end());
  std::string orders;
  for (const auto& [tx, k] : s.pre.clutter_orders) orders += " " + std::to_string(k);
  return {frac >= 0.9, fmt("%.1f%% of %zu clusters above 10 dB (>= 90%%), median %.1f dB, min %.1f dB, clutter orders%s",
                           100.0 * frac, sorted.size(), percentile(sorted, 0.5), sorted.front(), orders.c_str())};
}

// ---- 3: root-MUSIC sweep ----

Outcome root_music_sweep() {
  const double deg = std::numbers::pi / 180.0;
  double worst = 0.0;
  std::size_t count = 0;
  bool all_valid = true;
  for (int i = -119; i <= 119; ++i) {
    const double alpha = 0.5 * i * deg;
    Eigen::VectorXcd a(4);
    for (int m = 0; m < 4; ++m) a(m) = std::polar(1.0, std::numbers::pi * m * std::sin(alpha));
    const auto r = root_music_single_source(a * a.adjoint(), 0.5);
    ++count;
    if (!r) {
      all_valid = false;
      continue;
    }
    worst = std::max(worst, std::abs(r->azimuth - alpha) / deg);
  }
  return {all_valid && worst < 0.5, fmt("max |error| %.2e deg over %zu angles in (-60, 60) deg (< 0.5 deg)", worst, count)};
}

// ---- 4: triangulation baseline ----

Outcome triangulation_baseline() {
  const auto& s = standard();
  const bool ok = s.baseline_matches && s.baseline.mae < 0.3 && s.baseline.r95 < 1.0 && s.baseline_seconds < 300.0;
  return {ok, fmt("test split MAE %.3f m (< 0.3), R95 %.3f m (< 1.0), %zu flagged, CRAP + triangulation %.1f s (< 300 s)",
                  s.baseline.mae, s.baseline.r95, s.baseline_flagged, s.baseline_seconds)};
}

// ---- 5: dissimilarities and geodesics ----

/// Shortest simple path over the symmetric kNN graph by exhaustive enumeration.
double enumerate_paths(const DissimilarityMatrix& d, const std::vector<std::vector<bool>>& edge, std::size_t s,
                       std::size_t t) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> used(d.n, false);
  std::function<void(std::size_t, double)> walk = [&](std::size_t u, double len) {
    if (u == t) {
      best = std::min(best, len);
      return;
    }
    used[u] = true;
    for (std::size_t v = 0; v < d.n; ++v)
      if (edge[u][v] && !used[v]) walk(v, len + 0.5 * (d(u, v) + d(v, u)));
    used[u] = false;
  };
  walk(s, 0.0);
  return best;
}

std::vector<std::vector<bool>> knn_graph(const DissimilarityMatrix& d, std::size_t k) {
  std::vector<std::vector<bool>> e(d.n, std::vector<bool>(d.n, false));
  for (std::size_t i = 0; i < d.n; ++i) {
    std::vector<std::pair<double, std::size_t>> c;
    for (std::size_t j = 0; j < d.n; ++j)
      if (j != i) c.emplace_back(d(i, j), j);
    std::sort(c.begin(), c.end());
    for (std::size_t q = 0; q < k; ++q) e[i][c[q].second] = e[c[q].second][i] = true;
  }
  return e;
}

Outcome dissimilarities() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> weight(1, 30), size(2, 7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    DissimilarityMatrix d(DissimilarityKind::cs_fuse, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = weight(rng);
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % (n - 1);
    const auto geo = geodesic_dissimilarities(d, k);
    const auto edge = knn_graph(d, k);
    std::vector<double> bf(n * n);
    double max_finite = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        bf[i * n + j] = i == j ? 0.0 : enumerate_paths(d, edge, i, j);
        if (std::isfinite(bf[i * n + j])) max_finite = std::max(max_finite, bf[i * n + j]);
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double expect = std::isfinite(bf[i * n + j]) ? bf[i * n + j] : 1.5 * max_finite;
        mismatches += geo.distances(i, j) == expect ? 0 : 1;
      }
  }

  std::normal_distribution<double> g;
  const std::size_t arrays = 4, m = 8;
  double lo = 1e300, hi = -1e300;
  for (int t = 0; t < 10000; ++t) {
    std::vector<cd> a(arrays * m), b(arrays * m);
    for (auto& x : a) x = {g(rng), g(rng)};
    for (auto& x : b) x = {g(rng), g(rng)};
    const double v = cosine_dissimilarity(a, b, arrays);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const bool in_range = lo >= 0.0 && hi <= static_cast<double>(arrays);

  std::uniform_real_distribution<double> u(0.0, 4.5);
  const std::size_t n = 120;
  std::vector<Vec2> pts(n);
  for (auto& p : pts) p = Vec2(u(rng), u(rng));
  DissimilarityMatrix d(DissimilarityKind::cs_fuse, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d(i, j) = (pts[i] - pts[j]).norm() + (i == j ? 0.0 : 0.2);
  const auto g5 = geodesic_dissimilarities(d, 5), g10 = geodesic_dissimilarities(d, 10), g20 = geodesic_dissimilarities(d, 20);
  std::size_t violations = 0;
  for (std::size_t q = 0; q < n * n; ++q)
    violations += (g10.distances.values[q] <= g5.distances.values[q] && g20.distances.values[q] <= g10.distances.values[q]) ? 0 : 1;
  return {mismatches == 0 && in_range && violations == 0,
          fmt("Dijkstra vs path enumeration: %zu mismatches on 100 graphs; d_CS range [%.4f, %.4f] within [0, %zu] over 1e4 "
              "pairs; %zu monotonicity violations for k = 5, 10, 20",
              mismatches, lo, hi, arrays, violations)};
}

// ---- 6: backpropagation ----

Outcome gradient_check() {
  Mlp<double> net(MlpShape{6, {8, 4}, 2});
  net.initialize(17);
  std::mt19937_64 rng(18);
  std::normal_distribution<double> g;
  FeatureMatrix<double> x(6, 9);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < 9; ++i) pairs.emplace_back(i, (i * 4 + 3) % 9);
  auto dissim = [](std::size_t i, std::size_t j) { return 0.2 + 0.05 * static_cast<double>(i + 2 * j); };
  auto loss_of = [&](const Mlp<double>& n) { return pair_batch_gradient(n, x, pairs, dissim, 0.1, 0.0, nullptr).first; };
  const auto grads = pair_batch_gradient(net, x, pairs, dissim, 0.1, 0.0, nullptr).second;
  const double h = 1e-3;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    auto probe = [&](bool bias, Eigen::Index k) {
      auto at = [&](Mlp<double>& m) -> double& {
        return bias ? m.layers()[li].bias.data()[k] : m.layers()[li].weight.data()[k];
      };
      Mlp<double> plus = net, minus = net;
      at(plus) += h;
      at(minus) -= h;
      plus.bump_version();
      minus.bump_version();
      const double fd = (loss_of(plus) - loss_of(minus)) / (2 * h);
      const double an = bias ? grads[li].bias.data()[k] : grads[li].weight.data()[k];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
      ++checked;
    };
    for (Eigen::Index k = 0; k < net.layers()[li].weight.size(); ++k) probe(false, k);
    for (Eigen::Index k = 0; k < net.layers()[li].bias.size(); ++k) probe(true, k);
  }
  return {checked == net.parameter_count() && worst < 1e-4,
          fmt("6-8-4-2 network, %zu/%zu parameters, max relative error %.2e (< 1e-4)", checked, net.parameter_count(), worst)};
}

// ---- 7: Siamese recovery ----

Outcome siamese_recovery() {
  const std::size_t n = 40;
  Points2 labels(2, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 3.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    labels.col(static_cast<Eigen::Index>(i)) = Vec2(t, 1.0 + 0.6 * std::sin(1.7 * t));
  }
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  FeatureMatrix<float> x(32, static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < 32; ++k) {
    const Vec2 w(g(rng), g(rng));
    const double phase = ph(rng);
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(k, c) = static_cast<float>(std::cos(w.dot(labels.col(c)) + phase));
  }
  DissimilarityMatrix d(DissimilarityKind::cs_fuse_geo, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      d(i, j) = (labels.col(static_cast<Eigen::Index>(i)) - labels.col(static_cast<Eigen::Index>(j))).norm();
  TrainConfig cfg;
  cfg.shape.hidden = {128, 64};
  cfg.epochs = 1500;
  cfg.batch = 128;
  cfg.learning_rate = 1e-3;
  cfg.final_learning_rate = 1e-4;
  const auto res = train_siamese(x, d, cfg);
  const Points2 pred = res.net.forward(x).cast<double>();
  const auto rep = evaluate_predictions(pred, labels, true);
  return {rep.ks < 0.05 && rep.ct > 0.98 && rep.tw > 0.98,
          fmt("KS %.4f (< 0.05), CT %.4f, TW %.4f (> 0.98)", rep.ks, rep.ct, rep.tw)};
}

// ---- 8, 9, 10: standard scenario charts ----

Outcome pcc_end_to_end() {
  const auto r = pcc_report();
  const auto& s = standard();
  const double total = s.sim_seconds + s.clean_seconds + s.preprocess_seconds + s.train_seconds.at(TrainMode::cc);
  const bool ok = r.loc.mae < 0.5 && r.ct > 0.9 && r.tw > 0.9 && r.ks < 0.3 && total < 1200.0;
  return {ok, fmt("test split after affine: MAE %.3f m (< 0.5), CT %.3f, TW %.3f (> 0.9), KS %.3f (< 0.3); "
                  "simulate + preprocess + train %.0f s (< 1200 s)",
                  r.loc.mae, r.ct, r.tw, r.ks, total)};
}

Outcome augmented_global_frame() {
  const auto pcc = pcc_report();
  const auto aug = evaluate_predictions(test_predictions(TrainMode::cc_aug), test_labels(), false);
  const auto aligned = evaluate_predictions(test_predictions(TrainMode::cc_aug), test_labels(), true);
  return {aug.loc.mae < 1.5 * pcc.loc.mae,
          fmt("global-frame MAE %.3f m (< 1.5 x %.3f = %.3f); after affine %.3f m, lambda %.2f, scale %.3f", aug.loc.mae,
              pcc.loc.mae, 1.5 * pcc.loc.mae, aligned.loc.mae, standard_train().lambda,
              standard_model(TrainMode::cc_aug).scale)};
}

Outcome fingerprint_beats_pcc() {
  const auto pcc = pcc_report();
  const auto fp = evaluate_predictions(test_predictions(TrainMode::fingerprint), test_labels(), false);
  return {fp.loc.mae < pcc.loc.mae, fmt("fingerprinting MAE %.3f m < charting MAE %.3f m", fp.loc.mae, pcc.loc.mae)};
}

// ---- 11: determinism ----

struct StageHashes {
  std::map<std::string, std::uint64_t> h;
};

template <typename T>
void hash_values(Fnv1a& f, const std::vector<T>& v) {
  f.update(v.data(), v.size() * sizeof(T));
}

void hash_net(Fnv1a& f, const Mlp<float>& net) {
  for (const auto& l : net.layers()) {
    f.update(l.weight.data(), static_cast<std::size_t>(l.weight.size()) * sizeof(float));
    f.update(l.bias.data(), static_cast<std::size_t>(l.bias.size()) * sizeof(float));
  }
}

StageHashes run_small_pipeline(int threads) {
  set_thread_count(threads);
  auto sc = standard_sim();
  auto tc = standard_trajectory();
  tc.duration = 60.0;
  auto pc = standard_pipeline();
  auto tr = standard_train();
  tr.epochs = 4;
  StageHashes out;
  auto ds = simulate(sc, tc);
  {
    Fnv1a f;
    for (const auto& p : ds.datapoints) {
      f.update(&p.timestamp, sizeof p.timestamp);
      hash_values(f, p.csi);
    }
    out.h["simulate"] = f.value();
  }
  auto clean = clean_dataset(std::move(ds), pc);
  {
    Fnv1a f;
    for (const auto& p : clean.dataset.datapoints) hash_values(f, p.csi);
    for (const auto& [tx, m] : clean.clutter) f.update(m.basis.data(), static_cast<std::size_t>(m.basis.size()) * sizeof(cd));
    out.h["clutter removal"] = f.value();
  }
  const auto p = preprocess(clean, pc);
  {
    Fnv1a f;
    for (const auto& fv : p.features) hash_values(f, fv.values);
    out.h["features"] = f.value();
    Fnv1a t;
    t.update(triangulation_to_json(p.triangulation).dump());
    out.h["triangulation"] = t.value();
    Fnv1a d;
    for (const auto* m : {&p.d_cs, &p.d_fuse, &p.d_geo}) hash_values(d, m->values);
    d.update(&p.time_slope, sizeof p.time_slope);
    out.h["dissimilarities"] = d.value();
  }
  for (auto mode : {TrainMode::fingerprint, TrainMode::cc, TrainMode::cc_aug}) {
    const auto res = train_model(p, mode, tr, pc.triangulation.kappa_min, pc.scale_pairs, pc.scale_seed);
    Fnv1a f;
    hash_net(f, res.net);
    hash_values(f, res.loss_history);
    out.h["train " + to_string(mode)] = f.value();
    Points2 pr(2, static_cast<Eigen::Index>(p.split.test.size()));
    for (std::size_t i = 0; i < p.split.test.size(); ++i)
      pr.col(static_cast<Eigen::Index>(i)) = res.predictions.col(static_cast<Eigen::Index>(p.split.test[i]));
    Fnv1a e;
    e.update(evaluate_predictions(pr, p.labels(p.split.test), mode == TrainMode::cc).to_json().dump());
    out.h["evaluate " + to_string(mode)] = e.value();
  }
  set_thread_count(1);
  return out;
}

Outcome determinism() {
  const auto a = run_small_pipeline(1);
  const auto b = run_small_pipeline(1);
  const auto c = run_small_pipeline(8);
  std::vector<std::string> differ;
  for (const auto& [stage, h] : a.h)
    if (b.h.at(stage) != h || c.h.at(stage) != h) differ.push_back(stage);
  std::string list;
  for (const auto& s : differ) list += " [" + s + "]";
  return {differ.empty(), differ.empty() ? fmt("%zu stages bit-identical across two runs and thread counts 1 and 8", a.h.size())
                                         : "stages differing:" + list};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, crap_correctness},    {2, crap_preservation},       {3, root_music_sweep},
      {4, triangulation_baseline}, {5, dissimilarities},      {6, gradient_check},
      {7, siamese_recovery},    {8, pcc_end_to_end},          {9, augmented_global_frame},
      {10, fingerprint_beats_pcc}, {11, determinism}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail
              << fmt(" [%.1f s]", seconds_since(t0)) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
