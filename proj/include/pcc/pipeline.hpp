#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcc/aoa.hpp"
#include "pcc/clutter.hpp"
#include "pcc/dataset.hpp"
#include "pcc/dissim.hpp"
#include "pcc/eval.hpp"
#include "pcc/features.hpp"
#include "pcc/pccd_io.hpp"
#include "pcc/train.hpp"

namespace pcc {

inline constexpr const char* tool_version = "0.1.0";

/// Hyperparameters of every stage between a dataset and trained charts.
struct PipelineConfig {
  double cluster_window = 1.0;  // s
  double train_fraction = 0.8;  // leading share of clusters (by time) used for training
  CrapOptions crap;
  TapConfig taps;
  CosineForm cosine = CosineForm::coherent;
  FuseOptions fuse;
  std::size_t knn = 20;
  TriangulationOptions triangulation;
  KappaHeuristic kappa;
  std::size_t scale_pairs = 100000;
  std::uint64_t scale_seed = 7;

  void validate() const {
    require(cluster_window > 0.0, "pipeline: cluster window must be positive");
    require(train_fraction > 0.0 && train_fraction <= 1.0, "pipeline: train fraction must lie in (0, 1]");
    require(!crap.order || *crap.order >= 1, "pipeline: clutter order must be at least 1");
    require(knn >= 1, "pipeline: k-NN k must be at least 1");
    require(triangulation.grid_pitch > 0.0, "pipeline: grid pitch must be positive");
  }
};

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["cluster_window"] = c.cluster_window;
  j["train_fraction"] = c.train_fraction;
  j["clutter_order"] = c.crap.order ? nlohmann::json(*c.crap.order) : nlohmann::json("auto");
  j["max_clutter_order"] = c.crap.max_order;
  j["fft_length"] = c.taps.fft_length;
  j["tap_start"] = c.taps.tap_start;
  j["n_tap"] = c.taps.taps;
  j["cosine"] = c.cosine == CosineForm::coherent ? "coherent" : "per_entry";
  j["time_slope"] = c.fuse.slope ? nlohmann::json(*c.fuse.slope) : nlohmann::json("auto");
  j["time_threshold"] = c.fuse.time_threshold;
  j["knn"] = c.knn;
  j["grid_pitch"] = c.triangulation.grid_pitch;
  j["kappa_min"] = c.triangulation.kappa_min;
  j["kappa_max"] = c.kappa.kappa_max;
  j["kappa_power"] = c.kappa.exponent;
  j["scale_pairs"] = c.scale_pairs;
  j["scale_seed"] = c.scale_seed;
  return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.cluster_window = j.value("cluster_window", c.cluster_window);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    if (j.contains("clutter_order") && !j["clutter_order"].is_string())
      c.crap.order = j["clutter_order"].get<Eigen::Index>();
    c.crap.max_order = j.value("max_clutter_order", c.crap.max_order);
    c.taps.fft_length = j.value("fft_length", c.taps.fft_length);
    c.taps.tap_start = j.value("tap_start", c.taps.tap_start);
    c.taps.taps = j.value("n_tap", c.taps.taps);
    const auto cos = j.value("cosine", std::string("coherent"));
    require(cos == "coherent" || cos == "per_entry", "pipeline: cosine must be coherent or per_entry");
    c.cosine = cos == "coherent" ? CosineForm::coherent : CosineForm::per_entry;
    if (j.contains("time_slope") && !j["time_slope"].is_string()) c.fuse.slope = j["time_slope"].get<double>();
    c.fuse.time_threshold = j.value("time_threshold", c.fuse.time_threshold);
    c.knn = j.value("knn", c.knn);
    c.triangulation.grid_pitch = j.value("grid_pitch", c.triangulation.grid_pitch);
    c.triangulation.kappa_min = j.value("kappa_min", c.triangulation.kappa_min);
    c.kappa.kappa_max = j.value("kappa_max", c.kappa.kappa_max);
    c.kappa.exponent = j.value("kappa_power", c.kappa.exponent);
    c.scale_pairs = j.value("scale_pairs", c.scale_pairs);
    c.scale_seed = j.value("scale_seed", c.scale_seed);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["hidden"] = c.shape.hidden;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["learning_rate"] = c.learning_rate;
  j["final_learning_rate"] = c.final_learning_rate;
  j["beta"] = c.beta;
  j["lambda"] = c.lambda;
  j["auto_input_scale"] = c.auto_input_scale;
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.shape.hidden = j.value("hidden", c.shape.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.final_learning_rate = j.value("final_learning_rate", c.learning_rate);
    c.beta = j.value("beta", c.beta);
    c.lambda = j.value("lambda", c.lambda);
    c.auto_input_scale = j.value("auto_input_scale", c.auto_input_scale);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

struct ClusterSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<bool> is_train;
};

/// The first round(fraction * count) clusters in time order are training clusters.
inline ClusterSplit split_clusters(std::size_t count, double train_fraction) {
  require(train_fraction > 0.0 && train_fraction <= 1.0, "split: train fraction must lie in (0, 1]");
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(count)));
  ClusterSplit s;
  s.is_train.resize(count);
  for (std::size_t c = 0; c < count; ++c) {
    s.is_train[c] = c < n_train;
    (c < n_train ? s.train : s.test).push_back(c);
  }
  return s;
}

inline std::vector<bool> datapoint_mask(const std::vector<Cluster>& clusters, const std::vector<bool>& cluster_flag,
                                        std::size_t datapoints) {
  std::vector<bool> m(datapoints, false);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    if (cluster_flag[c])
      for (auto l : clusters[c].indices) m[l] = true;
  return m;
}

struct ClusterInfo {
  std::uint32_t id = 0;
  double mean_time = 0.0;
  Vec3 mean_position = Vec3::Zero();
  std::size_t members = 0;
};

/// Everything the training and evaluation stages need from a dataset.
struct Preprocessed {
  ScenarioGeometry geometry;
  Area area;
  std::vector<ClusterInfo> clusters;
  ClusterSplit split;
  std::map<std::uint32_t, Eigen::Index> clutter_orders;
  std::vector<FeatureVector> features;           // all clusters
  std::vector<TriangulationResult> triangulation;  // all clusters
  DissimilarityMatrix d_cs, d_fuse, d_geo;       // training clusters only
  double time_slope = 0.0;
  std::size_t disconnected_pairs = 0;

  Points2 labels(const std::vector<std::size_t>& which) const {
    Points2 out(2, static_cast<Eigen::Index>(which.size()));
    for (std::size_t i = 0; i < which.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = clusters.at(which[i]).mean_position.head<2>();
    return out;
  }
};

inline std::vector<ClusterInfo> cluster_infos(const std::vector<Cluster>& clusters) {
  std::vector<ClusterInfo> out(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c)
    out[c] = {static_cast<std::uint32_t>(c), clusters[c].mean_time, clusters[c].mean_position, clusters[c].indices.size()};
  return out;
}

/// Clutter estimation on the training datapoints, removal on all of them.
/// The dataset is consumed to avoid holding two copies of the CSI.
template <typename T>
struct CleanDataset {
  BasicDataset<T> dataset;
  std::vector<Cluster> clusters;
  ClusterSplit split;
  CrapModel clutter;
};

template <typename T>
CleanDataset<T> clean_dataset(BasicDataset<T> ds, const PipelineConfig& cfg) {
  cfg.validate();
  require(ds.size() > 0, "pipeline: dataset is empty");
  CleanDataset<T> out;
  out.clusters = cluster_datapoints(ds, cfg.cluster_window);
  out.split = split_clusters(out.clusters.size(), cfg.train_fraction);
  out.clutter = estimate_crap(ds, cfg.crap, datapoint_mask(out.clusters, out.split.is_train, ds.size()));
  remove_clutter_in_place(ds, out.clutter);
  out.dataset = std::move(ds);
  return out;
}

/// Features, bearings and triangulation for all clusters; dissimilarities
/// over the training clusters.
template <typename T>
Preprocessed preprocess(const CleanDataset<T>& clean, const PipelineConfig& cfg) {
  const auto& ds = clean.dataset;
  Preprocessed p;
  p.geometry = ds.geometry;
  p.area = ds.area.value_or(Area{});
  p.clusters = cluster_infos(clean.clusters);
  p.split = clean.split;
  for (const auto& [tx, m] : clean.clutter) p.clutter_orders[tx] = m.order();
  p.features = compute_features(ds, clean.clusters, cfg.taps);
  p.triangulation = triangulate_clusters(ds, clean.clusters, p.area, cfg.triangulation, cfg.kappa);

  const auto& train = p.split.train;
  std::vector<CombinedCSI> combined(train.size());
  parallel_for(train.size(), [&](std::size_t i) { combined[i] = combine_cluster_csi(ds, clean.clusters[train[i]]); });
  std::vector<double> times(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) times[i] = p.clusters[train[i]].mean_time;
  auto set_ids = [&](DissimilarityMatrix& d) {
    for (std::size_t i = 0; i < train.size(); ++i) d.cluster_ids[i] = static_cast<std::uint32_t>(train[i]);
  };
  p.d_cs = cs_dissimilarities(combined, ds.geometry.arrays, cfg.cosine);
  set_ids(p.d_cs);
  p.time_slope = cfg.fuse.slope ? *cfg.fuse.slope : calibrate_time_slope(p.d_cs, times, cfg.fuse.time_threshold);
  FuseOptions fo = cfg.fuse;
  fo.slope = p.time_slope;
  p.d_fuse = fuse_with_time(p.d_cs, times, fo);
  if (train.size() > cfg.knn) {
    auto geo = geodesic_dissimilarities(p.d_fuse, cfg.knn);
    p.d_geo = std::move(geo.distances);
    p.disconnected_pairs = geo.disconnected_pairs;
    set_ids(p.d_geo);
  }
  return p;
}

template <typename T>
Preprocessed preprocess(BasicDataset<T> ds, const PipelineConfig& cfg) {
  return preprocess(clean_dataset(std::move(ds), cfg), cfg);
}

// ---- persistence of the preprocessing stage ----

inline nlohmann::json triangulation_to_json(const std::vector<TriangulationResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json j;
    j["cluster"] = r.cluster;
    nlohmann::json est = nlohmann::json::array();
    for (std::size_t b = 0; b < r.bearings.estimates.size(); ++b) {
      const auto& e = r.bearings.estimates[b];
      est.push_back({{"array", e.array}, {"azimuth", e.azimuth}, {"kappa", e.kappa}, {"valid", static_cast<bool>(r.bearings.valid[b])}});
    }
    j["bearings"] = est;
    if (r.position) j["position"] = {r.position->x(), r.position->y()};
    else j["failure"] = r.failure;
    arr.push_back(j);
  }
  return arr;
}

inline std::vector<TriangulationResult> triangulation_from_json(const nlohmann::json& arr) {
  std::vector<TriangulationResult> out;
  for (const auto& j : arr) {
    TriangulationResult r;
    r.cluster = j.at("cluster").get<std::size_t>();
    for (const auto& e : j.at("bearings")) {
      r.bearings.estimates.push_back({e.at("array").get<std::size_t>(), e.at("azimuth").get<double>(), e.at("kappa").get<double>()});
      r.bearings.valid.push_back(e.at("valid").get<bool>());
    }
    if (j.contains("position")) r.position = Vec2(j["position"][0].get<double>(), j["position"][1].get<double>());
    else r.failure = j.value("failure", std::string());
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw io_error("write failed: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path.string() + ": " + e.what());
  }
}

namespace files {
inline constexpr const char* clusters = "clusters.json";
inline constexpr const char* features = "features.bin";
inline constexpr const char* triangulation = "triangulation.json";
inline constexpr const char* d_cs = "dissim_cs.bin";
inline constexpr const char* d_fuse = "dissim_fuse.bin";
inline constexpr const char* d_geo = "dissim_geo.bin";
}  // namespace files

inline void save_preprocessed(const Preprocessed& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["geometry"] = geometry_to_json(p.geometry);
  j["area"] = area_to_json(p.area);
  nlohmann::json cl = nlohmann::json::array();
  for (const auto& c : p.clusters)
    cl.push_back({{"id", c.id},
                  {"mean_time", c.mean_time},
                  {"mean_position", {c.mean_position.x(), c.mean_position.y(), c.mean_position.z()}},
                  {"members", c.members},
                  {"train", static_cast<bool>(p.split.is_train[c.id])}});
  j["clusters"] = cl;
  nlohmann::json orders = nlohmann::json::object();
  for (const auto& [tx, k] : p.clutter_orders) orders[std::to_string(tx)] = k;
  j["clutter_orders"] = orders;
  j["time_slope"] = p.time_slope;
  j["disconnected_pairs"] = p.disconnected_pairs;
  write_json(j, dir / files::clusters);
  save_features(p.features, dir / files::features);
  write_json(triangulation_to_json(p.triangulation), dir / files::triangulation);
  save_dissimilarities(p.d_cs, dir / files::d_cs);
  save_dissimilarities(p.d_fuse, dir / files::d_fuse);
  if (p.d_geo.n > 0) save_dissimilarities(p.d_geo, dir / files::d_geo);
  else std::filesystem::remove(dir / files::d_geo);
}

/// Loads a preprocessing directory. Without `need_dissimilarities` the
/// dissimilarity files may be absent.
inline Preprocessed load_preprocessed(const std::filesystem::path& dir, bool need_dissimilarities) {
  if (!std::filesystem::exists(dir / files::clusters) || !std::filesystem::exists(dir / files::features))
    throw validation_error("no preprocessed data in " + dir.string() + "; run `pcc preprocess` first");
  Preprocessed p;
  const auto j = read_json(dir / files::clusters);
  try {
    p.geometry = geometry_from_json(j.at("geometry"));
    p.area = area_from_json(j.at("area"));
    for (const auto& c : j.at("clusters")) {
      ClusterInfo ci;
      ci.id = c.at("id").get<std::uint32_t>();
      ci.mean_time = c.at("mean_time").get<double>();
      const auto& x = c.at("mean_position");
      ci.mean_position = Vec3(x[0].get<double>(), x[1].get<double>(), x[2].get<double>());
      ci.members = c.at("members").get<std::size_t>();
      require(ci.id == p.clusters.size(), "preprocessed: cluster ids must be consecutive");
      const bool train = c.at("train").get<bool>();
      p.split.is_train.push_back(train);
      (train ? p.split.train : p.split.test).push_back(ci.id);
      p.clusters.push_back(ci);
    }
    for (const auto& [tx, k] : j.at("clutter_orders").items())
      p.clutter_orders[static_cast<std::uint32_t>(std::stoul(tx))] = k.get<Eigen::Index>();
    p.time_slope = j.at("time_slope").get<double>();
    p.disconnected_pairs = j.at("disconnected_pairs").get<std::size_t>();
    p.triangulation = triangulation_from_json(read_json(dir / files::triangulation));
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("preprocessed metadata: " + std::string(e.what()));
  }
  p.features = load_features(dir / files::features);
  require(p.features.size() == p.clusters.size(), "preprocessed: feature count does not match clusters");
  require(p.triangulation.size() == p.clusters.size(), "preprocessed: triangulation count does not match clusters");
  if (need_dissimilarities) {
    for (const char* f : {files::d_cs, files::d_fuse, files::d_geo})
      if (!std::filesystem::exists(dir / f))
        throw validation_error(std::string("missing cached dissimilarities ") + f + " in " + dir.string() +
                               "; run `pcc preprocess` with enough training clusters (more than knn)");
    p.d_cs = load_dissimilarities(dir / files::d_cs);
    p.d_fuse = load_dissimilarities(dir / files::d_fuse);
    p.d_geo = load_dissimilarities(dir / files::d_geo);
    require(p.d_geo.n == p.split.train.size(), "preprocessed: dissimilarities do not match the training clusters");
  }
  return p;
}

// ---- training on preprocessed data ----

enum class TrainMode { fingerprint, cc, cc_aug };

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "fingerprint") return TrainMode::fingerprint;
  if (s == "cc") return TrainMode::cc;
  if (s == "cc-aug") return TrainMode::cc_aug;
  throw validation_error("unknown training mode '" + s + "' (fingerprint, cc, cc-aug)");
}

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::fingerprint: return "fingerprint";
    case TrainMode::cc: return "cc";
    case TrainMode::cc_aug: return "cc-aug";
  }
  return "?";
}

struct TrainOutputs {
  Mlp<float> net;
  std::vector<double> loss_history;
  Points2 predictions;  // every cluster, in cluster order
  double scale = 1.0;   // dissimilarity-to-meter factor (cc-aug)
};

template <typename Scalar>
Points2 predict(const Mlp<Scalar>& net, const FeatureMatrix<Scalar>& x, Eigen::Index chunk = 256) {
  Points2 out(2, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); c += chunk) {
    const Eigen::Index w = std::min(chunk, x.cols() - c);
    out.middleCols(c, w) = net.forward(x.middleCols(c, w)).template cast<double>();
  }
  return out;
}

inline TriContexts tri_contexts(const Preprocessed& p, const std::vector<std::size_t>& which, double kappa_min) {
  TriContexts t;
  t.geometry = p.geometry;
  t.height = p.area.height;
  for (auto c : which) t.clusters.push_back(tri_context(p.triangulation.at(c).bearings, kappa_min));
  return t;
}

inline TrainOutputs train_model(const Preprocessed& p, TrainMode mode, const TrainConfig& cfg,
                                double kappa_min = TriangulationOptions{}.kappa_min, std::size_t scale_pairs = 100000,
                                std::uint64_t scale_seed = 7) {
  const auto& train = p.split.train;
  require(!train.empty(), "train: no training clusters");
  const FeatureMatrix<float> x = feature_matrix<float>(p.features, train);
  TrainOutputs out;
  TrainResult<float> r;
  if (mode == TrainMode::fingerprint) {
    r = train_fingerprint<float>(x, p.labels(train), cfg);
  } else {
    if (p.d_geo.n == 0)
      throw validation_error("charting needs cached geodesic dissimilarities; run `pcc preprocess` first");
    require(p.d_geo.n == train.size(), "train: dissimilarities do not match the training clusters");
    if (mode == TrainMode::cc) {
      r = train_siamese<float>(x, p.d_geo, cfg);
    } else {
      std::vector<std::optional<Vec2>> pos;
      for (auto c : train) pos.push_back(p.triangulation.at(c).position);
      auto scaled = scale_to_meters(p.d_geo, pos, scale_pairs, scale_seed);
      out.scale = scaled.scale;
      r = train_augmented<float>(x, scaled.scaled, tri_contexts(p, train, kappa_min), cfg);
    }
  }
  out.net = std::move(r.net);
  out.loss_history = std::move(r.loss_history);
  std::vector<std::size_t> all(p.clusters.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  out.predictions = predict(out.net, feature_matrix<float>(p.features, all));
  return out;
}

// ---- content hashing for stage caching ----

class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot read " + path.string());
    std::vector<char> buf(1 << 20);
    while (is) {
      is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      update(buf.data(), static_cast<std::size_t>(is.gcount()));
    }
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 0; i < 16; ++i) s[15 - i] = digits[(h_ >> (4 * i)) & 0xf];
    return s;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace pcc
