#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pcc/pcc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcc;

namespace {

constexpr const char* manifest_name = "manifest.json";

/// Section `name` of a combined config file; a file without sections is
/// taken as the section itself.
json config_section(const std::string& path, const char* name) {
  if (path.empty()) return json::object();
  const auto j = read_json(path);
  require(j.is_object(), "config " + path + ": top level must be an object");
  for (const char* s : {"sim", "trajectory", "pipeline", "train"})
    if (j.contains(s)) return j.value(name, json::object());
  return j;
}

std::string hash_files(const std::vector<fs::path>& files, const std::string& extra) {
  Fnv1a h;
  h.update(tool_version);
  for (const auto& f : files) {
    h.update(f.filename().string());
    h.update_file(f);
  }
  h.update(extra);
  return h.hex();
}

std::string hash_file(const fs::path& f) {
  Fnv1a h;
  h.update_file(f);
  return h.hex();
}

json manifest(const std::string& command, json inputs, json config, json outputs) {
  return {{"tool", "pcc"},
          {"version", tool_version},
          {"command", command},
          {"inputs", std::move(inputs)},
          {"config", std::move(config)},
          {"outputs", std::move(outputs)}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw io_error("cannot write " + p.string());
  os.precision(17);
  return os;
}

const char* split_name(const ClusterSplit& s, std::size_t c) { return s.is_train[c] ? "train" : "test"; }

// ---- simulate ----

int cmd_simulate(const std::string& config, const fs::path& out) {
  const auto sim = sim_config_from_json(config_section(config, "sim"));
  const auto traj_cfg = trajectory_config_from_json(config_section(config, "trajectory"));
  const auto traj = generate_trajectory(traj_cfg, sim.area);
  const auto ds = simulate_dataset(sim, traj);
  save_dataset(ds, out);
  write_json(manifest("simulate", json::object(),
                      {{"sim", sim_config_to_json(sim)}, {"trajectory", trajectory_config_to_json(traj_cfg)}},
                      {{"meta.json", hash_file(out / "meta.json")}, {"data.bin", hash_file(out / "data.bin")}}),
             out / manifest_name);
  std::cout << json{{"datapoints", ds.size()}, {"out", out.string()}}.dump() << '\n';
  return 0;
}

// ---- preprocess ----

int cmd_preprocess(const fs::path& dataset, const std::string& config, const fs::path& out, bool force) {
  const auto pc = pipeline_config_from_json(config_section(config, "pipeline"));
  const json cfg = pipeline_config_to_json(pc);
  const std::string key = hash_files({dataset / "meta.json", dataset / "data.bin"}, cfg.dump());

  const auto mpath = out / manifest_name;
  if (!force && fs::exists(mpath)) {
    const auto m = read_json(mpath);
    bool complete = m.value("cache_key", std::string()) == key;
    if (complete && m.contains("outputs"))
      for (const auto& [name, hash] : m["outputs"].items())
        complete = complete && fs::exists(out / name) && hash_file(out / name) == hash.get<std::string>();
    if (complete) {
      std::cout << json{{"cached", true}, {"key", key}}.dump() << '\n';
      return 0;
    }
  }

  auto p = preprocess(load_dataset<float>(dataset), pc);
  ensure_dir(out);
  save_preprocessed(p, out);
  json outputs = json::object();
  for (const char* f : {files::clusters, files::features, files::triangulation, files::d_cs, files::d_fuse, files::d_geo})
    if (fs::exists(out / f)) outputs[f] = hash_file(out / f);
  auto m = manifest("preprocess", {{"dataset", dataset.string()}}, cfg, outputs);
  m["cache_key"] = key;
  write_json(m, mpath);
  std::cout << json{{"cached", false},
                    {"key", key},
                    {"clusters", p.clusters.size()},
                    {"train_clusters", p.split.train.size()},
                    {"flagged", count_flagged(p.triangulation)},
                    {"time_slope", p.time_slope},
                    {"disconnected_pairs", p.disconnected_pairs}}
                   .dump()
            << '\n';
  return 0;
}

// ---- baseline-tri ----

int cmd_baseline_tri(const fs::path& dataset, const std::string& config, const std::string& clutter_order,
                     double grid_pitch, const fs::path& out) {
  auto pc = pipeline_config_from_json(config_section(config, "pipeline"));
  if (!clutter_order.empty()) {
    if (clutter_order == "auto") {
      pc.crap.order.reset();
    } else {
      std::size_t used = 0;
      long k = 0;
      try {
        k = std::stol(clutter_order, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == clutter_order.size() && k >= 1, "--clutter-order must be a positive integer or 'auto'");
      pc.crap.order = k;
    }
  }
  if (grid_pitch > 0.0) pc.triangulation.grid_pitch = grid_pitch;
  pc.validate();

  const auto clean = clean_dataset(load_dataset<float>(dataset), pc);
  const Area area = clean.dataset.area.value_or(Area{});
  const auto tri = triangulate_clusters(clean.dataset, clean.clusters, area, pc.triangulation, pc.kappa);

  if (out.has_parent_path()) ensure_dir(out.parent_path());
  {
    auto os = open_out(out);
    const std::size_t arrays = clean.dataset.geometry.arrays;
    os << "cluster_id,split,mean_time,label_x,label_y,pred_x,pred_y";
    for (std::size_t b = 0; b < arrays; ++b) os << ",alpha_" << b << ",kappa_" << b;
    os << ",flag\n";
    for (std::size_t c = 0; c < tri.size(); ++c) {
      const auto& cl = clean.clusters[c];
      const auto& r = tri[c];
      os << c << ',' << split_name(clean.split, c) << ',' << cl.mean_time << ',' << cl.mean_position.x() << ','
         << cl.mean_position.y() << ',';
      if (r.position) os << r.position->x() << ',' << r.position->y();
      else os << "nan,nan";
      for (std::size_t b = 0; b < arrays; ++b) {
        const auto& e = r.bearings.estimates[b];
        if (r.bearings.valid[b]) os << ',' << e.azimuth << ',' << e.kappa;
        else os << ",nan,0";
      }
      os << ',' << (r.position ? 0 : 1) << '\n';
    }
    if (!os) throw io_error("write failed: " + out.string());
  }

  json cfg = pipeline_config_to_json(pc);
  json orders = json::object();
  for (const auto& [tx, m] : clean.clutter) orders[std::to_string(tx)] = m.order();
  auto m = manifest("baseline-tri", {{"dataset", dataset.string()}}, cfg, {{out.filename().string(), hash_file(out)}});
  m["clutter_orders"] = orders;
  write_json(m, fs::path(out.string() + ".manifest.json"));
  std::cout << json{{"clusters", tri.size()}, {"flagged", count_flagged(tri)}, {"out", out.string()}}.dump() << '\n';
  return 0;
}

// ---- train ----

int cmd_train(const fs::path& pre, const std::string& mode_name, const std::string& config, const fs::path& out) {
  const auto mode = parse_train_mode(mode_name);
  const auto tc = train_config_from_json(config_section(config, "train"));
  // The likelihood threshold and meter scaling follow the preprocessing manifest.
  PipelineConfig pc;
  if (fs::exists(pre / manifest_name)) pc = pipeline_config_from_json(read_json(pre / manifest_name).value("config", json::object()));
  const auto p = load_preprocessed(pre, mode != TrainMode::fingerprint);
  const auto res = train_model(p, mode, tc, pc.triangulation.kappa_min, pc.scale_pairs, pc.scale_seed);

  ensure_dir(out);
  save_mlp(res.net, out / "model.bin");
  save_loss_history(res.loss_history, out / "loss.csv");
  {
    auto os = open_out(out / "predictions.csv");
    os << "cluster_id,split,mean_time,label_x,label_y,pred_x,pred_y\n";
    for (std::size_t c = 0; c < p.clusters.size(); ++c) {
      const auto& ci = p.clusters[c];
      const auto ec = static_cast<Eigen::Index>(c);
      os << c << ',' << split_name(p.split, c) << ',' << ci.mean_time << ',' << ci.mean_position.x() << ','
         << ci.mean_position.y() << ',' << res.predictions(0, ec) << ',' << res.predictions(1, ec) << '\n';
    }
    if (!os) throw io_error("write failed: predictions.csv");
  }
  json outputs = json::object();
  for (const char* f : {"model.bin", "loss.csv", "predictions.csv"}) outputs[f] = hash_file(out / f);
  auto m = manifest("train", {{"preprocessed", pre.string()}, {"mode", to_string(mode)}}, train_config_to_json(tc), outputs);
  if (mode == TrainMode::cc_aug) m["dissimilarity_scale"] = res.scale;
  write_json(m, out / manifest_name);
  std::cout << json{{"mode", to_string(mode)},
                    {"epochs", res.loss_history.size()},
                    {"first_loss", res.loss_history.front()},
                    {"final_loss", res.loss_history.back()}}
                   .dump()
            << '\n';
  return 0;
}

// ---- evaluate ----

struct PredictionTable {
  Points2 preds, labels;
  std::size_t excluded = 0;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

PredictionTable read_predictions(const fs::path& path, const std::string& split) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), path.string() + ": empty file");
  const auto header = split_csv(line);
  auto col = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw validation_error(path.string() + ": missing column " + name);
  };
  const std::size_t cs = col("split"), lx = col("label_x"), ly = col("label_y"), px = col("pred_x"), py = col("pred_y");
  std::vector<Vec2> preds, labels;
  PredictionTable t;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    require(cells.size() == header.size(), path.string() + ": wrong cell count in row " + std::to_string(row));
    if (split != "all" && cells[cs] != split) continue;
    auto num = [&](std::size_t i) {
      try {
        return std::stod(cells[i]);
      } catch (const std::exception&) {
        throw validation_error(path.string() + ": bad number in row " + std::to_string(row));
      }
    };
    const Vec2 p(num(px), num(py)), l(num(lx), num(ly));
    require(std::isfinite(l.x()) && std::isfinite(l.y()), path.string() + ": non-finite label in row " + std::to_string(row));
    if (!std::isfinite(p.x()) || !std::isfinite(p.y())) {
      ++t.excluded;
      continue;
    }
    preds.push_back(p);
    labels.push_back(l);
  }
  require(!preds.empty(), path.string() + ": no evaluable rows for split '" + split + "'");
  t.preds.resize(2, static_cast<Eigen::Index>(preds.size()));
  t.labels.resize(2, static_cast<Eigen::Index>(preds.size()));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    t.preds.col(static_cast<Eigen::Index>(i)) = preds[i];
    t.labels.col(static_cast<Eigen::Index>(i)) = labels[i];
  }
  return t;
}

int cmd_evaluate(const fs::path& predictions, const std::string& split, bool affine, const fs::path& out) {
  require(split == "train" || split == "test" || split == "all", "--split must be train, test or all");
  const auto t = read_predictions(predictions, split);
  const auto rep = evaluate_predictions(t.preds, t.labels, affine, t.excluded);
  const Points2 aligned = affine ? rep.transform.apply(t.preds) : t.preds;
  const Eigen::VectorXd err = position_errors(aligned, t.labels);

  ensure_dir(out);
  write_json(rep.to_json(), out / "report.json");
  save_cdf(error_cdf(std::span<const double>(err.data(), static_cast<std::size_t>(err.size()))), out / "cdf.csv");
  {
    auto os = open_out(out / "chart.svg");
    os << chart_svg(aligned, t.labels);
  }
  json outputs = json::object();
  for (const char* f : {"report.json", "cdf.csv", "chart.svg"}) outputs[f] = hash_file(out / f);
  write_json(manifest("evaluate",
                      {{"predictions", predictions.string()}, {"predictions_hash", hash_file(predictions)}},
                      {{"split", split}, {"affine", affine}}, outputs),
             out / manifest_name);
  std::cout << rep.to_json().dump() << '\n';
  return 0;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::io: return "io";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

int report_error(const char* kind, int code, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"code", code}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passive channel charting: simulation, preprocessing, baselines, charting and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tool_version));
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (results do not depend on this)")->check(CLI::Range(1, 1024));

  std::string config, dataset, out, pre, mode, predictions, split = "test", clutter_order;
  double grid_pitch = 0.0;
  bool affine = false, force = false;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic PCCD dataset");
  sim->add_option("--config", config, "JSON config with optional 'sim' and 'trajectory' sections");
  sim->add_option("--out", out, "Output dataset directory")->required();

  auto* prep = app.add_subcommand("preprocess", "Clutter removal, clustering, features, triangulation, dissimilarities");
  prep->add_option("--dataset", dataset, "PCCD dataset directory")->required();
  prep->add_option("--config", config, "JSON config with an optional 'pipeline' section");
  prep->add_option("--out", out, "Output directory")->required();
  prep->add_flag("--force", force, "Recompute even when the cache key matches");

  auto* tri = app.add_subcommand("baseline-tri", "Root-MUSIC triangulation baseline");
  tri->add_option("--dataset", dataset, "PCCD dataset directory")->required();
  tri->add_option("--config", config, "JSON config with an optional 'pipeline' section");
  tri->add_option("--clutter-order", clutter_order, "Clutter order K or 'auto'");
  tri->add_option("--grid-pitch", grid_pitch, "Coarse search pitch in m")->check(CLI::PositiveNumber);
  tri->add_option("--out", out, "Output CSV")->required();

  auto* train = app.add_subcommand("train", "Train a fingerprinting or charting network");
  train->add_option("--preprocessed", pre, "Output directory of `pcc preprocess`")->required();
  train->add_option("--mode", mode, "fingerprint, cc or cc-aug")->required();
  train->add_option("--config", config, "JSON config with an optional 'train' section");
  train->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "Localization and chart-quality metrics");
  eval->add_option("--predictions", predictions, "predictions.csv or estimates.csv")->required();
  eval->add_option("--split", split, "train, test or all");
  eval->add_flag("--affine", affine, "Align predictions with the optimal affine transform first");
  eval->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("validation", 3, e.what());
  }

  set_thread_count(threads);
  try {
    if (*sim) return cmd_simulate(config, out);
    if (*prep) return cmd_preprocess(dataset, config, out, force);
    if (*tri) return cmd_baseline_tri(dataset, config, clutter_order, grid_pitch, out);
    if (*train) return cmd_train(pre, mode, config, out);
    if (*eval) return cmd_evaluate(predictions, split, affine, out);
  } catch (const Error& e) {
    return report_error(kind_name(e.kind()), e.exit_code(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error("io", 2, e.what());
  } catch (const std::bad_alloc&) {
    return report_error("numerical", 4, "out of memory");
  } catch (const std::exception& e) {
    return report_error("internal", 1, e.what());
  }
  return 0;
}
