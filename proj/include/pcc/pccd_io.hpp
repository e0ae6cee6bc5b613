#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pcc/binio.hpp"
#include "pcc/dataset.hpp"

// PCCD dataset directory: meta.json (geometry, L, format tag) and data.bin
// (L fixed-size little-endian records, CSI as interleaved float32 pairs).
namespace pcc {

inline constexpr const char* pccd_format_version = "pccd-1";

namespace detail {

inline nlohmann::json vec3_list_to_json(const std::vector<Vec3>& v) {
  auto arr = nlohmann::json::array();
  for (const auto& x : v) arr.push_back({x.x(), x.y(), x.z()});
  return arr;
}

inline std::vector<Vec3> vec3_list_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) throw validation_error(std::string("meta.json: missing ") + key);
  std::vector<Vec3> out;
  for (const auto& e : j.at(key)) {
    if (!e.is_array() || e.size() != 3) throw validation_error(std::string("meta.json: bad 3-vector in ") + key);
    out.emplace_back(e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>());
  }
  return out;
}

}  // namespace detail

inline nlohmann::json geometry_to_json(const ScenarioGeometry& g) {
  return {{"B", g.arrays},
          {"M_r", g.rows},
          {"M_c", g.cols},
          {"N_sub", g.subcarriers},
          {"N_TX", g.transmitters},
          {"f_c", g.carrier_hz},
          {"W", g.bandwidth_hz},
          {"array_centers", detail::vec3_list_to_json(g.array_centers)},
          {"array_boresights", detail::vec3_list_to_json(g.array_boresights)},
          {"array_row_axes", detail::vec3_list_to_json(g.array_row_axes)},
          {"array_col_axes", detail::vec3_list_to_json(g.array_col_axes)},
          {"element_spacing", g.element_spacing},
          {"tx_positions", detail::vec3_list_to_json(g.tx_positions)}};
}

inline ScenarioGeometry geometry_from_json(const nlohmann::json& j) {
  try {
    ScenarioGeometry g;
    g.arrays = j.at("B").get<std::size_t>();
    g.rows = j.at("M_r").get<std::size_t>();
    g.cols = j.at("M_c").get<std::size_t>();
    g.subcarriers = j.at("N_sub").get<std::size_t>();
    g.transmitters = j.at("N_TX").get<std::size_t>();
    g.carrier_hz = j.at("f_c").get<double>();
    g.bandwidth_hz = j.at("W").get<double>();
    g.array_centers = detail::vec3_list_from_json(j, "array_centers");
    g.array_boresights = detail::vec3_list_from_json(j, "array_boresights");
    g.array_row_axes = detail::vec3_list_from_json(j, "array_row_axes");
    g.array_col_axes = detail::vec3_list_from_json(j, "array_col_axes");
    g.element_spacing = j.value("element_spacing", 0.0);
    g.tx_positions = detail::vec3_list_from_json(j, "tx_positions");
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("geometry JSON: ") + e.what());
  }
}

inline nlohmann::json area_to_json(const Area& a) {
  return {{"x_min", a.x_min}, {"x_max", a.x_max}, {"y_min", a.y_min}, {"y_max", a.y_max}, {"height", a.height}};
}

inline Area area_from_json(const nlohmann::json& j) {
  Area a;
  a.x_min = j.value("x_min", a.x_min);
  a.x_max = j.value("x_max", a.x_max);
  a.y_min = j.value("y_min", a.y_min);
  a.y_max = j.value("y_max", a.y_max);
  a.height = j.value("height", a.height);
  return a;
}

inline std::size_t pccd_record_bytes(const ScenarioGeometry& g) {
  return 8 + 24 + 4 + g.csi_size() * 8;
}

/// Writes the PCCD directory. CSI is stored in single precision.
template <typename T>
void save_dataset(const BasicDataset<T>& dataset, const std::filesystem::path& dir) {
  dataset.geometry.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create dataset directory " + dir.string() + ": " + ec.message());

  nlohmann::json meta = geometry_to_json(dataset.geometry);
  meta["format"] = pccd_format_version;
  meta["L"] = dataset.size();
  if (dataset.area) meta["area"] = area_to_json(*dataset.area);
  {
    std::ofstream os(dir / "meta.json", std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot write " + (dir / "meta.json").string());
    os << meta.dump(2) << '\n';
    if (!os) throw io_error("write failed: meta.json");
  }

  std::ofstream os(dir / "data.bin", std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot write " + (dir / "data.bin").string());
  const std::size_t q = dataset.geometry.csi_size();
  for (const auto& p : dataset.datapoints) {
    if (p.csi.size() != q) throw validation_error("datapoint CSI shape does not match geometry");
    binio::write<double>(os, p.timestamp);
    for (int k = 0; k < 3; ++k) binio::write<double>(os, p.position[k]);
    binio::write<std::uint32_t>(os, p.tx_index);
    for (const auto& h : p.csi) {
      binio::write<float>(os, static_cast<float>(h.real()));
      binio::write<float>(os, static_cast<float>(h.imag()));
    }
  }
  if (!os) throw io_error("write failed: data.bin");
}

/// Reads a PCCD directory. Datapoints are returned sorted by time.
template <typename T = double>
BasicDataset<T> load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const auto data_path = dir / "data.bin";
  if (!std::filesystem::exists(meta_path)) throw io_error("missing " + meta_path.string());
  if (!std::filesystem::exists(data_path)) throw io_error("missing " + data_path.string());

  nlohmann::json meta;
  {
    std::ifstream is(meta_path);
    try {
      is >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(std::string("malformed meta.json: ") + e.what());
    }
  }
  if (meta.value("format", std::string()) != pccd_format_version)
    throw validation_error("malformed header: unsupported format tag in meta.json");
  if (!meta.contains("L")) throw validation_error("malformed header: meta.json lacks L");

  BasicDataset<T> ds;
  ds.geometry = geometry_from_json(meta);
  if (meta.contains("area")) ds.area = area_from_json(meta.at("area"));
  const auto count = meta.at("L").get<std::size_t>();
  const std::size_t q = ds.geometry.csi_size();

  const auto bytes = std::filesystem::file_size(data_path);
  if (bytes != count * pccd_record_bytes(ds.geometry))
    throw validation_error("shape mismatch: data.bin size does not match L and geometry in meta.json");

  std::ifstream is(data_path, std::ios::binary);
  if (!is) throw io_error("cannot read " + data_path.string());
  ds.datapoints.resize(count);
  for (auto& p : ds.datapoints) {
    p.timestamp = binio::read<double>(is);
    for (int k = 0; k < 3; ++k) p.position[k] = binio::read<double>(is);
    p.tx_index = binio::read<std::uint32_t>(is);
    p.csi.resize(q);
    for (auto& h : p.csi) {
      const float re = binio::read<float>(is);
      const float im = binio::read<float>(is);
      h = {static_cast<T>(re), static_cast<T>(im)};
    }
  }
  if (!ds.is_time_sorted()) ds.sort_by_time();
  ds.validate();
  return ds;
}

}  // namespace pcc
