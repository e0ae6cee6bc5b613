#pragma once

#include <complex>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "pcc/error.hpp"
#include "pcc/geometry.hpp"

namespace testing_util {

inline std::vector<std::complex<double>> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<std::complex<double>> v(n);
  for (auto& x : v) x = {g(rng), g(rng)};
  return v;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pcc_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Kind of the pcc::Error thrown by f, or nullopt when nothing is thrown.
template <typename F>
std::optional<pcc::ErrorKind> thrown_kind(F&& f) {
  try {
    f();
  } catch (const pcc::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Single array, small enough for brute-force checks.
inline pcc::ScenarioGeometry tiny_geometry(std::size_t arrays = 1, std::size_t rows = 1, std::size_t cols = 4,
                                           std::size_t subcarriers = 8, std::size_t transmitters = 1) {
  auto g = pcc::standard_geometry();
  g.rows = rows;
  g.cols = cols;
  g.subcarriers = subcarriers;
  g.transmitters = transmitters;
  g.arrays = arrays;
  g.array_centers.resize(arrays);
  g.array_boresights.resize(arrays);
  g.array_row_axes.resize(arrays);
  g.array_col_axes.resize(arrays);
  g.tx_positions.resize(transmitters, pcc::Vec3(0.2, 0.2, 2.5));
  return g;
}

}  // namespace testing_util
