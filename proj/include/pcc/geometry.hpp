#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "pcc/error.hpp"

namespace pcc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double speed_of_light = 299792458.0;

/// Static description of the multi-static receiver/transmitter setup.
///
/// Each receiver is a planar M_r x M_c array. Its plane is spanned by the row
/// axis (direction along which rows are stacked) and the column axis (along
/// which the elements of a row are laid out). Azimuth is measured from the
/// boresight towards the column axis.
struct ScenarioGeometry {
  std::size_t arrays = 4;         // B
  std::size_t rows = 2;           // M_r
  std::size_t cols = 4;           // M_c
  std::size_t subcarriers = 53;   // N_sub
  std::size_t transmitters = 4;   // N_TX
  double carrier_hz = 2.472e9;
  double bandwidth_hz = 16.56e6;
  std::vector<Vec3> array_centers;
  std::vector<Vec3> array_boresights;
  std::vector<Vec3> array_row_axes;
  std::vector<Vec3> array_col_axes;
  double element_spacing = 0.0;   // m; 0 means half a wavelength at the carrier
  std::vector<Vec3> tx_positions;

  std::size_t antennas_per_array() const { return rows * cols; }
  /// Length of a vectorized CSI array, Q = B * M_r * M_c * N_sub.
  std::size_t csi_size() const { return arrays * rows * cols * subcarriers; }

  double wavelength() const { return speed_of_light / carrier_hz; }
  double spacing() const { return element_spacing > 0.0 ? element_spacing : 0.5 * wavelength(); }
  double spacing_wavelengths() const { return spacing() / wavelength(); }

  /// Subcarrier spacing of the symmetric grid f_n = f_c + (n - (N-1)/2) * W / (N-1).
  double subcarrier_spacing() const {
    return subcarriers > 1 ? bandwidth_hz / static_cast<double>(subcarriers - 1) : 0.0;
  }
  double subcarrier_offset(std::size_t n) const {
    return (static_cast<double>(n) - 0.5 * static_cast<double>(subcarriers - 1)) * subcarrier_spacing();
  }
  double subcarrier_frequency(std::size_t n) const { return carrier_hz + subcarrier_offset(n); }

  /// Row-major (b, m_r, m_c, n) index into a vectorized CSI array.
  std::size_t csi_index(std::size_t b, std::size_t r, std::size_t c, std::size_t n) const {
    return ((b * rows + r) * cols + c) * subcarriers + n;
  }

  Vec3 element_position(std::size_t b, std::size_t r, std::size_t c) const {
    const double dr = static_cast<double>(r) - 0.5 * static_cast<double>(rows - 1);
    const double dc = static_cast<double>(c) - 0.5 * static_cast<double>(cols - 1);
    return array_centers[b] + spacing() * (dr * array_row_axes[b] + dc * array_col_axes[b]);
  }

  /// Azimuth of point p seen from array b, relative to boresight, positive
  /// towards the column axis. The row-axis component is ignored.
  double azimuth(std::size_t b, const Vec3& p) const {
    const Vec3 d = p - array_centers[b];
    return std::atan2(d.dot(array_col_axes[b]), d.dot(array_boresights[b]));
  }

  void validate() const {
    require(arrays >= 1 && rows >= 1 && cols >= 2 && subcarriers >= 1 && transmitters >= 1,
            "geometry: counts out of range (need B>=1, M_r>=1, M_c>=2, N_sub>=1, N_TX>=1)");
    require(carrier_hz > 0.0 && bandwidth_hz >= 0.0, "geometry: carrier/bandwidth must be positive");
    require(array_centers.size() == arrays && array_boresights.size() == arrays &&
                array_row_axes.size() == arrays && array_col_axes.size() == arrays,
            "geometry: per-array vectors must have B entries");
    require(tx_positions.size() == transmitters, "geometry: tx_positions must have N_TX entries");
    require(element_spacing >= 0.0, "geometry: element spacing must be nonnegative");
    constexpr double tol = 1e-9;
    for (std::size_t b = 0; b < arrays; ++b) {
      const Vec3& n = array_boresights[b];
      const Vec3& r = array_row_axes[b];
      const Vec3& c = array_col_axes[b];
      require(std::abs(n.norm() - 1.0) < tol && std::abs(r.norm() - 1.0) < tol &&
                  std::abs(c.norm() - 1.0) < tol,
              "geometry: array axes must be unit vectors");
      require(std::abs(n.dot(r)) < tol && std::abs(n.dot(c)) < tol && std::abs(r.dot(c)) < tol,
              "geometry: array axes must be mutually orthogonal");
    }
  }

  bool operator==(const ScenarioGeometry&) const = default;
};

/// Rectangular measurement area at a known target height.
struct Area {
  double x_min = 0.0;
  double x_max = 4.5;
  double y_min = 0.0;
  double y_max = 4.5;
  double height = 1.0;

  double width() const { return x_max - x_min; }
  double depth() const { return y_max - y_min; }
  bool contains(const Vec2& p, double slack = 1e-9) const {
    return p.x() >= x_min - slack && p.x() <= x_max + slack && p.y() >= y_min - slack &&
           p.y() <= y_max + slack;
  }
  Vec3 lift(const Vec2& p) const { return {p.x(), p.y(), height}; }

  bool operator==(const Area&) const = default;
};

/// Four 2x4 arrays centred on the edges of a 4.5 m square, 1 m outside and
/// facing inward, with four ceiling transmitters near the corners.
inline ScenarioGeometry standard_geometry(const Area& area = {}) {
  ScenarioGeometry g;
  const double cx = 0.5 * (area.x_min + area.x_max);
  const double cy = 0.5 * (area.y_min + area.y_max);
  const double h = area.height;
  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 centers[4] = {{area.x_min - 1.0, cy, h},
                           {area.x_max + 1.0, cy, h},
                           {cx, area.y_min - 1.0, h},
                           {cx, area.y_max + 1.0, h}};
  const Vec3 normals[4] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
  for (int b = 0; b < 4; ++b) {
    g.array_centers.push_back(centers[b]);
    g.array_boresights.push_back(normals[b]);
    g.array_row_axes.push_back(up);
    g.array_col_axes.push_back(up.cross(normals[b]));
  }
  g.tx_positions = {{area.x_min - 0.3, area.y_min - 0.3, 2.5},
                    {area.x_max + 0.3, area.y_min - 0.3, 2.5},
                    {area.x_min - 0.3, area.y_max + 0.3, 2.5},
                    {area.x_max + 0.3, area.y_max + 0.3, 2.5}};
  return g;
}

}  // namespace pcc
