#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <json.hpp>

#include "pcc/dataset.hpp"
#include "pcc/parallel.hpp"
#include "pcc/pccd_io.hpp"
#include "pcc/random.hpp"

namespace pcc {

struct TrajectorySample {
  double t = 0.0;
  Vec3 x = Vec3::Zero();
};

/// Time-ordered target positions, linearly interpolated between samples.
struct Trajectory {
  std::vector<TrajectorySample> samples;

  double start_time() const { return samples.empty() ? 0.0 : samples.front().t; }
  double end_time() const { return samples.empty() ? 0.0 : samples.back().t; }

  Vec3 position_at(double t) const {
    require(!samples.empty(), "trajectory is empty");
    if (t <= samples.front().t) return samples.front().x;
    if (t >= samples.back().t) return samples.back().x;
    auto it = std::upper_bound(samples.begin(), samples.end(), t,
                               [](double v, const TrajectorySample& s) { return v < s.t; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    const double w = (t - a.t) / (b.t - a.t);
    return (1.0 - w) * a.x + w * b.x;
  }

  double path_length() const {
    double len = 0.0;
    for (std::size_t i = 1; i < samples.size(); ++i) len += (samples[i].x - samples[i - 1].x).norm();
    return len;
  }
};

struct TrajectoryConfig {
  double duration = 600.0;     // s
  double speed = 0.2;          // m/s
  double max_turn_rate = 1.0;  // rad/s
  double sample_rate = 100.0;  // Hz
  std::uint64_t seed = 1;
};

/// Constant-speed random walk with a bounded, slowly varying turn rate.
/// The walker is mirrored back into the area at the boundaries.
inline Trajectory generate_trajectory(std::uint64_t seed, double duration, const Area& area, double speed,
                                      double max_turn_rate = 1.0, double sample_rate = 100.0) {
  require(area.width() > 0.0 && area.depth() > 0.0, "trajectory: area has zero extent");
  require(duration > 0.0, "trajectory: duration must be positive");
  require(speed >= 0.0, "trajectory: speed must be nonnegative");
  require(sample_rate > 0.0 && max_turn_rate >= 0.0, "trajectory: bad sample rate or turn rate");

  auto rng = substream(seed, 0x7472616aULL);
  const double margin_x = 0.05 * area.width();
  const double margin_y = 0.05 * area.depth();
  double x = area.x_min + margin_x + (area.width() - 2 * margin_x) * uniform01(rng);
  double y = area.y_min + margin_y + (area.depth() - 2 * margin_y) * uniform01(rng);
  double heading = 2.0 * std::numbers::pi * uniform01(rng);
  double turn = 0.0;

  const auto steps = static_cast<std::size_t>(std::ceil(duration * sample_rate));
  const double dt = duration / static_cast<double>(steps);
  std::normal_distribution<double> turn_noise(0.0, 1.0);

  Trajectory traj;
  traj.samples.reserve(steps + 1);
  traj.samples.push_back({0.0, area.lift({x, y})});
  for (std::size_t i = 1; i <= steps; ++i) {
    // Ornstein-Uhlenbeck-like turn rate, clamped.
    turn += -turn * dt + max_turn_rate * std::sqrt(2.0 * dt) * turn_noise(rng);
    turn = std::clamp(turn, -max_turn_rate, max_turn_rate);
    heading += turn * dt;
    x += speed * dt * std::cos(heading);
    y += speed * dt * std::sin(heading);
    if (x < area.x_min) { x = 2 * area.x_min - x; heading = std::numbers::pi - heading; }
    if (x > area.x_max) { x = 2 * area.x_max - x; heading = std::numbers::pi - heading; }
    if (y < area.y_min) { y = 2 * area.y_min - y; heading = -heading; }
    if (y > area.y_max) { y = 2 * area.y_max - y; heading = -heading; }
    traj.samples.push_back({static_cast<double>(i) * dt, area.lift({x, y})});
  }
  return traj;
}

inline Trajectory generate_trajectory(const TrajectoryConfig& cfg, const Area& area) {
  return generate_trajectory(cfg.seed, cfg.duration, area, cfg.speed, cfg.max_turn_rate, cfg.sample_rate);
}

struct SimConfig {
  ScenarioGeometry geometry = standard_geometry();
  Area area;
  std::size_t clutter_paths_per_tx = 6;
  double target_gain = 0.1;
  double noise_std = 1e-3;
  bool phase_random = true;
  double timing_jitter_std = 0.0;  // s
  /// Receiver timing reference relative to the propagation delays (s).
  /// Negative selects 27.5 taps of the N_sub-point transform, which centres
  /// the path energy in the default tap window.
  double timing_offset = -1.0;
  double packet_rate_per_tx = 25.0;
  std::uint64_t seed = 1;

  double effective_timing_offset() const {
    if (timing_offset >= 0.0) return timing_offset;
    const double df = geometry.subcarrier_spacing();
    return df > 0.0 ? 27.5 / (static_cast<double>(geometry.subcarriers) * df) : 0.0;
  }

  void validate() const {
    geometry.validate();
    require(area.width() > 0.0 && area.depth() > 0.0, "sim config: area has zero extent");
    require(noise_std >= 0.0 && timing_jitter_std >= 0.0, "sim config: noise levels must be nonnegative");
    require(packet_rate_per_tx > 0.0, "sim config: packet rate must be positive");
  }
};

/// A fixed point reflector contributing one specular path per transmitter.
struct Scatterer {
  Vec3 position = Vec3::Zero();
  std::complex<double> coefficient{1.0, 0.0};
};

/// Complex gain of a single propagation path of total length `length` at
/// frequency `freq`: amplitude * exp(-j 2 pi f length / c).
inline std::complex<double> path_phasor(double amplitude, double length, double freq) {
  return std::polar(amplitude, -2.0 * std::numbers::pi * freq * length / speed_of_light);
}

/// Bistatic point-scatterer path a -> p -> b with amplitude gain / (|p-a| |b-p|).
inline std::complex<double> scatter_path_gain(const Vec3& a, const Vec3& p, const Vec3& b,
                                              std::complex<double> gain, double freq) {
  const double d1 = (p - a).norm();
  const double d2 = (b - p).norm();
  return gain * path_phasor(1.0 / (d1 * d2), d1 + d2, freq);
}

/// Synthetic multi-static channel: static direct + clutter paths per
/// transmitter and one isotropic point target.
class Simulator {
 public:
  explicit Simulator(SimConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& g = config_.geometry;
    auto rng = substream(config_.seed, 0x636c7574ULL);
    const double pad = 2.0;
    scatterers_.resize(g.transmitters);
    for (auto& list : scatterers_) {
      while (list.size() < config_.clutter_paths_per_tx) {
        Vec3 p(config_.area.x_min - pad + (config_.area.width() + 2 * pad) * uniform01(rng),
               config_.area.y_min - pad + (config_.area.depth() + 2 * pad) * uniform01(rng),
               3.0 * uniform01(rng));
        bool clear = true;
        for (const auto& c : g.array_centers) clear = clear && (p - c).norm() > 0.5;
        for (const auto& t : g.tx_positions) clear = clear && (p - t).norm() > 0.5;
        if (!clear) continue;
        const double mag = 0.2 + 0.6 * uniform01(rng);
        const double phase = 2.0 * std::numbers::pi * uniform01(rng);
        list.push_back({p, std::polar(mag, phase)});
      }
    }
    static_.resize(g.transmitters);
    for (std::size_t tx = 0; tx < g.transmitters; ++tx) static_[tx] = compute_static_response(tx);
  }

  const SimConfig& config() const { return config_; }
  const std::vector<Scatterer>& scatterers(std::size_t tx0) const { return scatterers_.at(tx0); }

  /// Direct path plus clutter paths for transmitter tx (1-based), noise free.
  const std::vector<std::complex<double>>& static_response(std::uint32_t tx) const {
    return static_.at(check_tx(tx));
  }

  /// Target path only, noise free, without per-packet phase or timing.
  std::vector<std::complex<double>> target_response(const Vec3& target, std::uint32_t tx) const {
    const auto& g = config_.geometry;
    const Vec3& src = g.tx_positions[check_tx(tx)];
    check_target(target);
    std::vector<std::complex<double>> h(g.csi_size());
    for_each_element([&](std::size_t b, std::size_t r, std::size_t c, const Vec3& e) {
      for (std::size_t n = 0; n < g.subcarriers; ++n)
        h[g.csi_index(b, r, c, n)] =
            scatter_path_gain(src, target, e, config_.target_gain, g.subcarrier_frequency(n));
    });
    return h;
  }

  /// One packet of CSI with per-packet common phase, timing offset and noise.
  std::vector<std::complex<double>> synthesize_csi(const Vec3& target, std::uint32_t tx,
                                                   std::mt19937_64& rng) const {
    const auto& g = config_.geometry;
    const auto& stat = static_response(tx);
    check_target(target);
    std::vector<std::complex<double>> h = config_.target_gain != 0.0
                                              ? target_response(target, tx)
                                              : std::vector<std::complex<double>>(g.csi_size());
    for (std::size_t q = 0; q < h.size(); ++q) h[q] += stat[q];

    const double phi = config_.phase_random ? 2.0 * std::numbers::pi * uniform01(rng) : 0.0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double tau = config_.effective_timing_offset() +
                       (config_.timing_jitter_std > 0.0 ? config_.timing_jitter_std * gauss(rng) : 0.0);
    std::vector<std::complex<double>> rot(g.subcarriers);
    for (std::size_t n = 0; n < g.subcarriers; ++n)
      rot[n] = std::polar(1.0, phi - 2.0 * std::numbers::pi * tau * g.subcarrier_offset(n));

    const double sigma = config_.noise_std / std::sqrt(2.0);
    for (std::size_t q = 0; q < h.size(); ++q) {
      h[q] *= rot[q % g.subcarriers];
      if (sigma > 0.0) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        h[q] += std::complex<double>(sigma * re, sigma * im);
      }
    }
    return h;
  }

  /// Poisson packet arrivals per transmitter along the trajectory.
  Dataset simulate(const Trajectory& trajectory) const {
    require(!trajectory.samples.empty(), "simulate: empty trajectory");
    const auto& g = config_.geometry;
    struct Packet {
      double t;
      std::uint32_t tx;
    };
    std::vector<Packet> packets;
    const double t0 = trajectory.start_time();
    const double t1 = trajectory.end_time();
    for (std::uint32_t tx = 1; tx <= g.transmitters; ++tx) {
      auto rng = substream(config_.seed, 0x7478000000ULL + tx);
      std::exponential_distribution<double> gap(config_.packet_rate_per_tx);
      for (double t = t0 + gap(rng); t < t1; t += gap(rng)) packets.push_back({t, tx});
    }
    std::stable_sort(packets.begin(), packets.end(), [](const Packet& a, const Packet& b) {
      return a.t < b.t || (a.t == b.t && a.tx < b.tx);
    });

    Dataset ds;
    ds.geometry = g;
    ds.area = config_.area;
    ds.datapoints.resize(packets.size());
    parallel_for(packets.size(), [&](std::size_t i) {
      auto rng = substream(config_.seed, 0x706b7400000000ULL + i);
      auto& p = ds.datapoints[i];
      p.timestamp = packets[i].t;
      p.tx_index = packets[i].tx;
      p.position = trajectory.position_at(packets[i].t);
      p.csi = synthesize_csi(p.position, p.tx_index, rng);
    });
    return ds;
  }

 private:
  std::size_t check_tx(std::uint32_t tx) const {
    require(tx >= 1 && tx <= config_.geometry.transmitters, "simulator: tx index out of range");
    return tx - 1;
  }

  void check_target(const Vec3& target) const {
    const auto& g = config_.geometry;
    for (const auto& t : g.tx_positions)
      require((target - t).norm() >= 0.01, "simulator: target collocated with a transmitter");
    for_each_element([&](std::size_t, std::size_t, std::size_t, const Vec3& e) {
      require((target - e).norm() >= 0.01, "simulator: target collocated with an antenna");
    });
  }

  template <typename Fn>
  void for_each_element(Fn&& fn) const {
    const auto& g = config_.geometry;
    for (std::size_t b = 0; b < g.arrays; ++b)
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) fn(b, r, c, g.element_position(b, r, c));
  }

  std::vector<std::complex<double>> compute_static_response(std::size_t tx0) const {
    const auto& g = config_.geometry;
    const Vec3& src = g.tx_positions[tx0];
    std::vector<std::complex<double>> h(g.csi_size());
    for_each_element([&](std::size_t b, std::size_t r, std::size_t c, const Vec3& e) {
      const double d = (e - src).norm();
      for (std::size_t n = 0; n < g.subcarriers; ++n) {
        const double f = g.subcarrier_frequency(n);
        std::complex<double> v = path_phasor(1.0 / d, d, f);
        for (const auto& s : scatterers_[tx0]) v += scatter_path_gain(src, s.position, e, s.coefficient, f);
        h[g.csi_index(b, r, c, n)] = v;
      }
    });
    return h;
  }

  SimConfig config_;
  std::vector<std::vector<Scatterer>> scatterers_;
  std::vector<std::vector<std::complex<double>>> static_;
};

inline std::vector<std::complex<double>> synthesize_csi(const SimConfig& config, const Vec3& target,
                                                        std::uint32_t tx, std::mt19937_64& rng) {
  return Simulator(config).synthesize_csi(target, tx, rng);
}

inline Dataset simulate_dataset(const SimConfig& config, const Trajectory& trajectory) {
  return Simulator(config).simulate(trajectory);
}

inline nlohmann::json sim_config_to_json(const SimConfig& c) {
  return {{"geometry", geometry_to_json(c.geometry)},
          {"area", area_to_json(c.area)},
          {"clutter_paths_per_tx", c.clutter_paths_per_tx},
          {"target_gain", c.target_gain},
          {"noise_std", c.noise_std},
          {"phase_random", c.phase_random},
          {"timing_jitter_std", c.timing_jitter_std},
          {"timing_offset", c.timing_offset},
          {"packet_rate_per_tx", c.packet_rate_per_tx},
          {"seed", c.seed}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    if (j.contains("area")) c.area = area_from_json(j.at("area"));
    c.geometry = j.contains("geometry") ? geometry_from_json(j.at("geometry")) : standard_geometry(c.area);
    c.clutter_paths_per_tx = j.value("clutter_paths_per_tx", c.clutter_paths_per_tx);
    c.target_gain = j.value("target_gain", c.target_gain);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.phase_random = j.value("phase_random", c.phase_random);
    c.timing_jitter_std = j.value("timing_jitter_std", c.timing_jitter_std);
    c.timing_offset = j.value("timing_offset", c.timing_offset);
    c.packet_rate_per_tx = j.value("packet_rate_per_tx", c.packet_rate_per_tx);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("sim config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json trajectory_config_to_json(const TrajectoryConfig& t) {
  return {{"duration", t.duration},
          {"speed", t.speed},
          {"max_turn_rate", t.max_turn_rate},
          {"sample_rate", t.sample_rate},
          {"seed", t.seed}};
}

inline TrajectoryConfig trajectory_config_from_json(const nlohmann::json& j) {
  TrajectoryConfig t;
  try {
    t.duration = j.value("duration", t.duration);
    t.speed = j.value("speed", t.speed);
    t.max_turn_rate = j.value("max_turn_rate", t.max_turn_rate);
    t.sample_rate = j.value("sample_rate", t.sample_rate);
    t.seed = j.value("seed", t.seed);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("trajectory config: ") + e.what());
  }
  return t;
}

}  // namespace pcc
