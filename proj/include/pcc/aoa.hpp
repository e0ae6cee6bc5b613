#pragma once

#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcc/dataset.hpp"
#include "pcc/linalg.hpp"
#include "pcc/parallel.hpp"

namespace pcc {

/// Per-array bearing with von Mises concentration.
struct AoAEstimate {
  std::size_t array = 0;
  double azimuth = 0.0;  // rad, relative to boresight, positive towards the column axis
  double kappa = 0.0;
};

/// Sum over members, antenna rows and subcarriers of the column-vector outer
/// products H[b, m_r, :, n] H[b, m_r, :, n]^H.
template <typename T>
MatrixXcd azimuth_covariance(const ScenarioGeometry& g, std::span<const std::vector<std::complex<T>>* const> members,
                             std::size_t b) {
  require(b < g.arrays, "azimuth covariance: array index out of range");
  const auto mc = static_cast<Eigen::Index>(g.cols);
  MatrixXcd r = MatrixXcd::Zero(mc, mc);
  VectorXcd x(mc);
  for (const auto* h : members) {
    require(h->size() == g.csi_size(), "azimuth covariance: CSI shape mismatch");
    for (std::size_t row = 0; row < g.rows; ++row)
      for (std::size_t n = 0; n < g.subcarriers; ++n) {
        for (Eigen::Index c = 0; c < mc; ++c) x(c) = cd((*h)[g.csi_index(b, row, static_cast<std::size_t>(c), n)]);
        r.noalias() += x * x.adjoint();
      }
  }
  return r;
}

template <typename T>
MatrixXcd azimuth_covariance(const BasicDataset<T>& ds, const std::vector<std::size_t>& indices, std::size_t b) {
  std::vector<const std::vector<std::complex<T>>*> members;
  members.reserve(indices.size());
  for (auto l : indices) members.push_back(&ds.datapoints.at(l).csi);
  return azimuth_covariance<T>(ds.geometry, members, b);
}

struct RootMusicResult {
  double azimuth = 0.0;         // rad
  double root_magnitude = 0.0;  // in [0, 1]
  std::complex<double> root;
};

/// Roots of a0 + a1 z + ... + ad z^d. Leading coefficients below `rel_tol`
/// of the largest are dropped; trailing zeros become roots at the origin.
inline std::vector<std::complex<double>> polynomial_roots(std::vector<std::complex<double>> a,
                                                          double rel_tol = 1e-13) {
  double amax = 0.0;
  for (const auto& c : a) amax = std::max(amax, std::abs(c));
  if (amax == 0.0) return {};
  while (!a.empty() && std::abs(a.back()) <= rel_tol * amax) a.pop_back();
  std::vector<std::complex<double>> roots;
  std::size_t zeros = 0;
  while (zeros < a.size() && std::abs(a[zeros]) <= rel_tol * amax) ++zeros;
  roots.assign(zeros, {0.0, 0.0});
  a.erase(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(zeros));
  const auto d = static_cast<Eigen::Index>(a.size()) - 1;
  if (d <= 0) return roots;
  MatrixXcd companion = MatrixXcd::Zero(d, d);
  for (Eigen::Index i = 1; i < d; ++i) companion(i, i - 1) = 1.0;
  for (Eigen::Index i = 0; i < d; ++i) companion(i, d - 1) = -a[static_cast<std::size_t>(i)] / a.back();
  Eigen::ComplexEigenSolver<MatrixXcd> es(companion, false);
  if (es.info() != Eigen::Success) throw numerical_error("polynomial root finding failed");
  for (Eigen::Index i = 0; i < d; ++i) roots.push_back(es.eigenvalues()(i));
  return roots;
}

/// Single-source root-MUSIC on an M_c x M_c covariance of a uniform linear
/// array with element spacing `spacing_wavelengths` (in wavelengths) and
/// steering vector e^{j 2 pi s m sin(alpha)}.
///
/// Returns nullopt when the selected root maps to no real angle.
inline std::optional<RootMusicResult> root_music_single_source(const MatrixXcd& r, double spacing_wavelengths) {
  const Eigen::Index m = r.rows();
  require(m >= 2 && r.cols() == m, "root-MUSIC: need a square covariance with at least 2 elements");
  require(spacing_wavelengths > 0.0, "root-MUSIC: spacing must be positive");
  if (!all_finite(r)) throw numerical_error("root-MUSIC: non-finite covariance");
  if (r.cwiseAbs().maxCoeff() == 0.0) throw validation_error("root-MUSIC: zero covariance matrix");

  const auto eig = hermitian_eigen_descending(r, m);
  const MatrixXcd noise = eig.vectors.rightCols(m - 1);
  const MatrixXcd c = noise * noise.adjoint();

  // p(z) z^{M-1} with p(z) = sum_k c_k z^k, c_k = sum_{n - m = k} C(m, n).
  std::vector<std::complex<double>> coeffs(static_cast<std::size_t>(2 * m - 1));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) coeffs[static_cast<std::size_t>(j - i + m - 1)] += c(i, j);

  const auto roots = polynomial_roots(coeffs);
  constexpr double outside_slack = 1e-6;
  std::optional<std::complex<double>> best;
  for (const auto& z : roots) {
    if (std::abs(z) > 1.0 + outside_slack) continue;
    if (!best || std::abs(z) > std::abs(*best)) best = z;
  }
  RootMusicResult res;
  if (!best) {
    res.root = {0.0, 0.0};
    res.root_magnitude = 0.0;
    res.azimuth = 0.0;
    return res;
  }
  res.root = *best;
  res.root_magnitude = std::min(1.0, std::abs(*best));
  const double s = std::arg(*best) / (2.0 * std::numbers::pi * spacing_wavelengths);
  if (std::abs(s) > 1.0) return std::nullopt;
  res.azimuth = std::asin(s);
  return res;
}

struct KappaHeuristic {
  double kappa_max = 50.0;
  double exponent = 4.0;
};

/// kappa = kappa_max * |z|^p.
inline double kappa_from_root(double root_magnitude, const KappaHeuristic& h = {}) {
  require(root_magnitude >= 0.0 && root_magnitude <= 1.0, "kappa: root magnitude must lie in [0, 1]");
  return h.kappa_max * std::pow(root_magnitude, h.exponent);
}

/// log I_0(kappa), stable for large kappa.
inline double log_bessel_i0(double kappa) {
  require(kappa >= 0.0 && std::isfinite(kappa), "log I0: kappa must be finite and nonnegative");
  if (kappa < 500.0) return std::log(std::cyl_bessel_i(0.0, kappa));
  const double inv = 1.0 / kappa;
  const double series = 1.0 + inv / 8.0 + 9.0 * inv * inv / 128.0 + 225.0 * inv * inv * inv / 3072.0;
  return kappa - 0.5 * std::log(2.0 * std::numbers::pi * kappa) + std::log(series);
}

/// Log of the product of von Mises densities of the bearing errors at the
/// horizontal position x (target height taken from `height`).
inline double log_vonmises_likelihood(const Vec2& x, std::span<const AoAEstimate> estimates,
                                      const ScenarioGeometry& g, double height) {
  require(!estimates.empty(), "likelihood: no bearing estimates");
  double sum = 0.0;
  const Vec3 p(x.x(), x.y(), height);
  for (const auto& e : estimates) {
    require(e.array < g.arrays, "likelihood: array index out of range");
    const Vec3 d = p - g.array_centers[e.array];
    if (std::hypot(d.dot(g.array_col_axes[e.array]), d.dot(g.array_boresights[e.array])) < 1e-12)
      throw validation_error("likelihood: position coincides with an array centre");
    const double az = g.azimuth(e.array, p);
    sum += e.kappa * std::cos(az - e.azimuth) - std::log(2.0 * std::numbers::pi) - log_bessel_i0(e.kappa);
  }
  return sum;
}

inline double vonmises_likelihood(const Vec2& x, std::span<const AoAEstimate> estimates, const ScenarioGeometry& g,
                                  double height) {
  return std::exp(log_vonmises_likelihood(x, estimates, g, height));
}

/// Gradient of log_vonmises_likelihood with respect to the horizontal position.
inline Vec2 log_vonmises_gradient(const Vec2& x, std::span<const AoAEstimate> estimates, const ScenarioGeometry& g,
                                  double height) {
  Vec2 grad = Vec2::Zero();
  const Vec3 p(x.x(), x.y(), height);
  for (const auto& e : estimates) {
    const Vec3 d = p - g.array_centers[e.array];
    const double a = d.dot(g.array_col_axes[e.array]);
    const double b = d.dot(g.array_boresights[e.array]);
    const double rr = a * a + b * b;
    if (rr < 1e-24) continue;
    const Vec3 daz = (b * g.array_col_axes[e.array] - a * g.array_boresights[e.array]) / rr;
    const double az = std::atan2(a, b);
    grad += -e.kappa * std::sin(az - e.azimuth) * daz.head<2>();
  }
  return grad;
}

struct TriangulationOptions {
  double grid_pitch = 0.1;   // m
  double kappa_min = 0.1;
  double refine_tol = 1e-3;  // m, simplex size at termination
  int refine_max_iter = 500;
};

namespace detail {

/// Nelder-Mead minimisation in the plane.
template <typename F>
Vec2 nelder_mead_2d(F&& f, const Vec2& start, double step, double tol, int max_iter) {
  std::array<Vec2, 3> pts = {start, start + Vec2(step, 0.0), start + Vec2(0.0, step)};
  std::array<double, 3> val = {f(pts[0]), f(pts[1]), f(pts[2])};
  for (int it = 0; it < max_iter; ++it) {
    std::array<int, 3> o = {0, 1, 2};
    std::sort(o.begin(), o.end(), [&](int a, int b) { return val[a] < val[b]; });
    const Vec2 best = pts[o[0]], mid = pts[o[1]], worst = pts[o[2]];
    const double fb = val[o[0]], fm = val[o[1]], fw = val[o[2]];
    const double size = std::max((mid - best).norm(), (worst - best).norm());
    if (size < tol) return best;
    const Vec2 centroid = 0.5 * (best + mid);
    const Vec2 refl = centroid + (centroid - worst);
    const double fr = f(refl);
    std::array<Vec2, 3> np = {best, mid, worst};
    std::array<double, 3> nv = {fb, fm, fw};
    if (fr < fb) {
      const Vec2 exp = centroid + 2.0 * (centroid - worst);
      const double fe = f(exp);
      if (fe < fr) { np[2] = exp; nv[2] = fe; } else { np[2] = refl; nv[2] = fr; }
    } else if (fr < fm) {
      np[2] = refl; nv[2] = fr;
    } else {
      const Vec2 con = fr < fw ? Vec2(centroid + 0.5 * (refl - centroid)) : Vec2(centroid + 0.5 * (worst - centroid));
      const double fc = f(con);
      if (fc < std::min(fr, fw)) {
        np[2] = con; nv[2] = fc;
      } else {
        np[1] = best + 0.5 * (mid - best); nv[1] = f(np[1]);
        np[2] = best + 0.5 * (worst - best); nv[2] = f(np[2]);
      }
    }
    pts = np;
    val = nv;
  }
  int b = 0;
  for (int i = 1; i < 3; ++i) if (val[i] < val[b]) b = i;
  return pts[b];
}

}  // namespace detail

/// Maximum-likelihood position: grid search over the area, then Nelder-Mead
/// refinement of the log-likelihood.
inline Vec2 triangulate(std::span<const AoAEstimate> estimates, const ScenarioGeometry& g, const Area& area,
                        const TriangulationOptions& opt = {}) {
  bool any = false;
  std::size_t informative = 0;
  for (const auto& e : estimates) {
    require(std::isfinite(e.kappa) && e.kappa >= 0.0, "triangulate: kappa must be finite and nonnegative");
    any = any || e.kappa > 0.0;
    if (e.kappa > opt.kappa_min) ++informative;
  }
  if (!any) throw validation_error("triangulate: no information (all kappa are zero)");
  if (informative < 2) throw validation_error("triangulate: insufficient bearings");
  require(opt.grid_pitch > 0.0, "triangulate: grid pitch must be positive");

  auto objective = [&](const Vec2& x) {
    try {
      return -log_vonmises_likelihood(x, estimates, g, area.height);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const auto nx = static_cast<int>(std::floor(area.width() / opt.grid_pitch + 1e-9)) + 1;
  const auto ny = static_cast<int>(std::floor(area.depth() / opt.grid_pitch + 1e-9)) + 1;
  Vec2 best(area.x_min, area.y_min);
  double best_val = std::numeric_limits<double>::infinity();
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const Vec2 x(area.x_min + i * opt.grid_pitch, area.y_min + j * opt.grid_pitch);
      const double v = objective(x);
      if (v < best_val) {
        best_val = v;
        best = x;
      }
    }
  return detail::nelder_mead_2d(objective, best, 0.5 * opt.grid_pitch, opt.refine_tol, opt.refine_max_iter);
}

struct ClusterBearings {
  std::vector<AoAEstimate> estimates;  // one per array; failed arrays carry kappa 0
  std::vector<bool> valid;             // root-MUSIC produced an angle
};

/// Root-MUSIC bearing and kappa for every array of one clutter-rejected cluster.
template <typename T>
ClusterBearings estimate_bearings(const BasicDataset<T>& ds, const Cluster& cluster, const KappaHeuristic& kh = {}) {
  const auto& g = ds.geometry;
  ClusterBearings out;
  for (std::size_t b = 0; b < g.arrays; ++b) {
    AoAEstimate e;
    e.array = b;
    bool ok = false;
    const MatrixXcd r = azimuth_covariance(ds, cluster.indices, b);
    if (r.cwiseAbs().maxCoeff() > 0.0 && all_finite(r)) {
      if (auto res = root_music_single_source(r, g.spacing_wavelengths())) {
        e.azimuth = res->azimuth;
        e.kappa = kappa_from_root(res->root_magnitude, kh);
        ok = true;
      }
    }
    out.estimates.push_back(e);
    out.valid.push_back(ok);
  }
  return out;
}

struct TriangulationResult {
  std::size_t cluster = 0;
  ClusterBearings bearings;
  std::optional<Vec2> position;
  std::string failure;  // empty when position is set
};

/// Bearings and triangulated position for every cluster of a clutter-rejected
/// dataset. Clusters that cannot be triangulated are flagged, not dropped.
template <typename T>
std::vector<TriangulationResult> triangulate_clusters(const BasicDataset<T>& clean, const std::vector<Cluster>& clusters,
                                                      const Area& area, const TriangulationOptions& opt = {},
                                                      const KappaHeuristic& kh = {}) {
  std::vector<TriangulationResult> out(clusters.size());
  parallel_for(clusters.size(), [&](std::size_t c) {
    auto& res = out[c];
    res.cluster = c;
    res.bearings = estimate_bearings(clean, clusters[c], kh);
    try {
      res.position = triangulate(res.bearings.estimates, clean.geometry, area, opt);
    } catch (const Error& e) {
      res.failure = e.what();
    }
  });
  return out;
}

inline std::size_t count_flagged(const std::vector<TriangulationResult>& results) {
  std::size_t n = 0;
  for (const auto& r : results) n += r.position ? 0 : 1;
  return n;
}

}  // namespace pcc
