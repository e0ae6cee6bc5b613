#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <span>
#include <random>
#include <sstream>
#include <vector>

#include "pcc/error.hpp"
#include "pcc/geometry.hpp"
#include "pcc/parallel.hpp"
#include "pcc/random.hpp"

namespace pcc {

using Points2 = Eigen::Matrix2Xd;  // one point per column

struct AffineTransform {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  Vec2 b = Vec2::Zero();

  Vec2 operator()(const Vec2& x) const { return a * x + b; }
  Points2 apply(const Points2& x) const { return (a * x).colwise() + b; }
};

/// Least-squares affine map taking preds onto labels.
inline AffineTransform optimal_affine(const Points2& preds, const Points2& labels) {
  require(preds.cols() == labels.cols(), "affine: point counts differ");
  require(preds.cols() >= 3, "affine: at least three points are needed");
  const Eigen::Index n = preds.cols();
  const Vec2 mean = preds.rowwise().mean();
  const Points2 centered = preds.colwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto s = svd.singularValues();
  if (!(s(0) > 0.0) || s(1) <= 1e-9 * s(0))
    throw validation_error("affine: predictions are collinear, transform is rank deficient");
  Eigen::MatrixXd design(n, 3);
  design.leftCols<2>() = preds.transpose();
  design.col(2).setOnes();
  const Eigen::MatrixXd sol = design.colPivHouseholderQr().solve(labels.transpose());  // 3 x 2
  AffineTransform t;
  t.a = sol.topRows<2>().transpose();
  t.b = sol.row(2).transpose();
  return t;
}

inline Eigen::VectorXd position_errors(const Points2& preds, const Points2& labels) {
  require(preds.cols() == labels.cols(), "errors: point counts differ");
  return (preds - labels).colwise().norm().transpose();
}

/// Linear interpolation between order statistics (Hyndman-Fan type 7).
inline double percentile(std::vector<double> v, double p) {
  require(!v.empty(), "percentile: empty input");
  require(p >= 0.0 && p <= 1.0, "percentile: p must lie in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

struct LocalizationMetrics {
  double mae = 0.0;
  double drms = 0.0;
  double cep = 0.0;
  double r95 = 0.0;
};

inline LocalizationMetrics localization_metrics(std::span<const double> errors) {
  require(!errors.empty(), "metrics: no errors given");
  LocalizationMetrics m;
  double sq = 0.0;
  for (double e : errors) {
    m.mae += e;
    sq += e * e;
  }
  const auto n = static_cast<double>(errors.size());
  m.mae /= n;
  m.drms = std::sqrt(sq / n);
  std::vector<double> v(errors.begin(), errors.end());
  m.cep = percentile(v, 0.5);
  m.r95 = percentile(std::move(v), 0.95);
  return m;
}

inline LocalizationMetrics localization_metrics(const Eigen::VectorXd& errors) {
  return localization_metrics(std::span<const double>(errors.data(), static_cast<std::size_t>(errors.size())));
}

/// Kruskal stress between label and prediction distances over all pairs, or
/// over a seeded random subset when there are more than max_pairs.
inline double kruskal_stress(const Points2& preds, const Points2& labels, std::size_t max_pairs = 1000000,
                             std::uint64_t seed = 11) {
  require(preds.cols() == labels.cols(), "stress: point counts differ");
  const auto n = static_cast<std::size_t>(preds.cols());
  require(n >= 2, "stress: at least two points are needed");
  double num = 0.0, den = 0.0;
  auto add = [&](std::size_t i, std::size_t j) {
    const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
    const double dl = (labels.col(ii) - labels.col(jj)).norm();
    const double dp = (preds.col(ii) - preds.col(jj)).norm();
    num += (dl - dp) * (dl - dp);
    den += dl * dl;
  };
  if (n * (n - 1) / 2 <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) add(i, j);
  } else {
    auto rng = substream(seed, 0x6b73ULL);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t s = 0; s < max_pairs; ++s) {
      const std::size_t i = pick(rng);
      std::size_t j = pick(rng);
      while (j == i) j = pick(rng);
      add(i, j);
    }
  }
  if (!(den > 0.0)) throw validation_error("stress: all labels are identical");
  return std::sqrt(num / den);
}

struct NeighborhoodScores {
  double continuity = 0.0;
  double trustworthiness = 0.0;
};

inline std::size_t default_neighborhood(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.05 * static_cast<double>(n))));
}

namespace detail {

/// rank[i][j]: position of j when the other points are sorted by distance from i
/// (1 = nearest; ties broken by index).
inline std::vector<std::vector<std::size_t>> distance_ranks(const Points2& p) {
  const auto n = static_cast<std::size_t>(p.cols());
  std::vector<std::vector<std::size_t>> rank(n, std::vector<std::size_t>(n, 0));
  parallel_for(n, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        d.emplace_back((p.col(static_cast<Eigen::Index>(i)) - p.col(static_cast<Eigen::Index>(j))).squaredNorm(), j);
    std::sort(d.begin(), d.end());
    for (std::size_t r = 0; r < d.size(); ++r) rank[i][d[r].second] = r + 1;
  });
  return rank;
}

/// 1 - factor * sum over points of (rank in `ref` - k) for neighbours in `probe`
/// that are not neighbours in `ref`.
inline double neighborhood_score(const std::vector<std::vector<std::size_t>>& probe,
                                 const std::vector<std::vector<std::size_t>>& ref, std::size_t k) {
  const std::size_t n = probe.size();
  double penalty = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && probe[i][j] <= k && ref[i][j] > k) penalty += static_cast<double>(ref[i][j] - k);
  const double nn = static_cast<double>(n), kk = static_cast<double>(k);
  return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * penalty;
}

}  // namespace detail

/// Trustworthiness penalises chart neighbours that are far in label space;
/// continuity penalises label neighbours that are far in the chart.
inline NeighborhoodScores continuity_trustworthiness(const Points2& preds, const Points2& labels, std::size_t k = 0) {
  require(preds.cols() == labels.cols(), "neighbourhood: point counts differ");
  const auto n = static_cast<std::size_t>(preds.cols());
  require(n >= 3, "neighbourhood: at least three points are needed");
  if (k == 0) k = default_neighborhood(n);
  require(k < n, "neighbourhood: k must be smaller than the number of points");
  require(2 * n > 3 * k + 1, "neighbourhood: k too large for the normalisation");
  const auto rp = detail::distance_ranks(preds);
  const auto rl = detail::distance_ranks(labels);
  return {detail::neighborhood_score(rl, rp, k), detail::neighborhood_score(rp, rl, k)};
}

struct CdfPoint {
  double radius = 0.0;
  double fraction = 0.0;
};

inline std::vector<CdfPoint> error_cdf(std::span<const double> errors) {
  require(!errors.empty(), "cdf: no errors given");
  std::vector<double> v(errors.begin(), errors.end());
  std::sort(v.begin(), v.end());
  std::vector<CdfPoint> out;
  const auto n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i + 1 < v.size() && v[i + 1] == v[i]) continue;
    out.push_back({v[i], static_cast<double>(i + 1) / n});
  }
  return out;
}

struct MetricReport {
  LocalizationMetrics loc;
  double ks = 0.0;
  double ct = 0.0;
  double tw = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  bool affine = false;
  AffineTransform transform;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["MAE"] = loc.mae;
    j["DRMS"] = loc.drms;
    j["CEP"] = loc.cep;
    j["R95"] = loc.r95;
    j["KS"] = ks;
    j["CT"] = ct;
    j["TW"] = tw;
    j["evaluated"] = evaluated;
    j["excluded"] = excluded;
    j["affine"] = affine;
    if (affine) {
      j["transform"] = {{"A", {{transform.a(0, 0), transform.a(0, 1)}, {transform.a(1, 0), transform.a(1, 1)}}},
                        {"b", {transform.b.x(), transform.b.y()}}};
    }
    return j;
  }
};

/// Full metric set; with `affine` the predictions are first aligned by the
/// optimal affine transform.
inline MetricReport evaluate_predictions(const Points2& preds, const Points2& labels, bool affine, std::size_t excluded = 0) {
  MetricReport r;
  r.affine = affine;
  r.excluded = excluded;
  r.evaluated = static_cast<std::size_t>(preds.cols());
  Points2 p = preds;
  if (affine) {
    r.transform = optimal_affine(preds, labels);
    p = r.transform.apply(preds);
  }
  r.loc = localization_metrics(position_errors(p, labels));
  r.ks = kruskal_stress(p, labels);
  const auto nt = continuity_trustworthiness(p, labels);
  r.ct = nt.continuity;
  r.tw = nt.trustworthiness;
  return r;
}

inline void save_cdf(const std::vector<CdfPoint>& cdf, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot write " + path.string());
  os.precision(17);
  os << "radius_m,fraction\n";
  for (const auto& c : cdf) os << c.radius << ',' << c.fraction << '\n';
}

/// Scatter plot of predictions, each dot coloured by its label position.
inline std::string chart_svg(const Points2& preds, const Points2& labels, int size = 480) {
  require(preds.cols() == labels.cols(), "chart: point counts differ");
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (preds.cols() > 0) {
    const Vec2 plo = preds.rowwise().minCoeff(), phi = preds.rowwise().maxCoeff();
    const Vec2 llo = labels.rowwise().minCoeff(), lhi = labels.rowwise().maxCoeff();
    const double span = std::max({phi.x() - plo.x(), phi.y() - plo.y(), 1e-12});
    const double margin = 0.05 * size;
    const double scale = (size - 2 * margin) / span;
    auto unit = [](double v, double lo, double hi) { return hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.5; };
    for (Eigen::Index i = 0; i < preds.cols(); ++i) {
      const double u = unit(labels(0, i), llo.x(), lhi.x());
      const double v = unit(labels(1, i), llo.y(), lhi.y());
      const int red = static_cast<int>(std::lround(255 * u));
      const int green = static_cast<int>(std::lround(255 * v));
      const int blue = static_cast<int>(std::lround(255 * (1.0 - 0.5 * (u + v))));
      const double cx = margin + (preds(0, i) - plo.x()) * scale;
      const double cy = size - margin - (preds(1, i) - plo.y()) * scale;
      os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"2.5\" fill=\"rgb(" << red << ',' << green << ','
         << blue << ")\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pcc
