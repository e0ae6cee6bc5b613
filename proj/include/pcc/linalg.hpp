#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

#include "pcc/error.hpp"
#include "pcc/random.hpp"

namespace pcc {

using cd = std::complex<double>;
using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;

/// Leading eigenpairs of a Hermitian matrix, eigenvalues descending.
struct Eigenpairs {
  Eigen::VectorXd values;
  MatrixXcd vectors;
};

inline bool all_finite(const MatrixXcd& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!std::isfinite(m.data()[i].real()) || !std::isfinite(m.data()[i].imag())) return false;
  return true;
}

/// Full Hermitian eigendecomposition, reordered descending. Ties keep the
/// solver's ascending order reversed, so the result is deterministic.
inline Eigenpairs hermitian_eigen_descending(const MatrixXcd& r, Eigen::Index count) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(r);
  if (es.info() != Eigen::Success) throw numerical_error("Hermitian eigendecomposition failed");
  const Eigen::Index n = r.rows();
  Eigenpairs out;
  out.values.resize(count);
  out.vectors.resize(n, count);
  for (Eigen::Index k = 0; k < count; ++k) {
    out.values(k) = es.eigenvalues()(n - 1 - k);
    out.vectors.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  return out;
}

/// Block subspace iteration with Rayleigh-Ritz extraction for the `count`
/// largest eigenpairs of a Hermitian PSD matrix. Iterates until the first
/// `converge` pairs satisfy ||R v - l v|| <= tol * ||R||, or max_iter.
inline Eigenpairs hermitian_top_eigen_iterative(const MatrixXcd& r, Eigen::Index count, Eigen::Index converge,
                                                double tol = 1e-12, int max_iter = 300) {
  const Eigen::Index n = r.rows();
  const Eigen::Index p = std::min<Eigen::Index>(n, count + 8);
  auto rng = substream(0x5ab5bace, static_cast<std::uint64_t>(n));
  std::normal_distribution<double> gauss;
  MatrixXcd x(n, p);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = cd(gauss(rng), gauss(rng));

  auto orthonormalize = [&](const MatrixXcd& m) {
    Eigen::HouseholderQR<MatrixXcd> qr(m);
    return MatrixXcd(qr.householderQ() * MatrixXcd::Identity(n, p));
  };
  x = orthonormalize(x);

  const double scale = std::max(r.cwiseAbs().rowwise().sum().maxCoeff(), 1e-300);
  Eigen::VectorXd theta;
  for (int it = 0; it < max_iter; ++it) {
    MatrixXcd y = r * x;
    // Rayleigh-Ritz on the current basis.
    MatrixXcd t = x.adjoint() * y;
    t = 0.5 * (t + t.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(t);
    if (es.info() != Eigen::Success) throw numerical_error("Rayleigh-Ritz eigendecomposition failed");
    const MatrixXcd v = es.eigenvectors().rowwise().reverse();
    theta = es.eigenvalues().reverse();
    x = x * v;
    y = y * v;
    bool done = true;
    for (Eigen::Index k = 0; k < converge && done; ++k)
      done = (y.col(k) - theta(k) * x.col(k)).norm() <= tol * scale;
    if (done) break;
    x = orthonormalize(y);
  }
  Eigenpairs out;
  out.values = theta.head(count);
  out.vectors = x.leftCols(count);
  return out;
}

/// Top `count` eigenpairs: exact solver for small matrices, subspace
/// iteration above `dense_limit`.
inline Eigenpairs hermitian_top_eigen(const MatrixXcd& r, Eigen::Index count, Eigen::Index converge,
                                      Eigen::Index dense_limit = 512) {
  require(r.rows() == r.cols(), "eigen: matrix must be square");
  require(count >= 0 && count <= r.rows(), "eigen: requested more eigenpairs than the dimension");
  if (!all_finite(r)) throw numerical_error("eigen: non-finite matrix entries");
  if (r.rows() <= dense_limit) return hermitian_eigen_descending(r, count);
  return hermitian_top_eigen_iterative(r, count, converge);
}

}  // namespace pcc
