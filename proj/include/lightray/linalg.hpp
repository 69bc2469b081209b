#pragma once

#include <cmath>
#include <complex>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lightray/errors.hpp"

namespace lightray {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

inline constexpr Complex kI{0.0, 1.0};

inline double frobenius(const CMatrix& m) { return m.norm(); }

/// ‖M†M − I‖_F.
inline double unitarity_defect(const CMatrix& m) {
  return (m.adjoint() * m - CMatrix::Identity(m.cols(), m.cols())).norm();
}

/// ‖M + M†‖_F; zero for skew-Hermitian matrices.
inline double skew_hermitian_defect(const CMatrix& m) {
  return (m + m.adjoint()).norm();
}

inline bool is_skew_hermitian(const CMatrix& m, double tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  return skew_hermitian_defect(m) <= tol * std::max(1.0, m.norm());
}

/// Unitary factor of the polar decomposition M = W P.
inline CMatrix polar_unitary(const CMatrix& m) {
  Eigen::JacobiSVD<CMatrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().adjoint();
}

/// exp(c·X) for a fixed skew-Hermitian X and varying real c.
///
/// X = −iH with H Hermitian, so exp(cX) = V diag(e^{−icλ}) V† from the
/// eigen-decomposition of H. Exactly the identity when c == 0.
class SkewHermitianExponential {
 public:
  SkewHermitianExponential() = default;

  explicit SkewHermitianExponential(const CMatrix& x) : generator_(x) {
    if (!is_skew_hermitian(x, 1e-10)) {
      throw InvalidArgument("exponential generator must be skew-Hermitian");
    }
    const CMatrix h = kI * x;
    Eigen::SelfAdjointEigenSolver<CMatrix> eig(0.5 * (h + h.adjoint()));
    vectors_ = eig.eigenvectors();
    values_ = eig.eigenvalues();
  }

  [[nodiscard]] Eigen::Index rank() const { return generator_.rows(); }
  [[nodiscard]] const CMatrix& generator() const { return generator_; }

  [[nodiscard]] CMatrix operator()(double c) const {
    const auto n = generator_.rows();
    if (c == 0.0) return CMatrix::Identity(n, n);
    CVector phases(n);
    for (Eigen::Index k = 0; k < n; ++k) phases(k) = std::exp(-kI * (c * values_(k)));
    return vectors_ * phases.asDiagonal() * vectors_.adjoint();
  }

 private:
  CMatrix generator_;
  CMatrix vectors_;
  Eigen::VectorXd values_;
};

inline CMatrix exp_skew_hermitian(const CMatrix& x) { return SkewHermitianExponential(x)(1.0); }

/// Random skew-Hermitian matrix with Frobenius norm `norm`.
template <class Rng>
CMatrix random_skew_hermitian(Eigen::Index n, Rng& rng, double norm = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  CMatrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = Complex(gauss(rng), gauss(rng));
  CMatrix s = 0.5 * (g - g.adjoint());
  const double f = s.norm();
  if (f > 0.0) s *= norm / f;
  return s;
}

template <class Rng>
Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    const double r = v.norm();
    if (r > 1e-12) return v / r;
  }
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("loglog_slope needs ≥ 2 paired samples");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  return loglog_slope(std::span<const double>(x), std::span<const double>(y));
}

}  // namespace lightray
