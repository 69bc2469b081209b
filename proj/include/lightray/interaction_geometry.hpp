#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "lightray/errors.hpp"
#include "lightray/io.hpp"
#include "lightray/linalg.hpp"
#include "lightray/minkowski.hpp"

namespace lightray {

using Mat3 = Eigen::Matrix3d;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat43 = Eigen::Matrix<double, 4, 3>;

inline double lightlike_a(double r) { return std::sqrt(std::max(0.0, 1.0 - r * r)); }

/// g(v, w) with signature (−, +, +, +).
inline double minkowski_product(const Vec4& v, const Vec4& w) {
  return -v(0) * w(0) + v(1) * w(1) + v(2) * w(2) + v(3) * w(3);
}

inline bool is_lightlike_vector(const Vec4& v, double tol = 1e-10) {
  const double scale = std::max(v(0) * v(0), Vec3(v(1), v(2), v(3)).squaredNorm());
  return scale > 0.0 && std::abs(minkowski_product(v, v)) <= tol * scale;
}

/// A pair of lightlike vectors rescaled to first component 1, with the spatial
/// rotation sending ξ₁' to e₁ and span(ξ₁', η') into the x³ = 0 plane.
struct LightlikeFrame {
  Vec4 xi1;
  Vec4 eta;
  Mat3 rotation;  // rows are the frame axes
  double r0 = 0.0;
  int sign = -1;

  [[nodiscard]] Vec4 to_frame(const Vec4& v) const {
    Vec4 out;
    out(0) = v(0);
    out.tail<3>() = rotation * v.tail<3>();
    return out;
  }
  [[nodiscard]] Vec4 from_frame(const Vec4& v) const {
    Vec4 out;
    out(0) = v(0);
    out.tail<3>() = rotation.transpose() * v.tail<3>();
    return out;
  }
};

inline LightlikeFrame normalize_pair(const Vec4& xi1, const Vec4& eta, double tol = 1e-10) {
  if (!is_lightlike_vector(xi1, tol) || !is_lightlike_vector(eta, tol)) {
    throw InvalidArgument("normalize_pair expects nonzero lightlike vectors");
  }
  LightlikeFrame f;
  f.xi1 = xi1 / xi1(0);
  f.eta = eta / eta(0);
  const Vec3 e1 = f.xi1.tail<3>().normalized();
  const Vec3 ep = f.eta.tail<3>().normalized();
  const double c = ep.dot(e1);
  Vec3 perp = ep - c * e1;
  Vec3 e2;
  if (perp.norm() > 1e-12) {
    e2 = perp.normalized();
  } else {
    if (c > 0.0) throw DegeneratePair("eta is a positive multiple of xi1");
    for (int k = 0; k < 3; ++k) {
      const Vec3 axis = Vec3::Unit(k);
      const Vec3 q = axis - axis.dot(e1) * e1;
      if (q.norm() > 0.5) {
        e2 = q.normalized();
        break;
      }
    }
  }
  const Vec3 e3 = e1.cross(e2);
  f.rotation.row(0) = e1.transpose();
  f.rotation.row(1) = e2.transpose();
  f.rotation.row(2) = e3.transpose();
  f.r0 = std::clamp(ep.dot(e2), -1.0, 1.0);
  f.sign = c > 0.0 ? 1 : -1;
  return f;
}

/// Frame of the broken path at its vertex: ξ₁ = γ̇_in, η = γ̇_out.
inline LightlikeFrame frame_from_triple(const TripleSample& t) {
  return normalize_pair(t.leg_in.tangent(), t.leg_out.tangent());
}

struct TripletDecomposition {
  Vec4 xi2;
  Vec4 xi3;
  double r = 0.0;
  Vec3 alpha = Vec3::Zero();  // η = Σ α_j ξ_j
  double b = 0.0;
  double residual = 0.0;     // |η − Σ α_j ξ_j|
  double determinant = 0.0;  // det of the spatial-plane spanning matrix
};

inline double sign_condition_b(const LightlikeFrame& f) { return 1.0 - f.sign * lightlike_a(f.r0); }

inline TripletDecomposition lightlike_triplet(const LightlikeFrame& f, double r) {
  if (!(r > 0.0 && r < 1.0)) throw InvalidArgument("r must lie in (0, 1)");
  const double a = lightlike_a(r);
  const Vec4 xi1_f(1.0, 1.0, 0.0, 0.0);
  const Vec4 xi2_f(1.0, a, r, 0.0);
  const Vec4 xi3_f(1.0, a, -r, 0.0);
  const Vec4 eta_f = f.to_frame(f.eta);

  Mat3 m;
  m.col(0) = xi1_f.head<3>();
  m.col(1) = xi2_f.head<3>();
  m.col(2) = xi3_f.head<3>();

  TripletDecomposition d;
  d.r = r;
  d.alpha = m.partialPivLu().solve(Vec3(eta_f.head<3>()));
  d.determinant = m.determinant();
  d.xi2 = f.from_frame(xi2_f);
  d.xi3 = f.from_frame(xi3_f);
  d.b = sign_condition_b(f);
  d.residual = (f.eta - d.alpha(0) * f.xi1 - d.alpha(1) * d.xi2 - d.alpha(2) * d.xi3).norm();
  return d;
}

/// b = 1 − sign·√(1 − r0²).
inline double check_sign_condition(const LightlikeFrame& f) { return sign_condition_b(f); }

/// (λ₁, λ₂, λ₃) = (−r²α₁, r²α₂, r²α₃).
inline Vec3 eta_flow_components(const LightlikeFrame& f, double r) {
  const auto d = lightlike_triplet(f, r);
  return Vec3(-r * r * d.alpha(0), r * r * d.alpha(1), r * r * d.alpha(2));
}

/// |r²α − (−2b, b, b)|.
inline double asymptotic_coefficient_error(const TripletDecomposition& d) {
  return (d.r * d.r * d.alpha - Vec3(-2.0 * d.b, d.b, d.b)).norm();
}

struct SpanLemmaSweep {
  CsvTable table;  // r, alpha1, alpha2, alpha3, b, residual
  std::vector<double> errors;
  double fitted_order = 0.0;
  double max_residual = 0.0;
};

inline SpanLemmaSweep span_lemma_sweep(const LightlikeFrame& f, const std::vector<double>& rs) {
  SpanLemmaSweep s;
  s.table.header = {"r", "alpha1", "alpha2", "alpha3", "b", "residual"};
  for (double r : rs) {
    const auto d = lightlike_triplet(f, r);
    s.table.add_row({r, d.alpha(0), d.alpha(1), d.alpha(2), d.b, d.residual});
    s.errors.push_back(asymptotic_coefficient_error(d));
    s.max_residual = std::max(s.max_residual, d.residual);
  }
  if (rs.size() >= 2) s.fitted_order = loglog_slope(rs, s.errors);
  return s;
}

/// min over the pencil aξ¹ + bξ², (a, b) = (cos τ, sin τ), of |g(v, v)|/|v|²
/// restricted to |sin 2τ| ≥ sin 2δ, i.e. away from the two lightlike lines.
inline double pencil_lightlike_gap(const Vec4& xi_a, const Vec4& xi_b, double delta = 0.05, int samples = 2000) {
  double gap = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    const double tau = std::numbers::pi * (k + 0.5) / samples;
    if (std::abs(std::sin(2.0 * tau)) < std::sin(2.0 * delta)) continue;
    const Vec4 v = std::cos(tau) * xi_a + std::sin(tau) * xi_b;
    gap = std::min(gap, std::abs(minkowski_product(v, v)) / v.squaredNorm());
  }
  return gap;
}

// Three-cone interaction ----------------------------------------------------

struct ConeFamily {
  double s_in = 2.0;
  double r = 0.8;
  std::array<double, 3> rj{};
  std::array<SpacetimePoint, 3> apex{};
};

/// Apexes x_j = (−s_in, −s_in√(1 − r_j²), −s_in r_j, 0) with r_j = (0, r, −r),
/// so the vertex y = 0 lies on every cone.
inline ConeFamily make_cone_family(double s_in, double r) {
  if (!(s_in > 0.0)) throw InvalidArgument("s_in must be positive");
  if (!(r > 0.0 && r < 1.0)) throw InvalidArgument("r must lie in (0, 1)");
  ConeFamily c;
  c.s_in = s_in;
  c.r = r;
  c.rj = {0.0, r, -r};
  for (std::size_t j = 0; j < 3; ++j) {
    c.apex[j] = SpacetimePoint(-s_in, -s_in * lightlike_a(c.rj[j]), -s_in * c.rj[j], 0.0);
  }
  return c;
}

namespace detail {
inline const SpacetimePoint& cone_apex(const ConeFamily& c, int j) {
  if (j < 1 || j > 3) throw InvalidArgument("cone index must be 1, 2 or 3");
  return c.apex[static_cast<std::size_t>(j - 1)];
}
}  // namespace detail

/// |p.x − x_j'| − (p.t − t_j).
inline double cone_residual(const ConeFamily& c, int j, const SpacetimePoint& p) {
  const auto& a = detail::cone_apex(c, j);
  return (p.x - a.x).norm() - (p.t - a.t);
}

inline bool cone_contains(const ConeFamily& c, int j, const SpacetimePoint& p, double tol = 1e-9) {
  const auto& a = detail::cone_apex(c, j);
  const double s = p.t - a.t;
  return s > tol && std::abs(cone_residual(c, j, p)) <= tol * std::max(1.0, s);
}

/// T(z) = −s_in + √(s_in² + z²), evaluated as z²/(s_in + √(s_in² + z²)).
inline double filament_time(double s_in, double z) { return z * z / (s_in + std::sqrt(s_in * s_in + z * z)); }

/// (T(z), 0, 0, z) on K₁ ∩ K₂ ∩ K₃.
inline SpacetimePoint filament_point(double s_in, double z) {
  if (!(s_in > 0.0)) throw InvalidArgument("s_in must be positive");
  return SpacetimePoint(filament_time(s_in, z), 0.0, 0.0, z);
}

struct FlowoutSample {
  Vec4 point;
  Mat43 jacobian;  // columns ∂_t, ∂_φ, ∂_z
};

/// F(t, φ, z) = (T(z) + t, t√(1 − ε²)(cos φ, sin φ), z + tε), ε = T'(z).
inline FlowoutSample flowout_map(double s_in, double t, double phi, double z) {
  if (!(s_in > 0.0)) throw InvalidArgument("s_in must be positive");
  if (!(t > 0.0)) throw InvalidArgument("flowout parameter t must be positive");
  if (!(std::abs(z) < 0.5 * s_in)) throw InvalidArgument("|z| must be below s_in/2");
  const double big_z = std::sqrt(s_in * s_in + z * z);
  const double eps = z / big_z;
  const double q = std::sqrt(1.0 - eps * eps);
  const double deps = (1.0 - eps * eps) / big_z;
  const double c = std::cos(phi), s = std::sin(phi);

  FlowoutSample out;
  out.point = Vec4(filament_time(s_in, z) + t, t * q * c, t * q * s, z + t * eps);
  out.jacobian.col(0) = Vec4(1.0, q * c, q * s, eps);
  out.jacobian.col(1) = Vec4(0.0, -t * q * s, t * q * c, 0.0);
  const double dq = -eps / q * deps;
  out.jacobian.col(2) = Vec4(eps, t * dq * c, t * dq * s, 1.0 + t * deps);
  return out;
}

inline double min_singular_value(const Mat43& m) {
  const Eigen::SelfAdjointEigenSolver<Mat3> es(m.transpose() * m, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues()(0)));
}

struct FlowoutRegion {
  double t_min = 0.1;
  double t_max = 2.0;
  double z_max = 0.4;
};

/// Minimum of σ_min(dF) over a tensor grid of the region.
inline double flowout_min_singular_value(double s_in, const FlowoutRegion& region, int nt = 40, int nphi = 16,
                                         int nz = 41) {
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < nt; ++i) {
    const double t = region.t_min + (region.t_max - region.t_min) * i / std::max(1, nt - 1);
    for (int k = 0; k < nphi; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / nphi;
      for (int l = 0; l < nz; ++l) {
        const double z = -region.z_max + 2.0 * region.z_max * l / std::max(1, nz - 1);
        worst = std::min(worst, min_singular_value(flowout_map(s_in, t, phi, z).jacobian));
      }
    }
  }
  return worst;
}

struct CollisionSearch {
  std::int64_t pairs = 0;
  std::int64_t collisions = 0;
  double min_ratio = std::numeric_limits<double>::infinity();  // |ΔF| / |Δparam|
};

/// Random pairs of parameters in the region, half drawn independently and half
/// as nearby perturbations. A collision is a pair whose images agree to
/// `image_tol` while the parameters (angle taken mod 2π) differ by more than
/// `param_tol`.
inline CollisionSearch flowout_collision_search(double s_in, const FlowoutRegion& region, std::int64_t pairs,
                                                std::uint64_t seed, double image_tol = 1e-9,
                                                double param_tol = 1e-6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(region.t_min, region.t_max);
  std::uniform_real_distribution<double> uphi(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> uz(-region.z_max, region.z_max);
  std::uniform_real_distribution<double> local(-1e-3, 1e-3);
  CollisionSearch r;
  for (std::int64_t i = 0; i < pairs; ++i) {
    const double t1 = ut(rng), p1 = uphi(rng), z1 = uz(rng);
    double t2, p2, z2;
    if (i % 2 == 0) {
      t2 = ut(rng);
      p2 = uphi(rng);
      z2 = uz(rng);
    } else {
      t2 = std::clamp(t1 + local(rng), region.t_min, region.t_max);
      p2 = p1 + local(rng);
      z2 = std::clamp(z1 + local(rng), -region.z_max, region.z_max);
    }
    const double dphi = std::remainder(p1 - p2, 2.0 * std::numbers::pi);
    const double dparam = std::sqrt((t1 - t2) * (t1 - t2) + dphi * dphi + (z1 - z2) * (z1 - z2));
    const double dimage = (flowout_map(s_in, t1, p1, z1).point - flowout_map(s_in, t2, p2, z2).point).norm();
    ++r.pairs;
    if (dparam > param_tol) {
      r.min_ratio = std::min(r.min_ratio, dimage / dparam);
      if (dimage < image_tol) ++r.collisions;
    }
  }
  return r;
}

/// Filament residuals at each z with σ_min(dF) minimized over t ∈ [t_min, t_max]
/// at that z. Columns: z, T, cone_res_1..3, min_singular_value.
inline CsvTable filament_table(double s_in, double r, const std::vector<double>& zs, const FlowoutRegion& region,
                               int nt = 40) {
  const auto fam = make_cone_family(s_in, r);
  CsvTable t;
  t.header = {"z", "T", "cone_res_1", "cone_res_2", "cone_res_3", "min_singular_value"};
  for (double z : zs) {
    const auto p = filament_point(s_in, z);
    double sv = std::numeric_limits<double>::quiet_NaN();
    if (std::abs(z) < 0.5 * s_in) {
      sv = std::numeric_limits<double>::infinity();
      for (int i = 0; i < nt; ++i) {
        const double tt = region.t_min + (region.t_max - region.t_min) * i / std::max(1, nt - 1);
        sv = std::min(sv, min_singular_value(flowout_map(s_in, tt, 0.0, z).jacobian));
      }
    }
    t.add_row({z, p.t, cone_residual(fam, 1, p), cone_residual(fam, 2, p), cone_residual(fam, 3, p), sv});
  }
  return t;
}

namespace detail {
inline Json sphere_triangles(const Vec3& c, double radius, int n_lat, int n_lon) {
  auto vertex = [&](int i, int k) {
    const double th = std::numbers::pi * i / n_lat;
    const double ph = 2.0 * std::numbers::pi * k / n_lon;
    const Vec3 v = c + radius * Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
    return Json::array({v(0), v(1), v(2)});
  };
  Json tris = Json::array();
  for (int i = 0; i < n_lat; ++i) {
    for (int k = 0; k < n_lon; ++k) {
      const Json a = vertex(i, k), b = vertex(i + 1, k), cc = vertex(i + 1, k + 1), d = vertex(i, k + 1);
      if (i + 1 < n_lat) tris.push_back(Json::array({a, b, cc}));
      if (i > 0) tris.push_back(Json::array({a, cc, d}));
    }
  }
  return tris;
}
}  // namespace detail

/// Spatial wavefronts of K₁, K₂, K₃ at time `time` as triangle lists, with the
/// two filament points present at that time.
inline Json cone_mesh_json(double s_in, double r, double time, int n_lat = 24, int n_lon = 48) {
  const auto fam = make_cone_family(s_in, r);
  Json cones = Json::array();
  for (int j = 1; j <= 3; ++j) {
    const auto& a = fam.apex[static_cast<std::size_t>(j - 1)];
    const double radius = time - a.t;
    if (!(radius > 0.0)) throw InvalidArgument("mesh time precedes the cone apexes");
    cones.push_back({{"index", j},
                     {"apex", to_json(a)},
                     {"radius", radius},
                     {"triangles", detail::sphere_triangles(a.x, radius, n_lat, n_lon)}});
  }
  Json filament = Json::array();
  const double z2 = time * time + 2.0 * s_in * time;
  if (z2 >= 0.0) {
    const double z = std::sqrt(z2);
    filament.push_back(Json::array({time, 0.0, 0.0, z}));
    if (z > 0.0) filament.push_back(Json::array({time, 0.0, 0.0, -z}));
  }
  return Json{{"s_in", s_in}, {"r", r}, {"time", time}, {"cones", cones}, {"filament", filament}};
}

// Conormal fiber of the light cone -----------------------------------------

/// Tangent basis of K = {(t, tθ)} at (t, tθ): (1, θ) and t·∂Θ along two
/// orthonormal directions tangent to S² at θ.
inline std::array<Vec4, 3> lightcone_tangent_basis(double t, const Vec3& theta) {
  const Vec3 th = theta.normalized();
  const Vec3 ea = th.unitOrthogonal();
  const Vec3 eb = th.cross(ea);
  std::array<Vec4, 3> out;
  out[0] << 1.0, th;
  out[1] << 0.0, t * ea;
  out[2] << 0.0, t * eb;
  return out;
}

/// Generator (−1, θ) of N*_{(t, tθ)}K \ 0.
inline Vec4 lightcone_conormal_fiber(double t, const Vec3& theta) {
  if (!(t > 0.0)) throw InvalidArgument("t must be positive");
  if (std::abs(theta.norm() - 1.0) > 1e-12) throw InvalidArgument("theta must be a unit vector");
  Vec4 v;
  v << -1.0, theta;
  return v;
}

// Symplectic normal forms ----------------------------------------------------

struct PhaseSpacePoint {
  Vec4 x = Vec4::Zero();
  Vec4 xi = Vec4::Zero();

  [[nodiscard]] Eigen::Matrix<double, 8, 1> as_vec8() const {
    Eigen::Matrix<double, 8, 1> v;
    v << x, xi;
    return v;
  }
  static PhaseSpacePoint from_vec8(const Eigen::Matrix<double, 8, 1>& v) {
    return {v.head<4>(), v.tail<4>()};
  }
};

namespace detail {
inline void check_phase_sign(int sign) {
  if (sign != 1 && sign != -1) throw InvalidArgument("sign must be +1 or -1");
}
inline double spatial_norm(const Vec4& xi) {
  const double n = xi.tail<3>().norm();
  if (!(n > 0.0)) throw InvalidArgument("spatial covector part must be nonzero");
  return n;
}
}  // namespace detail

/// F^±(x⁰, x'; ξ₀, ξ') = (x⁰, x' ∓ x⁰ξ'/|ξ'|; ξ₀ ± |ξ'|, ξ').
inline PhaseSpacePoint symplectic_normal_form(int sign, const PhaseSpacePoint& p) {
  detail::check_phase_sign(sign);
  const double n = detail::spatial_norm(p.xi);
  PhaseSpacePoint q = p;
  q.x.tail<3>() = p.x.tail<3>() - sign * p.x(0) * p.xi.tail<3>() / n;
  q.xi(0) = p.xi(0) + sign * n;
  return q;
}

inline Mat8 symplectic_jacobian(int sign, const PhaseSpacePoint& p) {
  detail::check_phase_sign(sign);
  const double n = detail::spatial_norm(p.xi);
  const Vec3 e = p.xi.tail<3>() / n;
  Mat8 d = Mat8::Identity();
  d.block<3, 1>(1, 0) = -sign * e;
  d.block<3, 3>(1, 5) = -sign * p.x(0) * (Mat3::Identity() - e * e.transpose()) / n;
  d.block<1, 3>(4, 5) = sign * e.transpose();
  return d;
}

inline Mat8 symplectic_jacobian_fd(int sign, const PhaseSpacePoint& p, double h = 1e-6) {
  Mat8 d;
  const auto v = p.as_vec8();
  for (int k = 0; k < 8; ++k) {
    auto vp = v, vm = v;
    vp(k) += h;
    vm(k) -= h;
    d.col(k) = (symplectic_normal_form(sign, PhaseSpacePoint::from_vec8(vp)).as_vec8() -
                symplectic_normal_form(sign, PhaseSpacePoint::from_vec8(vm)).as_vec8()) /
               (2.0 * h);
  }
  return d;
}

inline Mat8 canonical_symplectic_form() {
  Mat8 j = Mat8::Zero();
  j.block<4, 4>(0, 4) = Eigen::Matrix4d::Identity();
  j.block<4, 4>(4, 0) = -Eigen::Matrix4d::Identity();
  return j;
}

/// ‖dFᵀ J dF − J‖_F.
inline double symplectic_residual(const Mat8& d) {
  const Mat8 j = canonical_symplectic_form();
  return (d.transpose() * j * d - j).norm();
}

}  // namespace lightray
