#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lightray/connection.hpp"
#include "lightray/errors.hpp"
#include "lightray/gauge.hpp"
#include "lightray/io.hpp"
#include "lightray/linalg.hpp"
#include "lightray/minkowski.hpp"
#include "lightray/parallel.hpp"
#include "lightray/transport.hpp"

namespace lightray {

/// S^A_{z←y←x} for one triple.
struct BrokenRayDatum {
  TripleSample triple;
  CMatrix S;
  double unitarity_defect = 0.0;
};

namespace detail {

inline void check_triple_geometry(const TripleSample& t, double tol = 1e-9) {
  auto close = [tol](const SpacetimePoint& a, const SpacetimePoint& b) { return euclidean_distance(a, b) <= tol; };
  const bool legs_ok = close(t.leg_in.start, t.x) && close(t.leg_in.end, t.y) && close(t.leg_out.start, t.y) &&
                       close(t.leg_out.end, t.z) && t.leg_in.length > 0.0 && t.leg_out.length > 0.0;
  if (!legs_ok || !lightlike_connects(t.x, t.y) || !lightlike_connects(t.y, t.z) || !(t.x.t < t.y.t) ||
      !(t.y.t < t.z.t)) {
    throw InvalidArgument("triple is not a future-pointing broken lightlike path x → y → z");
  }
}

inline int leg_steps(int steps, double length) { return steps > 0 ? steps : default_transport_steps(length); }

}  // namespace detail

/// S = P^A_{z←y} P^A_{y←x}. `steps` ≤ 0 selects the default step count per leg.
/// With an observation set, full 𝕊⁺(℧) membership is enforced.
inline BrokenRayDatum broken_transform(const ConnectionField& a, const TripleSample& triple, int steps = 0,
                                       const std::optional<ObservationSet>& u = std::nullopt) {
  detail::check_triple_geometry(triple);
  if (u && !is_in_S_plus(triple, *u)) throw InvalidArgument("triple is not in S+ of the observation set");
  const CMatrix p_in = parallel_transport(a, triple.leg_in, detail::leg_steps(steps, triple.leg_in.length)).matrix;
  const CMatrix p_out = parallel_transport(a, triple.leg_out, detail::leg_steps(steps, triple.leg_out.length)).matrix;
  BrokenRayDatum d{triple, p_out * p_in, 0.0};
  d.unitarity_defect = unitarity_defect(d.S);
  return d;
}

/// S^A_{x←y←z} = P^A_{x←y} P^A_{y←z}, the reversed broken path.
inline CMatrix broken_transform_reverse(const ConnectionField& a, const TripleSample& triple, int steps = 0) {
  detail::check_triple_geometry(triple);
  const CMatrix back_out =
      parallel_transport_reverse(a, triple.leg_out, detail::leg_steps(steps, triple.leg_out.length));
  const CMatrix back_in = parallel_transport_reverse(a, triple.leg_in, detail::leg_steps(steps, triple.leg_in.length));
  return back_in * back_out;
}

/// u(y, x) = P^A_{y←x} P^B_{x←y}.
inline CMatrix gauge_from_base_point(const ConnectionField& a, const ConnectionField& b, const LightlikeSegment& seg,
                                     int steps = 0) {
  const int k = detail::leg_steps(steps, seg.length);
  return parallel_transport(a, seg, k).matrix * parallel_transport_reverse(b, seg, k);
}

struct ReconstructionReport {
  SpacetimePoint y;
  CMatrix u_rec;
  double x_independence_defect = 0.0;  // max pairwise ‖u(y,x_i) − u(y,x_j)‖_F
  double gauge_residual = std::numeric_limits<double>::quiet_NaN();
  double unitarity_defect = 0.0;  // of the base-point mean, before projection
  int base_points_used = 0;
};

/// Builds u(y, x) for every usable base point (lightlike-connected to y and in
/// its past), averages and projects the mean onto U(n).
inline ReconstructionReport reconstruct_gauge_at(const ConnectionField& a, const ConnectionField& b,
                                                 const SpacetimePoint& y, std::span<const SpacetimePoint> base_points,
                                                 int steps = 0) {
  if (a.rank() != b.rank()) throw InvalidArgument("connection ranks differ");
  std::vector<CMatrix> estimates;
  for (const auto& x : base_points) {
    auto seg = lightlike_connects(x, y);
    if (!seg || !(x.t < y.t)) continue;
    estimates.push_back(gauge_from_base_point(a, b, *seg, steps));
  }
  if (estimates.empty()) throw InvalidArgument("no base point lightlike-connects to the vertex from its past");

  ReconstructionReport r;
  r.y = y;
  r.base_points_used = static_cast<int>(estimates.size());
  CMatrix mean = CMatrix::Zero(a.rank(), a.rank());
  for (const auto& e : estimates) mean += e;
  mean /= static_cast<double>(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i)
    for (std::size_t j = i + 1; j < estimates.size(); ++j)
      r.x_independence_defect = std::max(r.x_independence_defect, (estimates[i] - estimates[j]).norm());
  r.unitarity_defect = unitarity_defect(mean);
  r.u_rec = polar_unitary(mean);
  return r;
}

using SampledGauge = std::function<CMatrix(const SpacetimePoint&)>;

/// p ↦ P^A_{p←x} P^B_{x←p} for p on the line of `seg`, x = seg.start, with a
/// fixed RK4 step count so the sampled map is smooth in p.
inline SampledGauge reconstructed_gauge_along(const ConnectionField& a, const ConnectionField& b,
                                              const LightlikeSegment& seg, int steps) {
  if (steps < 1) throw InvalidArgument("transport needs at least one step");
  return [a, b, seg, steps](const SpacetimePoint& p) {
    const double s = p.t - seg.start.t;
    return CMatrix(integrate_transport(a, seg.start, seg.tangent(), 0.0, s, steps) *
                   integrate_transport(b, seg.start, seg.tangent(), s, 0.0, steps));
  };
}

/// max over interior sample parameters of ‖⟨Ã − B, γ̇⟩‖_F with
/// Ã = u⁻¹du + u⁻¹Au, the directional derivative of the sampled u taken by
/// central differences of step fd_step along γ.
inline double verify_pairing_match(const ConnectionField& a, const ConnectionField& b, const SampledGauge& u_field,
                                   const LightlikeSegment& seg, double fd_step, int samples = 9) {
  if (!(fd_step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  if (samples < 1) throw InvalidArgument("need at least one sample");
  const Vec4 v = seg.tangent();
  double worst = 0.0;
  for (int k = 1; k <= samples; ++k) {
    const double s = seg.length * k / (samples + 1);
    const SpacetimePoint p = seg.point_at(s);
    const CMatrix u = u_field(p);
    const CMatrix du = (u_field(seg.point_at(s + fd_step)) - u_field(seg.point_at(s - fd_step))) / (2.0 * fd_step);
    const CMatrix uinv = u.partialPivLu().inverse();
    const CMatrix tilde = uinv * du + uinv * pairing(a, p, v) * u;
    worst = std::max(worst, (tilde - pairing(b, p, v)).norm());
  }
  return worst;
}

struct DirectionalPairing {
  Vec4 direction;
  CMatrix value;
};

/// Unit vectors to the vertices of a regular tetrahedron.
inline std::array<Vec3, 4> tetrahedral_directions() {
  const double c = 1.0 / std::sqrt(3.0);
  return {Vec3(c, c, c), Vec3(c, -c, -c), Vec3(-c, c, -c), Vec3(-c, -c, c)};
}

inline constexpr double kMaxDirectionCondition = 1e3;

/// Least-squares solve of Σ_μ C_μ v_k^μ = value_k, entrywise in the matrix
/// components.
inline Components recover_connection_at(const SpacetimePoint& /*y*/, std::span<const DirectionalPairing> pairings) {
  if (pairings.size() < 4) throw DegenerateSpan("at least four directions are needed to span the tangent space");
  const auto n = pairings.front().value.rows();
  const auto k_count = static_cast<Eigen::Index>(pairings.size());
  Eigen::MatrixXd v(k_count, 4);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& p = pairings[static_cast<std::size_t>(k)];
    if (p.value.rows() != n || p.value.cols() != n) throw InvalidArgument("pairing values have inconsistent sizes");
    v.row(k) = p.direction.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv(3) > 0.0) || sv(0) / sv(3) > kMaxDirectionCondition) {
    throw DegenerateSpan("direction set is rank deficient or too ill-conditioned");
  }
  Eigen::MatrixXcd rhs(k_count, n * n);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& val = pairings[static_cast<std::size_t>(k)].value;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) rhs(k, i * n + j) = val(i, j);
  }
  const Eigen::MatrixXcd vc = v.cast<Complex>();
  const Eigen::MatrixXcd sol = vc.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
  Components out = zero_components(n);
  for (std::size_t mu = 0; mu < 4; ++mu)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) out[mu](i, j) = sol(static_cast<Eigen::Index>(mu), i * n + j);
  return out;
}

/// Samples `count` vertices of 𝔻(℧), optionally restricted to the Euclidean
/// 4-ball around `center`.
inline std::vector<SpacetimePoint> sample_diamond_points(const ObservationSet& u, int count, std::uint64_t seed,
                                                         const std::optional<SpacetimePoint>& center = std::nullopt,
                                                         double radius = 0.0) {
  std::vector<SpacetimePoint> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double reach = 0.5 + u.epsilon;
  const int max_attempts = 10000 * std::max(count, 1);
  for (int i = 0; i < max_attempts && static_cast<int>(out.size()) < count; ++i) {
    SpacetimePoint y;
    if (center) {
      Vec4 d(unit(rng), unit(rng), unit(rng), unit(rng));
      if (d.norm() >= 1.0) continue;
      y = center->shifted(radius * d);
    } else {
      y = SpacetimePoint(0.5 + 0.5 * unit(rng), reach * unit(rng), reach * unit(rng), reach * unit(rng));
    }
    if (in_diamond(y, u)) out.push_back(y);
  }
  return out;
}

struct EndToEndOptions {
  int steps = 0;              // per-leg RK4 steps; ≤ 0 selects the default
  int base_points = 6;        // base points per vertex
  int s_triples = 200;        // triples for the S-equality hypothesis check
  double fd_step = 1e-3;      // stencil step for du_rec
  bool gauge_residual = true;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

struct EndToEndRow {
  SpacetimePoint y;
  double x_indep_defect = 0.0;
  double gauge_residual = std::numeric_limits<double>::quiet_NaN();
  double unitarity_defect = 0.0;
  double u_error = std::numeric_limits<double>::quiet_NaN();  // ‖u_rec − u(y)‖_F
  int base_points_used = 0;
};

struct EndToEndReport {
  std::vector<EndToEndRow> rows;
  int skipped_points = 0;        // grid points without base points
  int triples_checked = 0;
  double max_s_difference = 0.0;      // max ‖S^A − S^B‖_F
  double max_inverse_residual = 0.0;  // max ‖S_{x←y←z} S_{z←y←x} − I‖_F

  [[nodiscard]] CsvTable table() const {
    CsvTable t;
    t.header = {"y_t", "y_x1", "y_x2", "y_x3", "x_indep_defect", "gauge_residual", "unitarity_defect"};
    for (const auto& r : rows)
      t.add_row({r.y.t, r.y.x(0), r.y.x(1), r.y.x(2), r.x_indep_defect, r.gauge_residual, r.unitarity_defect});
    return t;
  }

  [[nodiscard]] Json summary() const {
    std::vector<double> xd, gr, ud, ue;
    for (const auto& r : rows) {
      xd.push_back(r.x_indep_defect);
      gr.push_back(r.gauge_residual);
      ud.push_back(r.unitarity_defect);
      ue.push_back(r.u_error);
    }
    return Json{{"x_indep_defect", summary_stats(xd)},
                {"gauge_residual", summary_stats(gr)},
                {"unitarity_defect", summary_stats(ud)},
                {"u_error", summary_stats(ue)},
                {"s_difference", {{"max", max_s_difference}, {"count", triples_checked}}},
                {"inverse_residual", {{"max", max_inverse_residual}, {"count", triples_checked}}},
                {"skipped_points", skipped_points}};
  }
};

/// Reconstruction of u at y from base points drawn by sample_triples.
inline std::optional<ReconstructionReport> reconstruct_from_samples(const ConnectionField& a,
                                                                    const ConnectionField& b,
                                                                    const ObservationSet& u, const SpacetimePoint& y,
                                                                    int base_points, std::uint64_t seed, int steps) {
  const auto triples = sample_triples(u, y, base_points, seed);
  if (triples.empty()) return std::nullopt;
  std::vector<SpacetimePoint> xs;
  for (const auto& t : triples) xs.push_back(t.x);
  return reconstruct_gauge_at(a, b, y, xs, steps);
}

/// ‖B − (u⁻¹du + u⁻¹Au)‖ at y (root-sum-square over μ of Frobenius norms), with
/// du from central differences of reconstructions at y ± h·e_μ.
inline double reconstructed_gauge_residual(const ConnectionField& a, const ConnectionField& b,
                                           const ObservationSet& u, const SpacetimePoint& y, const CMatrix& u_rec,
                                           double h, int base_points, std::uint64_t seed, int steps) {
  const Components ay = a(y);
  const Components by = b(y);
  const CMatrix uinv = u_rec.partialPivLu().inverse();
  double sum = 0.0;
  for (int mu = 0; mu < 4; ++mu) {
    Vec4 e = Vec4::Zero();
    e(mu) = h;
    auto plus = reconstruct_from_samples(a, b, u, y.shifted(e), base_points, seed, steps);
    auto minus = reconstruct_from_samples(a, b, u, y.shifted(-e), base_points, seed, steps);
    if (!plus || !minus) return std::numeric_limits<double>::quiet_NaN();
    const CMatrix du = (plus->u_rec - minus->u_rec) / (2.0 * h);
    const auto m = static_cast<std::size_t>(mu);
    const CMatrix tilde = uinv * du + uinv * ay[m] * u_rec;
    sum += (by[m] - tilde).squaredNorm();
  }
  return std::sqrt(sum);
}

/// Synthetic inversion experiment: B = u⁻¹du + u⁻¹Au is built from a gauge
/// trivial on ℧, the S-equality hypothesis is checked on sampled triples, and u
/// is reconstructed on y_grid and compared with the known gauge.
inline EndToEndReport end_to_end_synthetic(const ConnectionField& a, const GaugeMap& gauge,
                                           const ObservationSet& u, std::span<const SpacetimePoint> y_grid,
                                           const EndToEndOptions& opt = {}) {
  const ConnectionField b = gauge_transform_connection(a, gauge);
  EndToEndReport report;

  // Hypothesis: S^A = S^B on 𝕊⁺(℧).
  if (!y_grid.empty() && opt.s_triples > 0) {
    const int per_point = (opt.s_triples + static_cast<int>(y_grid.size()) - 1) / static_cast<int>(y_grid.size());
    std::vector<TripleSample> triples;
    for (std::size_t i = 0; i < y_grid.size() && static_cast<int>(triples.size()) < opt.s_triples; ++i) {
      auto ts = sample_triples(u, y_grid[i], per_point, opt.seed + 7919ULL * (i + 1));
      for (auto& t : ts)
        if (static_cast<int>(triples.size()) < opt.s_triples) triples.push_back(std::move(t));
    }
    std::vector<double> diff(triples.size()), inv(triples.size());
    parallel_for(triples.size(), opt.workers, [&](std::size_t i) {
      const auto sa = broken_transform(a, triples[i], opt.steps);
      const auto sb = broken_transform(b, triples[i], opt.steps);
      diff[i] = (sa.S - sb.S).norm();
      const CMatrix back = broken_transform_reverse(a, triples[i], opt.steps);
      inv[i] = (back * sa.S - CMatrix::Identity(a.rank(), a.rank())).norm();
    });
    report.triples_checked = static_cast<int>(triples.size());
    for (std::size_t i = 0; i < triples.size(); ++i) {
      report.max_s_difference = std::max(report.max_s_difference, diff[i]);
      report.max_inverse_residual = std::max(report.max_inverse_residual, inv[i]);
    }
  }

  std::vector<std::optional<EndToEndRow>> rows(y_grid.size());
  parallel_for(y_grid.size(), opt.workers, [&](std::size_t i) {
    const auto& y = y_grid[i];
    const std::uint64_t seed = opt.seed + 104729ULL * (i + 1);
    auto rec = reconstruct_from_samples(a, b, u, y, opt.base_points, seed, opt.steps);
    if (!rec) return;
    EndToEndRow row;
    row.y = y;
    row.x_indep_defect = rec->x_independence_defect;
    row.unitarity_defect = rec->unitarity_defect;
    row.base_points_used = rec->base_points_used;
    row.u_error = (rec->u_rec - gauge(y)).norm();
    if (opt.gauge_residual) {
      row.gauge_residual =
          reconstructed_gauge_residual(a, b, u, y, rec->u_rec, opt.fd_step, opt.base_points, seed, opt.steps);
    }
    rows[i] = row;
  });
  for (auto& r : rows) {
    if (r) report.rows.push_back(*r);
    else ++report.skipped_points;
  }
  return report;
}

}  // namespace lightray
