#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "lightray/connection.hpp"
#include "lightray/errors.hpp"
#include "lightray/gauge.hpp"
#include "lightray/linalg.hpp"
#include "lightray/minkowski.hpp"

namespace lightray {

struct TransportResult {
  CMatrix matrix;
  double unitarity_defect = 0.0;  // before projection, when one was requested
  int steps_used = 0;
};

/// max(100, ⌈s_len / 10⁻³⌉).
inline int default_transport_steps(double length) {
  return std::max(100, static_cast<int>(std::ceil(std::abs(length) / 1e-3)));
}

/// Solves dW/ds = −⟨A(origin + s·v), v⟩ W from s_from to s_to with W(s_from) = I
/// by classical RK4 on a uniform grid of `steps` intervals. Backward
/// integration (s_to < s_from) is allowed.
inline CMatrix integrate_transport(const ConnectionField& a, const SpacetimePoint& origin, const Vec4& velocity,
                                   double s_from, double s_to, int steps) {
  if (steps < 1) throw InvalidArgument("transport needs at least one step");
  const Eigen::Index n = a.rank();
  CMatrix w = CMatrix::Identity(n, n);
  if (s_from == s_to) return w;

  Components comp = zero_components(n);
  auto generator = [&](double s, CMatrix& out) {
    a.evaluate(origin.shifted(s * velocity), comp);
    out.noalias() = -velocity(0) * comp[0];
    for (std::size_t mu = 1; mu < 4; ++mu) out.noalias() -= velocity(static_cast<Eigen::Index>(mu)) * comp[mu];
  };

  const double h = (s_to - s_from) / steps;
  CMatrix g0(n, n), gm(n, n), g1(n, n);
  CMatrix k1(n, n), k2(n, n), k3(n, n), k4(n, n), tmp(n, n);
  generator(s_from, g0);
  if (a.is_static()) {
    gm = g0;
    g1 = g0;
  }
  for (int i = 0; i < steps; ++i) {
    const double s = s_from + i * h;
    if (!a.is_static()) {
      generator(s + 0.5 * h, gm);
      generator(i + 1 == steps ? s_to : s + h, g1);
    }
    k1.noalias() = g0 * w;
    tmp = w + (0.5 * h) * k1;
    k2.noalias() = gm * tmp;
    tmp = w + (0.5 * h) * k2;
    k3.noalias() = gm * tmp;
    tmp = w + h * k3;
    k4.noalias() = g1 * tmp;
    w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!a.is_static()) g0.swap(g1);
  }
  return w;
}

/// P^A_{end←start} along the segment, with the unitarity drift reported. With
/// `project`, the result is replaced by its polar unitary factor.
inline TransportResult parallel_transport(const ConnectionField& a, const LightlikeSegment& seg, int steps,
                                          bool project = false) {
  if (steps < 1) throw InvalidArgument("transport needs at least one step");
  TransportResult r;
  r.matrix = integrate_transport(a, seg.start, seg.tangent(), 0.0, seg.length, steps);
  r.unitarity_defect = unitarity_defect(r.matrix);
  r.steps_used = steps;
  if (project) r.matrix = polar_unitary(r.matrix);
  return r;
}

inline TransportResult parallel_transport(const ConnectionField& a, const LightlikeSegment& seg) {
  return parallel_transport(a, seg, default_transport_steps(seg.length));
}

/// P^A_{start←end}: the same geodesic traversed backwards.
inline CMatrix parallel_transport_reverse(const ConnectionField& a, const LightlikeSegment& seg, int steps) {
  return integrate_transport(a, seg.start, seg.tangent(), seg.length, 0.0, steps);
}

/// U^A(t, s) along the geodesic through seg.start with velocity (1, θ).
inline CMatrix fundamental_solution(const ConnectionField& a, const LightlikeSegment& seg, double t_param,
                                    double s_param, int steps) {
  return integrate_transport(a, seg.start, seg.tangent(), s_param, t_param, steps);
}

/// ‖P^{A^u}_{end←start} − u(end)⁻¹ P^A_{end←start} u(start)‖_F.
inline double transport_gauge_covariance_check(const ConnectionField& a, const GaugeMap& g,
                                               const LightlikeSegment& seg, int steps, double fd_step = 1e-4) {
  const ConnectionField b = gauge_transform_connection(a, g, fd_step);
  const CMatrix pb = parallel_transport(b, seg, steps).matrix;
  const CMatrix pa = parallel_transport(a, seg, steps).matrix;
  const CMatrix expected = g(seg.end).partialPivLu().inverse() * pa * g(seg.start);
  return (pb - expected).norm();
}

/// Lightlike segment of uniform length in (0, max_length] lying inside the box
/// |p^ν| ≤ half_width, with a uniformly random direction.
template <class Rng>
LightlikeSegment random_segment_in_box(Rng& rng, double max_length, double half_width) {
  if (!(max_length > 0.0) || !(2.0 * half_width >= max_length)) {
    throw InvalidArgument("segment length must be positive and fit inside the box");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double s = 0.0;
  while (!(s > 0.0)) s = max_length * unit(rng);
  const Vec3 theta = random_unit_vector(rng);
  auto place = [&](double delta) {
    const double lo = std::max(-half_width, -half_width - delta);
    const double hi = std::min(half_width, half_width - delta);
    return lo + (hi - lo) * unit(rng);
  };
  const SpacetimePoint start(place(s), place(s * theta(0)), place(s * theta(1)), place(s * theta(2)));
  return LightlikeSegment::from_ray(start, theta, s);
}

/// Fitted log-log slope of ‖W_h − exact‖_F against the step size h over the
/// given step counts.
inline double observed_transport_order(const ConnectionField& a, const LightlikeSegment& seg, const CMatrix& exact,
                                       std::span<const int> step_counts) {
  std::vector<double> hs, errs;
  for (int steps : step_counts) {
    hs.push_back(seg.length / steps);
    errs.push_back((parallel_transport(a, seg, steps).matrix - exact).norm());
  }
  return loglog_slope(hs, errs);
}

}  // namespace lightray
