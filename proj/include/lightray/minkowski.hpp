#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lightray/errors.hpp"
#include "lightray/io.hpp"
#include "lightray/linalg.hpp"

namespace lightray {

/// Event (t, x) in 1+3 Minkowski space, light speed 1.
struct SpacetimePoint {
  double t = 0.0;
  Vec3 x = Vec3::Zero();

  SpacetimePoint() = default;
  SpacetimePoint(double t_, const Vec3& x_) : t(t_), x(x_) {}
  SpacetimePoint(double t_, double x1, double x2, double x3) : t(t_), x(x1, x2, x3) {}

  static SpacetimePoint from_vec4(const Vec4& v) { return {v(0), Vec3(v(1), v(2), v(3))}; }
  [[nodiscard]] Vec4 as_vec4() const { return {t, x(0), x(1), x(2)}; }

  /// Translate by a 4-vector displacement.
  [[nodiscard]] SpacetimePoint shifted(const Vec4& d) const {
    return {t + d(0), Vec3(x(0) + d(1), x(1) + d(2), x(2) + d(3))};
  }

  [[nodiscard]] double coord(int mu) const { return mu == 0 ? t : x(mu - 1); }

  [[nodiscard]] bool finite() const { return std::isfinite(t) && x.allFinite(); }
};

inline double euclidean_distance(const SpacetimePoint& a, const SpacetimePoint& b) {
  return (a.as_vec4() - b.as_vec4()).norm();
}

enum class CausalClass { StrictlyBefore, StrictlyAfter, SpacelikeSeparated, Coincident };

inline const char* to_string(CausalClass c) {
  switch (c) {
    case CausalClass::StrictlyBefore: return "StrictlyBefore";
    case CausalClass::StrictlyAfter: return "StrictlyAfter";
    case CausalClass::SpacelikeSeparated: return "SpacelikeSeparated";
    case CausalClass::Coincident: return "Coincident";
  }
  return "?";
}

inline constexpr double kDefaultLightlikeTol = 1e-9;

/// Straight lightlike segment γ(s) = start + s·(1, θ), s ∈ [0, length].
struct LightlikeSegment {
  SpacetimePoint start;
  SpacetimePoint end;
  Vec3 direction = Vec3::UnitX();
  double length = 0.0;

  /// Segment whose end point is computed exactly from start, θ and length.
  static LightlikeSegment from_ray(const SpacetimePoint& start, const Vec3& theta, double length) {
    const double r = theta.norm();
    if (!(r > 0.0) || !(length > 0.0)) throw InvalidArgument("lightlike ray needs a nonzero direction and positive length");
    const Vec3 unit = theta / r;
    return {start, SpacetimePoint(start.t + length, start.x + length * unit), unit, length};
  }

  [[nodiscard]] Vec4 tangent() const { return {1.0, direction(0), direction(1), direction(2)}; }

  [[nodiscard]] SpacetimePoint point_at(double s) const {
    return {start.t + s, start.x + s * direction};
  }
};

/// ℧(ε) = (0,1) × B(ε), an open cylinder around the observer path μ(t) = (t, 0).
struct ObservationSet {
  double epsilon = 0.1;

  explicit ObservationSet(double eps) : epsilon(eps) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidArgument("observation set radius must be positive");
  }
};

/// A broken lightlike path x → y → z with its two legs.
struct TripleSample {
  SpacetimePoint x, y, z;
  LightlikeSegment leg_in;
  LightlikeSegment leg_out;
};

namespace detail {

inline bool lightlike_equal(double dt, double dist, double tol) {
  return std::abs(std::abs(dt) - dist) <= tol * std::max(1.0, std::abs(dt));
}

}  // namespace detail

/// Minkowski order: x ≤ y iff y.t − x.t ≥ |y.x − x.x|; the lightlike boundary
/// (within relative tolerance) counts as causal.
inline CausalClass causal_classify(const SpacetimePoint& a, const SpacetimePoint& b,
                                   double tol = kDefaultLightlikeTol) {
  if (tol < 0.0) throw InvalidArgument("tolerance must be non-negative");
  const double dt = b.t - a.t;
  const double dist = (b.x - a.x).norm();
  const double scale = tol * std::max(1.0, std::abs(dt));
  if (std::abs(dt) <= scale && dist <= scale) return CausalClass::Coincident;
  if (dt > 0.0 && dt >= dist - scale) return CausalClass::StrictlyBefore;
  if (dt < 0.0 && -dt >= dist - scale) return CausalClass::StrictlyAfter;
  return CausalClass::SpacelikeSeparated;
}

/// The future-pointing lightlike segment joining a and b, if one exists.
inline std::optional<LightlikeSegment> lightlike_connects(const SpacetimePoint& a, const SpacetimePoint& b,
                                                          double tol = kDefaultLightlikeTol) {
  if (tol < 0.0) throw InvalidArgument("tolerance must be non-negative");
  const double dt = b.t - a.t;
  const Vec3 dx = b.x - a.x;
  const double dist = dx.norm();
  if (!(dist > tol * std::max(1.0, std::abs(dt)))) return std::nullopt;
  if (!detail::lightlike_equal(dt, dist, tol)) return std::nullopt;
  if (dt > 0.0) return LightlikeSegment{a, b, dx / dist, dist};
  return LightlikeSegment{b, a, -dx / dist, dist};
}

inline bool in_observation_set(const SpacetimePoint& p, const ObservationSet& u) {
  return p.t > 0.0 && p.t < 1.0 && p.x.norm() < u.epsilon;
}

/// Membership in 𝕊⁺(℧): lightlike legs, x < y < z, x, z ∈ ℧, y ∉ ℧.
inline bool is_in_S_plus(const SpacetimePoint& x, const SpacetimePoint& y, const SpacetimePoint& z,
                         const ObservationSet& u, double tol = kDefaultLightlikeTol) {
  if (tol < 0.0) throw InvalidArgument("tolerance must be non-negative");
  if (!in_observation_set(x, u) || !in_observation_set(z, u) || in_observation_set(y, u)) return false;
  if (!(y.t > x.t) || !(z.t > y.t)) return false;
  return lightlike_connects(x, y, tol).has_value() && lightlike_connects(y, z, tol).has_value();
}

inline bool is_in_S_plus(const TripleSample& s, const ObservationSet& u, double tol = kDefaultLightlikeTol) {
  return is_in_S_plus(s.x, s.y, s.z, u, tol);
}

namespace detail {

/// Open interval of affine lengths s > 0 for which y + σ·s·(1, θ) can lie in
/// ℧ for some θ; σ = −1 is the past leg, σ = +1 the future leg.
struct LegRange {
  double lo = 0.0;
  double hi = 0.0;
  [[nodiscard]] bool feasible() const { return lo < hi; }
};

inline LegRange leg_range(const SpacetimePoint& y, const ObservationSet& u, int sigma) {
  const double rho = y.x.norm();
  const double t_lo = sigma < 0 ? y.t - 1.0 : -y.t;
  const double t_hi = sigma < 0 ? y.t : 1.0 - y.t;
  return {std::max({0.0, rho - u.epsilon, t_lo}), std::min(rho + u.epsilon, t_hi)};
}

template <class Rng>
std::optional<LightlikeSegment> sample_leg(const SpacetimePoint& y, const ObservationSet& u, int sigma, Rng& rng) {
  const LegRange range = leg_range(y, u, sigma);
  if (!range.feasible()) return std::nullopt;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = range.lo + (range.hi - range.lo) * unit(rng);
  if (!(s > range.lo && s < range.hi)) return std::nullopt;

  // Directions w with |y.x + s·w| < ε form the cap {w·ŷ > c0}, ŷ = −y.x/|y.x|.
  const double rho = y.x.norm();
  const double eps = u.epsilon;
  Vec3 axis = Vec3::UnitX();
  double c0 = -1.0;
  if (rho > 0.0) {
    axis = -y.x / rho;
    c0 = std::max(-1.0, (rho * rho + s * s - eps * eps) / (2.0 * s * rho));
  } else if (!(s < eps)) {
    return std::nullopt;
  }
  if (c0 >= 1.0) return std::nullopt;
  const double cos_a = c0 + (1.0 - c0) * unit(rng);
  const double sin_a = std::sqrt(std::max(0.0, 1.0 - cos_a * cos_a));
  const double phi = 2.0 * std::numbers::pi * unit(rng);
  Vec3 e1 = axis.unitOrthogonal();
  Vec3 e2 = axis.cross(e1);
  const Vec3 w = cos_a * axis + sin_a * (std::cos(phi) * e1 + std::sin(phi) * e2);

  if (sigma < 0) {
    // x = y − s·(1, θ) with θ = −w; the leg runs from x to y.
    const Vec3 theta = -w;
    const SpacetimePoint x(y.t - s, y.x - s * theta);
    return LightlikeSegment{x, y, theta, s};
  }
  return LightlikeSegment{y, SpacetimePoint(y.t + s, y.x + s * w), w, s};
}

}  // namespace detail

/// Samples triples (x, y, z) ∈ 𝕊⁺(℧) with prescribed vertex y.
///
/// Leg lengths are drawn uniformly over their feasible range and directions
/// uniformly over the spherical cap that hits ℧; every candidate is then
/// re-checked with is_in_S_plus. Returns fewer than `count` entries (possibly
/// none) when the cones of y meet ℧ too thinly.
inline std::vector<TripleSample> sample_triples(const ObservationSet& u, const SpacetimePoint& y, int count,
                                                std::uint64_t seed) {
  if (count < 0) throw InvalidArgument("sample count must be non-negative");
  std::vector<TripleSample> out;
  if (count == 0 || in_observation_set(y, u)) return out;
  if (!detail::leg_range(y, u, -1).feasible() || !detail::leg_range(y, u, +1).feasible()) return out;

  std::mt19937_64 rng(seed);
  const int max_attempts = 64 * count + 256;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < count; ++attempt) {
    auto in = detail::sample_leg(y, u, -1, rng);
    auto leg = detail::sample_leg(y, u, +1, rng);
    if (!in || !leg) continue;
    TripleSample t{in->start, y, leg->end, *in, *leg};
    if (is_in_S_plus(t, u)) out.push_back(std::move(t));
  }
  return out;
}

/// 𝔻(℧) membership by direct geometry: y ∉ ℧ and both light cones of y reach ℧
/// within the time window.
inline bool in_diamond(const SpacetimePoint& y, const ObservationSet& u) {
  if (in_observation_set(y, u)) return false;
  return detail::leg_range(y, u, -1).feasible() && detail::leg_range(y, u, +1).feasible();
}

// Serialization ------------------------------------------------------------

inline Json to_json(const SpacetimePoint& p) { return Json::array({p.t, p.x(0), p.x(1), p.x(2)}); }

inline SpacetimePoint point_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("spacetime point must be an array [t, x1, x2, x3]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline Json to_json(const TripleSample& s) {
  return Json{{"x", to_json(s.x)}, {"y", to_json(s.y)}, {"z", to_json(s.z)}};
}

inline TripleSample triple_from_json(const Json& j, double tol = kDefaultLightlikeTol) {
  TripleSample s;
  s.x = point_from_json(j.at("x"));
  s.y = point_from_json(j.at("y"));
  s.z = point_from_json(j.at("z"));
  auto in = lightlike_connects(s.x, s.y, tol);
  auto out = lightlike_connects(s.y, s.z, tol);
  if (!in || !out || in->start.t != s.x.t || out->start.t != s.y.t) {
    throw ConfigError("triple legs are not future-pointing lightlike segments");
  }
  s.leg_in = *in;
  s.leg_out = *out;
  return s;
}

inline std::vector<std::string> triple_csv_header() {
  return {"x_t", "x_x1", "x_x2", "x_x3", "y_t", "y_x1", "y_x2", "y_x3", "z_t", "z_x1", "z_x2", "z_x3"};
}

inline std::vector<double> triple_csv_row(const TripleSample& s) {
  std::vector<double> row;
  row.reserve(12);
  for (const auto* p : {&s.x, &s.y, &s.z}) {
    row.push_back(p->t);
    for (int k = 0; k < 3; ++k) row.push_back(p->x(k));
  }
  return row;
}

}  // namespace lightray
