#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lightray/connection.hpp"
#include "lightray/errors.hpp"
#include "lightray/io.hpp"
#include "lightray/linalg.hpp"
#include "lightray/minkowski.hpp"

namespace lightray {

/// ∂_μ u at one point, μ = 0..3.
using GaugeDifferential = std::array<CMatrix, 4>;

/// Smooth map x ↦ u(x) ∈ U(n), optionally with its analytic differential.
class GaugeMap {
 public:
  using EvalFn = std::function<CMatrix(const SpacetimePoint&)>;
  using DiffFn = std::function<GaugeDifferential(const SpacetimePoint&)>;

  GaugeMap(int n, EvalFn eval, DiffFn diff = {}, std::optional<Json> description = std::nullopt)
      : n_(n), eval_(std::move(eval)), diff_(std::move(diff)), description_(std::move(description)) {
    if (n < 1) throw InvalidArgument("gauge rank must be positive");
    if (!eval_) throw InvalidArgument("gauge map needs an evaluator");
  }

  static GaugeMap identity(int n) {
    const Eigen::Index k = n;
    return GaugeMap(
        n, [k](const SpacetimePoint&) { return CMatrix::Identity(k, k); },
        [k](const SpacetimePoint&) {
          return GaugeDifferential{CMatrix::Zero(k, k), CMatrix::Zero(k, k), CMatrix::Zero(k, k), CMatrix::Zero(k, k)};
        },
        Json{{"n", n}, {"terms", Json::array()}});
  }

  [[nodiscard]] int rank() const { return n_; }
  [[nodiscard]] bool has_differential() const { return static_cast<bool>(diff_); }
  [[nodiscard]] const std::optional<Json>& description() const { return description_; }

  [[nodiscard]] CMatrix operator()(const SpacetimePoint& p) const { return eval_(p); }

  [[nodiscard]] GaugeDifferential differential(const SpacetimePoint& p) const {
    if (!diff_) throw InvalidArgument("gauge map has no analytic differential");
    return diff_(p);
  }

  /// Central-difference differential with step h.
  [[nodiscard]] GaugeDifferential differential_fd(const SpacetimePoint& p, double h) const {
    if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
    GaugeDifferential d;
    for (int mu = 0; mu < 4; ++mu) {
      Vec4 e = Vec4::Zero();
      e(mu) = h;
      d[static_cast<std::size_t>(mu)] = (eval_(p.shifted(e)) - eval_(p.shifted(-e))) / (2.0 * h);
    }
    return d;
  }

  [[nodiscard]] Json to_json() const {
    if (!description_) throw InvalidArgument("gauge map has no serializable description");
    return *description_;
  }

 private:
  int n_;
  EvalFn eval_;
  DiffFn diff_;
  std::optional<Json> description_;
};

/// Compactly supported C^∞ bump on the Euclidean 4-ball: e^{1 − 1/(1 − ρ²)}
/// with ρ = |p − c|/R, equal to 1 at the centre and 0 for ρ ≥ 1.
struct SmoothBump {
  Vec4 center = Vec4::Zero();
  double radius = 1.0;

  [[nodiscard]] double value(const Vec4& p) const {
    const double q = (p - center).squaredNorm() / (radius * radius);
    if (q >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - q));
  }

  [[nodiscard]] Vec4 gradient(const Vec4& p) const {
    const double q = (p - center).squaredNorm() / (radius * radius);
    if (q >= 1.0) return Vec4::Zero();
    const double w = 1.0 / (1.0 - q);
    return value(p) * (-w * w) * (2.0 / (radius * radius)) * (p - center);
  }
};

/// Euclidean distance in ℝ⁴ from a point to the closed cylinder [0,1] × B̄(ε).
inline double distance_to_observation_closure(const Vec4& p, const ObservationSet& u) {
  const double dt = std::max({0.0, -p(0), p(0) - 1.0});
  const double dx = std::max(0.0, Vec3(p(1), p(2), p(3)).norm() - u.epsilon);
  return std::hypot(dt, dx);
}

namespace detail {

struct BumpFactor {
  SkewHermitianExponential exp;
  SmoothBump bump;
};

inline GaugeMap bump_product_gauge(int n, std::vector<BumpFactor> factors) {
  auto shared = std::make_shared<const std::vector<BumpFactor>>(std::move(factors));
  const Eigen::Index k = n;
  auto eval = [shared, k](const SpacetimePoint& p) {
    const Vec4 q = p.as_vec4();
    CMatrix u = CMatrix::Identity(k, k);
    for (const auto& f : *shared) {
      const double chi = f.bump.value(q);
      if (chi != 0.0) u = u * f.exp(chi);
    }
    return u;
  };
  auto diff = [shared, k](const SpacetimePoint& p) {
    const Vec4 q = p.as_vec4();
    // Product rule over u = Π_j exp(χ_j X_j), with ∂ exp(χX) = ∂χ·X·exp(χX).
    GaugeDifferential d{CMatrix::Zero(k, k), CMatrix::Zero(k, k), CMatrix::Zero(k, k), CMatrix::Zero(k, k)};
    CMatrix prefix = CMatrix::Identity(k, k);
    std::vector<CMatrix> factors;
    std::vector<Vec4> grads;
    for (const auto& f : *shared) {
      factors.push_back(f.exp(f.bump.value(q)));
      grads.push_back(f.bump.gradient(q));
    }
    for (std::size_t j = 0; j < factors.size(); ++j) {
      if (grads[j].norm() != 0.0) {
        CMatrix suffix = CMatrix::Identity(k, k);
        for (std::size_t l = j + 1; l < factors.size(); ++l) suffix = suffix * factors[l];
        const CMatrix core = prefix * (*shared)[j].exp.generator() * factors[j] * suffix;
        for (int mu = 0; mu < 4; ++mu) d[static_cast<std::size_t>(mu)] += grads[j](mu) * core;
      }
      prefix = prefix * factors[j];
    }
    return d;
  };
  Json terms = Json::array();
  for (const auto& f : *shared) {
    terms.push_back({{"kind", "bump"},
                     {"matrix", matrix_to_json(f.exp.generator())},
                     {"params", {{"center", vec4_to_json(f.bump.center)}, {"radius", f.bump.radius}}}});
  }
  return GaugeMap(n, std::move(eval), std::move(diff), Json{{"n", n}, {"terms", terms}});
}

inline void check_bump_support(const SmoothBump& b, const ObservationSet& u) {
  if (distance_to_observation_closure(b.center, u) < b.radius) {
    throw InvalidArgument("bump gauge support overlaps the closure of the observation set");
  }
}

}  // namespace detail

/// u(p) = exp(χ(p)·X) with χ the smooth bump of the given centre and radius;
/// identically I on ℧ because the support avoids its closure.
inline GaugeMap make_bump_gauge(int n, const CMatrix& generator, const SpacetimePoint& center, double radius,
                                const ObservationSet& u) {
  if (generator.rows() != n || generator.cols() != n) throw InvalidArgument("gauge generator has wrong size");
  if (!is_skew_hermitian(generator, 1e-10)) throw InvalidArgument("gauge generator must be skew-Hermitian");
  if (!(radius > 0.0)) throw InvalidArgument("bump radius must be positive");
  SmoothBump bump{center.as_vec4(), radius};
  detail::check_bump_support(bump, u);
  return detail::bump_product_gauge(n, {detail::BumpFactor{SkewHermitianExponential(generator), bump}});
}

/// Gauge description {n, terms:[{kind:"bump", matrix, params:{center, radius}}]};
/// the map is the ordered product of the bump exponentials. When `u` is given
/// every support is checked against ℧.
inline GaugeMap gauge_from_json(const Json& j, const std::optional<ObservationSet>& u = std::nullopt) {
  if (!j.is_object()) throw ConfigError("gauge description must be an object");
  for (const auto& item : j.items()) {
    if (item.key() != "n" && item.key() != "terms") throw ConfigError("unknown gauge key '" + item.key() + "'");
  }
  if (!j.contains("n") || !j["n"].is_number_integer() || j["n"].get<int>() < 1) {
    throw ConfigError("gauge.n must be a positive integer");
  }
  const int n = j["n"].get<int>();
  std::vector<detail::BumpFactor> factors;
  for (const auto& jt : j.value("terms", Json::array())) {
    const std::string kind = jt.at("kind").get<std::string>();
    if (kind != "bump") throw ConfigError("unknown gauge term kind '" + kind + "' (allowed: bump)");
    const CMatrix x = matrix_from_json(jt.at("matrix"), n);
    if (!is_skew_hermitian(x, 1e-10)) throw ConfigError("gauge generator must be skew-Hermitian");
    const Json& params = jt.at("params");
    SmoothBump bump{vec4_from_json(params.at("center")), params.at("radius").get<double>()};
    if (!(bump.radius > 0.0)) throw ConfigError("gauge bump radius must be positive");
    if (u) {
      try {
        detail::check_bump_support(bump, *u);
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("gauge: ") + e.what());
      }
    }
    factors.push_back({SkewHermitianExponential(x), bump});
  }
  return detail::bump_product_gauge(n, std::move(factors));
}

inline constexpr double kGaugeUnitarityTol = 1e-8;

/// B = u⁻¹du + u⁻¹Au. Uses the analytic differential of u when present,
/// otherwise central differences with step fd_step.
inline ConnectionField gauge_transform_connection(const ConnectionField& a, const GaugeMap& g,
                                                  double fd_step = 1e-4) {
  if (a.rank() != g.rank()) throw InvalidArgument("connection and gauge ranks differ");
  if (!g.has_differential() && !(fd_step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  auto eval = [a, g, fd_step](const SpacetimePoint& p, Components& out) {
    const CMatrix u = g(p);
    const double defect = unitarity_defect(u);
    if (!(defect <= kGaugeUnitarityTol)) {
      throw InvalidGauge("gauge map is not unitary at an evaluated point (defect " + format_double(defect) + ")");
    }
    const CMatrix uinv = u.partialPivLu().inverse();
    const GaugeDifferential du = g.has_differential() ? g.differential(p) : g.differential_fd(p, fd_step);
    a.evaluate(p, out);
    for (std::size_t mu = 0; mu < 4; ++mu) out[mu] = uinv * du[mu] + uinv * out[mu] * u;
  };
  return ConnectionField(a.rank(), std::move(eval));
}

}  // namespace lightray
