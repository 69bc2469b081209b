#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lightray/connection.hpp"
#include "lightray/errors.hpp"
#include "lightray/io.hpp"
#include "lightray/linalg.hpp"
#include "lightray/minkowski.hpp"
#include "lightray/parallel.hpp"

namespace lightray {

/// One time level: column i holds φ at node i.
using FieldLevel = CMatrix;

/// Uniform lattice on [lower, lower + (N−1)h]^d, times t_m = m·dt for
/// m = 0..steps(). Unused axes have a single node at coordinate 0.
struct WaveGrid {
  int dim = 1;
  double h = 0.01;
  double dt = 0.005;
  std::array<int, 3> extents{1, 1, 1};
  std::array<double, 3> lower{0.0, 0.0, 0.0};
  double t_max = 1.0;

  static constexpr double kMaxCfl = 0.9;

  /// Centred grid of `nodes` per axis on [−half_width, half_width] with
  /// dt = cfl·h/√d.
  static WaveGrid centered(int dim, int nodes, double half_width, double t_max, double cfl = kMaxCfl) {
    if (dim < 1 || dim > 3) throw InvalidGrid("spatial dimension must be 1, 2 or 3");
    if (nodes < 5) throw InvalidGrid("need at least 5 nodes per axis");
    WaveGrid g;
    g.dim = dim;
    g.h = 2.0 * half_width / (nodes - 1);
    g.dt = cfl * g.h / std::sqrt(static_cast<double>(dim));
    g.t_max = t_max;
    for (int a = 0; a < dim; ++a) {
      g.extents[static_cast<std::size_t>(a)] = nodes;
      g.lower[static_cast<std::size_t>(a)] = -half_width;
    }
    g.validate();
    return g;
  }

  void validate() const {
    if (dim < 1 || dim > 3) throw InvalidGrid("spatial dimension must be 1, 2 or 3");
    if (!(h > 0.0) || !(dt > 0.0) || !(t_max > 0.0)) throw InvalidGrid("h, dt and t_max must be positive");
    for (int a = 0; a < 3; ++a) {
      const int e = extents[static_cast<std::size_t>(a)];
      if (a < dim && e < 5) throw InvalidGrid("need at least 5 nodes per used axis");
      if (a >= dim && e != 1) throw InvalidGrid("unused axes must have exactly one node");
    }
    const double limit = kMaxCfl * h / std::sqrt(static_cast<double>(dim));
    if (dt > limit * (1.0 + 1e-12)) {
      throw InvalidGrid("CFL violation: dt = " + format_double(dt) + " exceeds " + format_double(limit));
    }
  }

  [[nodiscard]] Eigen::Index node_count() const {
    return static_cast<Eigen::Index>(extents[0]) * extents[1] * extents[2];
  }
  [[nodiscard]] int steps() const { return static_cast<int>(std::ceil(t_max / dt - 1e-9)); }
  [[nodiscard]] double time(int m) const { return m * dt; }
  [[nodiscard]] Eigen::Index stride(int axis) const {
    return axis == 0 ? 1 : axis == 1 ? extents[0] : static_cast<Eigen::Index>(extents[0]) * extents[1];
  }
  [[nodiscard]] std::array<int, 3> multi_index(Eigen::Index i) const {
    const int nx = extents[0], ny = extents[1];
    return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / (static_cast<Eigen::Index>(nx) * ny))};
  }
  [[nodiscard]] Vec3 position(Eigen::Index i) const {
    const auto m = multi_index(i);
    Vec3 x = Vec3::Zero();
    for (int a = 0; a < dim; ++a) x(a) = lower[static_cast<std::size_t>(a)] + m[static_cast<std::size_t>(a)] * h;
    return x;
  }
  /// Distance in nodes to the nearest edge along any used axis.
  [[nodiscard]] int edge_distance(Eigen::Index i) const {
    const auto m = multi_index(i);
    int d = std::numeric_limits<int>::max();
    for (int a = 0; a < dim; ++a) {
      const int k = m[static_cast<std::size_t>(a)];
      d = std::min({d, k, extents[static_cast<std::size_t>(a)] - 1 - k});
    }
    return d;
  }
  [[nodiscard]] bool interior(Eigen::Index i) const { return edge_distance(i) >= 1; }
  [[nodiscard]] double upper(int axis) const {
    return lower[static_cast<std::size_t>(axis)] + (extents[static_cast<std::size_t>(axis)] - 1) * h;
  }
};

inline double bump_1d(double tau) {
  const double q = 1.0 - tau * tau;
  return q > 0.0 ? std::exp(1.0 - 1.0 / q) : 0.0;
}

/// c · χ_T(t) · χ_R(|x − center|) · Σ_k p_k ρ^{2k}, ρ = |x − center|/R, with
/// χ the C^∞ bump e^{1 − 1/(1 − τ²)} on the temporal window and the ball.
struct SourceSpec {
  Vec3 center = Vec3::Zero();
  double radius = 0.1;
  double t_lo = 0.1;
  double t_hi = 0.3;
  std::vector<double> poly{1.0};
  CVector amplitude = CVector::Ones(1);

  [[nodiscard]] int rank() const { return static_cast<int>(amplitude.size()); }

  void validate() const {
    if (!(radius > 0.0)) throw InvalidArgument("source radius must be positive");
    if (!(t_lo < t_hi) || !(t_lo > 0.0) || !(t_hi < 1.0)) {
      throw InvalidArgument("source temporal window must lie inside (0, 1)");
    }
    if (amplitude.size() < 1) throw InvalidArgument("source amplitude must be nonempty");
    if (poly.empty()) throw InvalidArgument("source polynomial must be nonempty");
  }

  [[nodiscard]] double profile(double t, const Vec3& x) const {
    if (!(t > t_lo && t < t_hi)) return 0.0;
    const double rho2 = (x - center).squaredNorm() / (radius * radius);
    if (rho2 >= 1.0) return 0.0;
    double p = 0.0, r = 1.0;
    for (double c : poly) {
      p += c * r;
      r *= rho2;
    }
    return bump_1d((2.0 * t - t_lo - t_hi) / (t_hi - t_lo)) * std::exp(1.0 - 1.0 / (1.0 - rho2)) * p;
  }

  [[nodiscard]] SourceSpec scaled(double s) const {
    SourceSpec c = *this;
    c.amplitude *= s;
    return c;
  }

  /// supp ⊂ ℧ = (0,1) × B(ε).
  [[nodiscard]] bool inside(const ObservationSet& u) const {
    return t_lo > 0.0 && t_hi < 1.0 && center.norm() + radius < u.epsilon;
  }
};

/// supp(f_a) ∩ 𝒥⁺(supp f_b) = ∅ for the closed cylinders of the two supports.
inline bool causally_disjoint(const SourceSpec& a, const SourceSpec& b) {
  const double gap = std::max(0.0, (a.center - b.center).norm() - a.radius - b.radius);
  return a.t_hi - b.t_lo < gap && b.t_hi - a.t_lo < gap;
}

inline bool pairwise_causally_disjoint(const std::vector<SourceSpec>& specs) {
  for (std::size_t i = 0; i < specs.size(); ++i)
    for (std::size_t j = i + 1; j < specs.size(); ++j)
      if (!causally_disjoint(specs[i], specs[j])) return false;
  return true;
}

/// Source term f: a sum of bump specs, an optional pointwise function and an
/// optional per-level callback (used for interaction sources assembled from
/// discrete fields).
struct Source {
  using PointFn = std::function<void(const SpacetimePoint&, CVector&)>;  // adds into out
  using LevelFn = std::function<void(int m, FieldLevel&)>;                 // adds into out

  std::vector<SourceSpec> specs;
  PointFn point;
  LevelFn level;

  static Source from_specs(std::vector<SourceSpec> s) {
    Source src;
    src.specs = std::move(s);
    return src;
  }

  [[nodiscard]] bool empty() const { return specs.empty() && !point && !level; }

  void accumulate(const WaveGrid& g, int m, FieldLevel& out) const {
    const double t = g.time(m);
    const Eigen::Index n = out.rows();
    for (const auto& s : specs) {
      if (!(t > s.t_lo && t < s.t_hi)) continue;
      for (Eigen::Index i = 0; i < out.cols(); ++i) {
        const double v = s.profile(t, g.position(i));
        if (v != 0.0) out.col(i) += v * s.amplitude;
      }
    }
    if (point) {
      CVector tmp(n);
      for (Eigen::Index i = 0; i < out.cols(); ++i) {
        tmp.setZero();
        point(SpacetimePoint(t, g.position(i)), tmp);
        out.col(i) += tmp;
      }
    }
    if (level) level(m, out);
  }
};

struct SolveOptions {
  bool store_history = true;
  double blowup_threshold = 1e6;
  double boundary_tol = 1e-8;  // relative to the running peak, on the two outermost node layers
  unsigned workers = 1;
  std::function<void(int m, const FieldLevel&)> observer;
};

struct WaveSolution {
  WaveGrid grid;
  int rank = 1;
  std::vector<FieldLevel> levels;  // all levels 0..steps when stored, else the last
  double peak = 0.0;
  double boundary_peak = 0.0;

  [[nodiscard]] const FieldLevel& final_level() const { return levels.back(); }

  /// Σ_k c_k·S_k over solutions with identical grids and storage.
  static WaveSolution combine(const std::vector<std::pair<double, const WaveSolution*>>& terms) {
    if (terms.empty()) throw InvalidArgument("empty combination");
    WaveSolution out = *terms.front().second;
    for (auto& l : out.levels) l *= terms.front().first;
    for (std::size_t k = 1; k < terms.size(); ++k) {
      const auto& s = *terms[k].second;
      if (s.levels.size() != out.levels.size()) throw InvalidArgument("solutions have different storage");
      for (std::size_t m = 0; m < out.levels.size(); ++m) out.levels[m] += terms[k].first * s.levels[m];
    }
    return out;
  }

  /// Space-time ℓ² norm over stored levels.
  [[nodiscard]] double norm() const {
    double s = 0.0;
    for (const auto& l : levels) s += l.squaredNorm();
    return std::sqrt(s);
  }
  [[nodiscard]] double max_abs() const {
    double s = 0.0;
    for (const auto& l : levels) s = std::max(s, l.cwiseAbs().maxCoeff());
    return s;
  }
};

namespace detail {

inline SpacetimePoint node_point(const WaveGrid& g, int m, Eigen::Index i) {
  return SpacetimePoint(g.time(m), g.position(i));
}

/// A_0..A_d at every node of one time level, as n × (n·N) blocks.
struct LevelConnection {
  std::array<CMatrix, 4> comp;

  void evaluate(const ConnectionField& a, const WaveGrid& g, int m) {
    const Eigen::Index n = a.rank(), count = g.node_count();
    for (auto& c : comp) c.resize(n, n * count);
    Components tmp = zero_components(n);
    for (Eigen::Index i = 0; i < count; ++i) {
      a.evaluate(node_point(g, m, i), tmp);
      for (std::size_t mu = 0; mu < 4; ++mu) comp[mu].middleCols(i * n, n) = tmp[mu];
    }
  }
  [[nodiscard]] auto block(std::size_t mu, Eigen::Index i, Eigen::Index n) const {
    return comp[mu].middleCols(i * n, n);
  }
};

/// divA = ∂_t A_0 − Σ_{j≤d} ∂_j A_j from the analytic derivative.
inline CMatrix analytic_div(const ConnectionField& a, const WaveGrid& g, const SpacetimePoint& p,
                            ComponentDerivatives& scratch) {
  a.derivative(p, scratch);
  CMatrix d = scratch[0][0];
  for (int j = 1; j <= g.dim; ++j) d -= scratch[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
  return d;
}

}  // namespace detail

/// Discrete □_Aφ at interior node i of level m from the snapshot triplet
/// (φ^{m−1}, φ^m, φ^{m+1}): second-order centred differences in t and x, and
/// divA from the analytic derivative when present, else centred differences of
/// A with steps dt and h.
inline CVector apply_box_A(const ConnectionField& a, const FieldLevel& prev, const FieldLevel& cur,
                           const FieldLevel& next, const WaveGrid& g, int m, Eigen::Index i) {
  if (i < 0 || i >= g.node_count() || !g.interior(i)) throw StencilError("node is not an interior stencil node");
  const Eigen::Index n = a.rank();
  if (cur.rows() != n || cur.cols() != g.node_count() || prev.cols() != cur.cols() || next.cols() != cur.cols()) {
    throw InvalidArgument("field snapshots do not match the grid and rank");
  }
  const SpacetimePoint p = detail::node_point(g, m, i);
  const Components c = a(p);
  CMatrix div;
  if (a.has_derivative()) {
    ComponentDerivatives scratch = zero_derivatives(n);
    div = detail::analytic_div(a, g, p, scratch);
  } else {
    div = (a(p.shifted(Vec4(g.dt, 0, 0, 0)))[0] - a(p.shifted(Vec4(-g.dt, 0, 0, 0)))[0]) / (2.0 * g.dt);
    for (int j = 1; j <= g.dim; ++j) {
      Vec4 e = Vec4::Zero();
      e(j) = g.h;
      const auto jj = static_cast<std::size_t>(j);
      div -= (a(p.shifted(e))[jj] - a(p.shifted(-e))[jj]) / (2.0 * g.h);
    }
  }
  const double dt2 = g.dt * g.dt, h2 = g.h * g.h;
  CVector out = (next.col(i) - 2.0 * cur.col(i) + prev.col(i)) / dt2;
  out += c[0] * (next.col(i) - prev.col(i)) / g.dt;
  CMatrix pot = div + c[0] * c[0];
  for (int j = 1; j <= g.dim; ++j) {
    const Eigen::Index s = g.stride(j - 1);
    const auto jj = static_cast<std::size_t>(j);
    out -= (cur.col(i + s) - 2.0 * cur.col(i) + cur.col(i - s)) / h2;
    out -= c[jj] * (cur.col(i + s) - cur.col(i - s)) / g.h;
    pot -= c[jj] * c[jj];
  }
  out += pot * cur.col(i);
  return out;
}

/// Leapfrog solve of □_Aφ + κ|φ|²φ = f with φ = 0 for t ≤ 0. The centred
/// A₀∂_t term gives the per-node solve (I/dt² + A₀/dt)φ^{m+1} = rhs; the cubic
/// term is evaluated at level m. Boundary nodes stay at zero and are
/// monitored.
inline WaveSolution solve_forward(const ConnectionField& a, double kappa, const Source& f, const WaveGrid& g,
                                  const SolveOptions& opt = {}) {
  g.validate();
  const Eigen::Index n = a.rank();
  const Eigen::Index count = g.node_count();
  const int steps = g.steps();
  for (const auto& s : f.specs) {
    s.validate();
    if (s.rank() != n) throw InvalidArgument("source amplitude rank differs from the connection rank");
    const double reach = s.radius + g.t_max + 2.0 * g.h;
    for (int ax = 0; ax < g.dim; ++ax) {
      if (s.center(ax) - reach < g.lower[static_cast<std::size_t>(ax)] || s.center(ax) + reach > g.upper(ax)) {
        throw InvalidGrid("spatial extent is smaller than source radius + t_max + 2h");
      }
    }
  }

  const double dt = g.dt, dt2 = dt * dt, h = g.h, h2 = h * h;
  const bool stat = a.is_static();
  const bool analytic = a.has_derivative();

  detail::LevelConnection a_prev, a_cur, a_next;
  a_cur.evaluate(a, g, 0);
  if (!stat && !analytic) {
    a_prev.evaluate(a, g, -1);
    a_next.evaluate(a, g, 1);
  }

  // Per-node coefficients at the current level: inverse of (I/dt² + A₀/dt) and C.
  CMatrix minv(n, n * count), pot(n, n * count);
  const CMatrix ident = CMatrix::Identity(n, n);
  auto build_coefficients = [&](int m) {
    parallel_for(static_cast<std::size_t>(count), opt.workers, [&](std::size_t ii) {
      const auto i = static_cast<Eigen::Index>(ii);
      if (!g.interior(i)) return;
      const CMatrix a0 = a_cur.block(0, i, n);
      CMatrix div;
      if (analytic) {
        ComponentDerivatives scratch = zero_derivatives(n);
        div = detail::analytic_div(a, g, detail::node_point(g, m, i), scratch);
      } else if (stat) {
        div = CMatrix::Zero(n, n);
        for (int j = 1; j <= g.dim; ++j) {
          const Eigen::Index s = g.stride(j - 1);
          const auto jj = static_cast<std::size_t>(j);
          div -= (a_cur.block(jj, i + s, n) - a_cur.block(jj, i - s, n)) / (2.0 * h);
        }
      } else {
        div = (a_next.block(0, i, n) - a_prev.block(0, i, n)) / (2.0 * dt);
        for (int j = 1; j <= g.dim; ++j) {
          const Eigen::Index s = g.stride(j - 1);
          const auto jj = static_cast<std::size_t>(j);
          div -= (a_cur.block(jj, i + s, n) - a_cur.block(jj, i - s, n)) / (2.0 * h);
        }
      }
      CMatrix c = div + a0 * a0;
      for (int j = 1; j <= g.dim; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        c -= a_cur.block(jj, i, n) * a_cur.block(jj, i, n);
      }
      pot.middleCols(i * n, n) = c;
      const CMatrix lhs = ident / dt2 + a0 / dt;
      minv.middleCols(i * n, n) = lhs.partialPivLu().inverse();
    });
  };
  build_coefficients(0);

  WaveSolution sol;
  sol.grid = g;
  sol.rank = static_cast<int>(n);
  FieldLevel prev = FieldLevel::Zero(n, count), cur = FieldLevel::Zero(n, count), next(n, count);
  FieldLevel src(n, count);
  if (opt.store_history) sol.levels.reserve(static_cast<std::size_t>(steps) + 1);
  if (opt.store_history) sol.levels.push_back(cur);
  if (opt.observer) opt.observer(0, cur);

  for (int m = 0; m < steps; ++m) {
    if (m > 0 && !stat) {
      if (analytic) {
        a_cur.evaluate(a, g, m);
      } else {
        std::swap(a_prev, a_cur);
        std::swap(a_cur, a_next);
        a_next.evaluate(a, g, m + 1);
      }
      build_coefficients(m);
    }
    src.setZero();
    f.accumulate(g, m, src);

    next.setZero();
    parallel_for(static_cast<std::size_t>(count), opt.workers, [&](std::size_t ii) {
      const auto i = static_cast<Eigen::Index>(ii);
      if (!g.interior(i)) return;
      CVector rhs = src.col(i) + (2.0 * cur.col(i) - prev.col(i)) / dt2 + a_cur.block(0, i, n) * prev.col(i) / dt;
      for (int j = 1; j <= g.dim; ++j) {
        const Eigen::Index s = g.stride(j - 1);
        rhs += (cur.col(i + s) - 2.0 * cur.col(i) + cur.col(i - s)) / h2;
        rhs += a_cur.block(static_cast<std::size_t>(j), i, n) * (cur.col(i + s) - cur.col(i - s)) / h;
      }
      rhs -= pot.middleCols(i * n, n) * cur.col(i);
      if (kappa != 0.0) rhs -= kappa * cur.col(i).squaredNorm() * cur.col(i);
      next.col(i) = minv.middleCols(i * n, n) * rhs;
    });

    double level_max = 0.0, edge_max = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) {
      const double v = next.col(i).norm();
      if (!std::isfinite(v)) throw Divergence("non-finite field value at step " + std::to_string(m + 1));
      level_max = std::max(level_max, v);
      if (g.edge_distance(i) <= 1) edge_max = std::max(edge_max, v);
    }
    if (level_max > opt.blowup_threshold) {
      throw Divergence("field norm " + format_double(level_max) + " exceeds the blow-up threshold at step " +
                       std::to_string(m + 1));
    }
    sol.peak = std::max(sol.peak, level_max);
    sol.boundary_peak = std::max(sol.boundary_peak, edge_max);
    if (edge_max > opt.boundary_tol * sol.peak && edge_max > 1e-300) {
      throw InvalidGrid("signal reached the grid boundary at step " + std::to_string(m + 1));
    }

    std::swap(prev, cur);
    std::swap(cur, next);
    if (opt.store_history) sol.levels.push_back(cur);
    if (opt.observer) opt.observer(m + 1, cur);
  }
  if (!opt.store_history) sol.levels.push_back(cur);
  return sol;
}

/// Same scheme with the cubic term disabled.
inline WaveSolution linearized_solve(const ConnectionField& a, const Source& f, const WaveGrid& g,
                                     const SolveOptions& opt = {}) {
  return solve_forward(a, 0.0, f, g, opt);
}

/// φ at the grid nodes inside ℧ = (0,1) × B(ε).
struct RestrictedField {
  std::vector<std::pair<int, Eigen::Index>> nodes;  // (level, node)
  CMatrix values;                                   // n × nodes.size()
};

inline RestrictedField restrict_to_observation(const WaveSolution& s, const ObservationSet& u) {
  const auto& g = s.grid;
  if (s.levels.size() != static_cast<std::size_t>(g.steps()) + 1) {
    throw InvalidArgument("restriction needs the full stored history");
  }
  RestrictedField r;
  for (int m = 0; m <= g.steps(); ++m)
    for (Eigen::Index i = 0; i < g.node_count(); ++i)
      if (in_observation_set(detail::node_point(g, m, i), u)) r.nodes.emplace_back(m, i);
  r.values.resize(s.rank, static_cast<Eigen::Index>(r.nodes.size()));
  for (std::size_t k = 0; k < r.nodes.size(); ++k)
    r.values.col(static_cast<Eigen::Index>(k)) = s.levels[static_cast<std::size_t>(r.nodes[k].first)].col(r.nodes[k].second);
  return r;
}

/// One field level as a table: node, x1..x_d, then re_k, im_k per component.
inline CsvTable snapshot_table(const FieldLevel& level, const WaveGrid& g) {
  CsvTable t;
  t.header = {"node"};
  for (int a = 0; a < g.dim; ++a) t.header.push_back("x" + std::to_string(a + 1));
  for (Eigen::Index k = 0; k < level.rows(); ++k) {
    t.header.push_back("re_" + std::to_string(k));
    t.header.push_back("im_" + std::to_string(k));
  }
  for (Eigen::Index i = 0; i < level.cols(); ++i) {
    std::vector<double> row{static_cast<double>(i)};
    const Vec3 x = g.position(i);
    for (int a = 0; a < g.dim; ++a) row.push_back(x(a));
    for (Eigen::Index k = 0; k < level.rows(); ++k) {
      row.push_back(level(k, i).real());
      row.push_back(level(k, i).imag());
    }
    t.add_row(std::move(row));
  }
  return t;
}

/// L_A f = φ|_℧ for sources supported in ℧.
inline RestrictedField source_to_solution(const ConnectionField& a, double kappa, const Source& f, const WaveGrid& g,
                                          const ObservationSet& u, SolveOptions opt = {}) {
  for (const auto& s : f.specs)
    if (!s.inside(u)) throw InvalidArgument("source support is not contained in the observation set");
  opt.store_history = true;
  return restrict_to_observation(solve_forward(a, kappa, f, g, opt), u);
}

/// max |φ| at nodes farther than `slack` outside ∪_k {|x − c_k| ≤ R_k + (t − t_lo,k)⁺},
/// relative to max |φ| on the level.
inline double propagation_violation(const FieldLevel& level, const WaveGrid& g, int m,
                                    const std::vector<SourceSpec>& specs, double slack) {
  const double t = g.time(m);
  double outside = 0.0, peak = 0.0;
  for (Eigen::Index i = 0; i < level.cols(); ++i) {
    const double v = level.col(i).norm();
    peak = std::max(peak, v);
    const Vec3 x = g.position(i);
    bool covered = false;
    for (const auto& s : specs)
      covered = covered || (x - s.center).norm() <= s.radius + std::max(0.0, t - s.t_lo) + slack;
    if (!covered) outside = std::max(outside, v);
  }
  return peak > 0.0 ? outside / peak : 0.0;
}

// Multi-fold linearization -------------------------------------------------

enum class CrossStencil { Central, Forward };

namespace detail {

inline Source combined_source(const std::array<SourceSpec, 3>& f, const std::array<double, 3>& eps) {
  Source s;
  for (std::size_t j = 0; j < 3; ++j)
    if (eps[j] != 0.0) s.specs.push_back(f[j].scaled(eps[j]));
  return s;
}

inline WaveSolution store_corners(const ConnectionField& a, double kappa, const std::array<SourceSpec, 3>& f,
                                  const WaveGrid& g, const std::vector<std::array<double, 3>>& corners,
                                  const std::vector<double>& weights, unsigned workers) {
  std::vector<std::optional<WaveSolution>> sols(corners.size());
  SolveOptions opt;
  parallel_for(corners.size(), workers, [&](std::size_t k) {
    Source src = combined_source(f, corners[k]);
    if (src.empty()) {
      WaveSolution z;
      z.grid = g;
      z.rank = a.rank();
      z.levels.assign(static_cast<std::size_t>(g.steps()) + 1, FieldLevel::Zero(a.rank(), g.node_count()));
      sols[k] = std::move(z);
    } else {
      sols[k] = solve_forward(a, kappa, src, g, opt);
    }
  });
  std::vector<std::pair<double, const WaveSolution*>> terms;
  for (std::size_t k = 0; k < corners.size(); ++k) terms.emplace_back(weights[k], &*sols[k]);
  return WaveSolution::combine(terms);
}

}  // namespace detail

/// Finite-difference cross derivative of φ(ε) with f(ε) = Σ ε_j f_j.
/// Order 3, central: Σ sign·φ(±ε₁, ±ε₂, ±ε₃)/(8ε₁ε₂ε₃).
/// Order 2 over the pair (p, q), central: Σ sign·φ(±ε_p, ±ε_q)/(4ε_pε_q);
/// forward: [φ(ε_p, ε_q) − φ(ε_p, 0) − φ(0, ε_q)]/(ε_pε_q), using φ(0) = 0.
inline WaveSolution cross_derivative_probe(const ConnectionField& a, double kappa, const std::array<SourceSpec, 3>& f,
                                           const std::array<double, 3>& eps, int order, const WaveGrid& g,
                                           CrossStencil stencil = CrossStencil::Central,
                                           std::array<int, 2> pair = {0, 1}, unsigned workers = 1) {
  for (double e : eps)
    if (!(e > 0.0)) throw InvalidArgument("finite-difference amplitudes must be positive");
  std::vector<std::array<double, 3>> corners;
  std::vector<double> weights;
  if (order == 3) {
    if (stencil != CrossStencil::Central) throw InvalidArgument("third-order probe uses the central stencil");
    const double denom = 8.0 * eps[0] * eps[1] * eps[2];
    for (int mask = 0; mask < 8; ++mask) {
      std::array<double, 3> c{};
      double sgn = 1.0;
      for (int j = 0; j < 3; ++j) {
        const bool neg = (mask >> j) & 1;
        c[static_cast<std::size_t>(j)] = neg ? -eps[static_cast<std::size_t>(j)] : eps[static_cast<std::size_t>(j)];
        if (neg) sgn = -sgn;
      }
      corners.push_back(c);
      weights.push_back(sgn / denom);
    }
  } else if (order == 2) {
    const auto p = static_cast<std::size_t>(pair[0]), q = static_cast<std::size_t>(pair[1]);
    if (p > 2 || q > 2 || p == q) throw InvalidArgument("order-2 probe needs two distinct source indices");
    const double ep = eps[p], eq = eps[q];
    auto corner = [&](double sp, double sq) {
      std::array<double, 3> c{};
      c[p] = sp;
      c[q] = sq;
      return c;
    };
    if (stencil == CrossStencil::Central) {
      const double denom = 4.0 * ep * eq;
      for (int sp : {1, -1})
        for (int sq : {1, -1}) {
          corners.push_back(corner(sp * ep, sq * eq));
          weights.push_back(sp * sq / denom);
        }
    } else {
      const double denom = ep * eq;
      corners = {corner(ep, eq), corner(ep, 0.0), corner(0.0, eq)};
      weights = {1.0 / denom, -1.0 / denom, -1.0 / denom};
    }
  } else {
    throw InvalidArgument("cross-derivative order must be 2 or 3");
  }
  return detail::store_corners(a, kappa, f, g, corners, weights, workers);
}

/// −2κ(Re⟨v₁,v₂⟩v₃ + Re⟨v₁,v₃⟩v₂ + Re⟨v₂,v₃⟩v₁) at every node of level m.
inline void add_threefold_source(double kappa, const FieldLevel& v1, const FieldLevel& v2, const FieldLevel& v3,
                                 FieldLevel& out) {
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    const double p12 = v1.col(i).dot(v2.col(i)).real();
    const double p13 = v1.col(i).dot(v3.col(i)).real();
    const double p23 = v2.col(i).dot(v3.col(i)).real();
    out.col(i) += -2.0 * kappa * (p12 * v3.col(i) + p13 * v2.col(i) + p23 * v1.col(i));
  }
}

/// v₁₂₃ from □_A v₁₂₃ = −2κ(...) with v_j = linearized_solve(f_j), using the
/// discrete v_j at each level.
inline WaveSolution threefold_interaction_solve(const ConnectionField& a, double kappa,
                                                const std::array<SourceSpec, 3>& f, const WaveGrid& g,
                                                unsigned workers = 1) {
  std::vector<std::optional<WaveSolution>> v(3);
  parallel_for(3, workers, [&](std::size_t j) { v[j] = linearized_solve(a, Source::from_specs({f[j]}), g); });
  Source src;
  src.level = [&](int m, FieldLevel& out) {
    const auto k = static_cast<std::size_t>(m);
    add_threefold_source(kappa, v[0]->levels[k], v[1]->levels[k], v[2]->levels[k], out);
  };
  return linearized_solve(a, src, g);
}

struct LinearizationReport {
  std::vector<double> eps;
  std::vector<double> rel_err;            // ‖probe₃ − v₁₂₃‖/‖v₁₂₃‖
  std::vector<double> second_central;     // ‖probe₂ central‖/‖v₁‖
  std::vector<double> second_forward;     // ‖probe₂ forward‖/‖v₁‖
  double fitted_order = std::numeric_limits<double>::quiet_NaN();
  double second_forward_order = std::numeric_limits<double>::quiet_NaN();
  double v123_norm = 0.0;
  double kappa_linearity = std::numeric_limits<double>::quiet_NaN();  // ‖v₁₂₃(2κ) − 2v₁₂₃(κ)‖/‖2v₁₂₃(κ)‖

  [[nodiscard]] Json to_json() const {
    Json j{{"eps", eps},
           {"rel_err", rel_err},
           {"fitted_order", fitted_order},
           {"second_central", second_central},
           {"second_forward", second_forward},
           {"second_forward_order", second_forward_order},
           {"v123_norm", v123_norm},
           {"kappa_linearity", kappa_linearity}};
    return j;
  }

  [[nodiscard]] CsvTable table() const {
    CsvTable t;
    t.header = {"eps", "rel_err", "second_central", "second_forward"};
    for (std::size_t k = 0; k < eps.size(); ++k) t.add_row({eps[k], rel_err[k], second_central[k], second_forward[k]});
    return t;
  }
};

/// Third cross-derivative versus the direct interaction solve over an ε sweep
/// (ε₁ = ε₂ = ε₃ = ε), the order-2 probe of the pair (1, 2), and κ-linearity.
inline LinearizationReport verify_threefold(const ConnectionField& a, double kappa, const std::array<SourceSpec, 3>& f,
                                            const std::vector<double>& eps_sweep, const WaveGrid& g,
                                            unsigned workers = 1) {
  if (!pairwise_causally_disjoint({f[0], f[1], f[2]})) {
    throw InvalidArgument("sources must have pairwise causally disjoint supports");
  }
  LinearizationReport r;
  const WaveSolution v123 = threefold_interaction_solve(a, kappa, f, g, workers);
  r.v123_norm = v123.norm();
  const double v1_norm = linearized_solve(a, Source::from_specs({f[0]}), g).norm();
  for (double e : eps_sweep) {
    const std::array<double, 3> eps{e, e, e};
    const WaveSolution p3 = cross_derivative_probe(a, kappa, f, eps, 3, g, CrossStencil::Central, {0, 1}, workers);
    const WaveSolution diff = WaveSolution::combine({{1.0, &p3}, {-1.0, &v123}});
    const WaveSolution p2c = cross_derivative_probe(a, kappa, f, eps, 2, g, CrossStencil::Central, {0, 1}, workers);
    const WaveSolution p2f = cross_derivative_probe(a, kappa, f, eps, 2, g, CrossStencil::Forward, {0, 1}, workers);
    r.eps.push_back(e);
    r.rel_err.push_back(r.v123_norm > 0.0 ? diff.norm() / r.v123_norm : diff.norm());
    r.second_central.push_back(v1_norm > 0.0 ? p2c.norm() / v1_norm : p2c.norm());
    r.second_forward.push_back(v1_norm > 0.0 ? p2f.norm() / v1_norm : p2f.norm());
  }
  auto positive = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
  };
  if (r.eps.size() >= 2 && positive(r.rel_err)) r.fitted_order = loglog_slope(r.eps, r.rel_err);
  if (r.eps.size() >= 2 && positive(r.second_forward)) r.second_forward_order = loglog_slope(r.eps, r.second_forward);

  const WaveSolution v123_2k = threefold_interaction_solve(a, 2.0 * kappa, f, g, workers);
  const WaveSolution lin = WaveSolution::combine({{1.0, &v123_2k}, {-2.0, &v123}});
  r.kappa_linearity = r.v123_norm > 0.0 ? lin.norm() / (2.0 * r.v123_norm) : lin.norm();
  return r;
}

// Manufactured solution ----------------------------------------------------

/// φ*(t, x) = c·β((2t − t_a − t_b)/(t_b − t_a))·Π_{j≤d} β(x_j/w) with β the 1-D
/// bump, and its source f = □_Aφ* + κ|φ*|²φ* for a connection with analytic
/// derivative.
struct ManufacturedSolution {
  double t_a = 0.1;
  double t_b = 0.9;
  double width = 0.5;
  CVector amplitude = CVector::Ones(1);

  struct Jet {
    double v = 0.0, d1 = 0.0, d2 = 0.0;
  };

  static Jet bump_jet(double tau, double scale) {
    const double q = 1.0 - tau * tau;
    if (!(q > 0.0)) return {};
    const double b = std::exp(1.0 - 1.0 / q);
    const double w = -2.0 * tau / (q * q);
    const double dw = -2.0 / (q * q) - 8.0 * tau * tau / (q * q * q);
    return {b, b * w * scale, b * (w * w + dw) * scale * scale};
  }

  /// value, ∂_t, ∂_t², ∂_j, ∂_j² of the scalar profile.
  struct Derivatives {
    double v = 0.0, t = 0.0, tt = 0.0;
    std::array<double, 3> x{0.0, 0.0, 0.0}, xx{0.0, 0.0, 0.0};
  };

  [[nodiscard]] Derivatives scalar(const SpacetimePoint& p, int dim) const {
    const double ts = 2.0 / (t_b - t_a);
    const Jet jt = bump_jet((2.0 * p.t - t_a - t_b) / (t_b - t_a), ts);
    std::array<Jet, 3> jx{Jet{1.0, 0.0, 0.0}, Jet{1.0, 0.0, 0.0}, Jet{1.0, 0.0, 0.0}};
    for (int j = 0; j < dim; ++j) jx[static_cast<std::size_t>(j)] = bump_jet(p.x(j) / width, 1.0 / width);
    const double sx = jx[0].v * jx[1].v * jx[2].v;
    Derivatives d;
    d.v = jt.v * sx;
    d.t = jt.d1 * sx;
    d.tt = jt.d2 * sx;
    for (std::size_t j = 0; j < 3; ++j) {
      double others = jt.v;
      for (std::size_t k = 0; k < 3; ++k)
        if (k != j) others *= jx[k].v;
      d.x[j] = others * jx[j].d1;
      d.xx[j] = others * jx[j].d2;
    }
    return d;
  }

  [[nodiscard]] CVector value(const SpacetimePoint& p, int dim) const { return scalar(p, dim).v * amplitude; }

  [[nodiscard]] Source source(const ConnectionField& a, double kappa, int dim) const {
    if (!a.has_derivative()) throw InvalidArgument("manufactured source needs an analytic connection derivative");
    if (amplitude.size() != a.rank()) throw InvalidArgument("amplitude rank differs from the connection rank");
    Source s;
    const ManufacturedSolution self = *this;
    s.point = [self, a, kappa, dim](const SpacetimePoint& p, CVector& out) {
      const Derivatives d = self.scalar(p, dim);
      if (d.v == 0.0 && d.t == 0.0 && d.tt == 0.0) return;
      const Components c = a(p);
      const ComponentDerivatives dc = a.derivative(p);
      CMatrix div = dc[0][0];
      CMatrix pot = c[0] * c[0];
      double lap = 0.0;
      CVector drift = CVector::Zero(self.amplitude.size());
      for (int j = 1; j <= dim; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        div -= dc[jj][jj];
        pot -= c[jj] * c[jj];
        lap += d.xx[jj - 1];
        drift += d.x[jj - 1] * (c[jj] * self.amplitude);
      }
      const CVector phi = d.v * self.amplitude;
      out += (d.tt - lap) * self.amplitude + 2.0 * d.t * (c[0] * self.amplitude) - 2.0 * drift +
             (div + pot) * phi + kappa * phi.squaredNorm() * phi;
    };
    return s;
  }

  /// max over stored levels and nodes of |φ − φ*|.
  [[nodiscard]] double max_error(const WaveSolution& s) const {
    const auto& g = s.grid;
    double e = 0.0;
    for (std::size_t m = 0; m < s.levels.size(); ++m)
      for (Eigen::Index i = 0; i < g.node_count(); ++i)
        e = std::max(e, (s.levels[m].col(i) - value(detail::node_point(g, static_cast<int>(m), i), g.dim)).norm());
    return e;
  }
};

}  // namespace lightray
