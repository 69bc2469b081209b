#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lightray/broken_ray.hpp"
#include "lightray/connection.hpp"
#include "lightray/errors.hpp"
#include "lightray/gauge.hpp"
#include "lightray/interaction_geometry.hpp"
#include "lightray/io.hpp"
#include "lightray/minkowski.hpp"
#include "lightray/parallel.hpp"
#include "lightray/transport.hpp"
#include "lightray/wave_lab.hpp"

#ifndef LIGHTRAY_VERSION
#define LIGHTRAY_VERSION "0.1.0"
#endif

namespace lightray {

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"transport",     "broken-ray", "reconstruct",   "span-lemma",
                                              "cone-geometry", "symplectic", "wave-converge", "threefold"};
  return kinds;
}

inline std::string joined_kinds() {
  std::string s;
  for (const auto& k : experiment_kinds()) s += (s.empty() ? "" : ", ") + k;
  return s;
}

/// Typed access to one config object. Type and range problems are collected
/// as diagnostics naming the dotted key path; keys never read are reported as
/// unknown by finish().
class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string path, std::vector<std::string>& diags)
      : j_(j), path_(std::move(path)), diags_(&diags) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  void allow(const std::string& key) { used_.insert(key); }

  [[nodiscard]] std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void fail(const std::string& key, const std::string& msg) const {
    diags_->push_back((key.empty() ? (path_.empty() ? std::string("config") : path_) : name(key)) + ": " + msg);
  }

  double number(const std::string& key, double def) {
    used_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number()) {
      fail(key, "must be a number");
      return def;
    }
    return v.get<double>();
  }

  double positive(const std::string& key, double def) {
    const double v = number(key, def);
    if (!(v > 0.0)) fail(key, "must be positive");
    return v;
  }

  int integer(const std::string& key, int def, int min_value = std::numeric_limits<int>::min()) {
    used_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) {
      fail(key, "must be an integer");
      return def;
    }
    const auto x = v.get<std::int64_t>();
    if (x < min_value || x > std::numeric_limits<int>::max()) {
      fail(key, "must be an integer ≥ " + std::to_string(min_value));
      return def;
    }
    return static_cast<int>(x);
  }

  bool boolean(const std::string& key, bool def) {
    used_.insert(key);
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) {
      fail(key, "must be a boolean");
      return def;
    }
    return j_.at(key).get<bool>();
  }

  std::string string(const std::string& key, const std::string& def, const std::vector<std::string>& allowed = {}) {
    used_.insert(key);
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) {
      fail(key, "must be a string");
      return def;
    }
    auto s = j_.at(key).get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "unknown value '" + s + "' (allowed: " + list + ")");
      return def;
    }
    return s;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def, std::size_t min_size = 0) {
    used_.insert(key);
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    std::vector<double> out;
    if (!v.is_array()) {
      fail(key, "must be an array of numbers");
      return def;
    }
    for (const auto& e : v) {
      if (!e.is_number()) {
        fail(key, "must be an array of numbers");
        return def;
      }
      out.push_back(e.get<double>());
    }
    if (out.size() < min_size) fail(key, "needs at least " + std::to_string(min_size) + " entries");
    return out;
  }

  std::optional<Vec4> vec4(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    const auto v = numbers(key, {});
    if (v.size() != 4) {
      fail(key, "must have 4 entries");
      return std::nullopt;
    }
    return Vec4(v[0], v[1], v[2], v[3]);
  }

  /// Raw sub-document, marked as used.
  const Json* raw(const std::string& key) {
    used_.insert(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  ConfigReader child(const std::string& key) {
    used_.insert(key);
    static const Json empty = Json::object();
    return ConfigReader(has(key) ? j_.at(key) : empty, name(key), *diags_);
  }

  void finish() const {
    if (!j_.is_object()) return;
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) fail(item.key(), "unknown key");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string>* diags_;
  std::set<std::string> used_;
};

struct Check {
  std::string name;
  double value = 0.0;
  std::string relation;
  double threshold = 0.0;
  bool pass = false;
};

struct ExperimentResult {
  std::string kind;
  CsvTable table;
  Json summary = Json::object();
  std::vector<Check> checks;
  std::vector<std::pair<std::string, CsvTable>> extra_tables;  // written as <kind>_<hash>_<name>.csv

  void check(const std::string& name, double value, const std::string& rel, double thr) {
    bool ok = false;
    if (rel == "<") ok = value < thr;
    else if (rel == "<=") ok = value <= thr;
    else if (rel == ">") ok = value > thr;
    else if (rel == ">=") ok = value >= thr;
    else if (rel == "==") ok = value == thr;
    checks.push_back({name, value, rel, thr, ok && std::isfinite(value)});
  }

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }

  [[nodiscard]] Json checks_json() const {
    Json a = Json::array();
    for (const auto& c : checks)
      a.push_back({{"name", c.name}, {"value", c.value}, {"relation", c.relation}, {"threshold", c.threshold},
                   {"pass", c.pass}});
    return a;
  }
};

struct RunContext {
  std::uint64_t seed = 1;
  unsigned workers = 1;
  bool check_invariants = true;
};

namespace detail {

inline std::optional<ConnectionField> read_connection(ConfigReader& r, std::uint64_t seed, bool required,
                                                      int default_rank = 1) {
  const Json* conn = r.raw("connection");
  const bool has_random = r.has("random_connection");
  if (conn && has_random) {
    r.fail("connection", "give either connection or random_connection, not both");
    return std::nullopt;
  }
  if (conn) {
    try {
      return ConnectionField::from_json(*conn);
    } catch (const std::exception& e) {
      std::string msg = e.what();
      r.fail("connection", msg.rfind("connection", 0) == 0 ? msg.substr(msg.find(':') + 2) : msg);
      return std::nullopt;
    }
  }
  if (has_random) {
    auto rc = r.child("random_connection");
    const int n = rc.integer("n", 2, 1);
    const double bound = rc.positive("bound", 1.0);
    rc.finish();
    std::mt19937_64 rng(seed);
    return random_connection(n, rng, bound);
  }
  r.allow("random_connection");
  if (required) {
    r.fail("connection", "connection or random_connection is required");
    return std::nullopt;
  }
  return ConnectionField::zero(default_rank);
}

inline std::optional<GaugeMap> read_gauge(ConfigReader& r, int n, const ObservationSet& u, std::uint64_t seed,
                                          bool required, SpacetimePoint& center, double& radius) {
  const Json* gj = r.raw("gauge");
  const bool has_random = r.has("random_gauge");
  if (gj && has_random) {
    r.fail("gauge", "give either gauge or random_gauge, not both");
    return std::nullopt;
  }
  try {
    if (gj) {
      auto g = gauge_from_json(*gj, u);
      if (g.rank() != n) {
        r.fail("gauge", "rank differs from the connection rank");
        return std::nullopt;
      }
      const auto& terms = gj->at("terms");
      if (!terms.empty()) {
        center = SpacetimePoint::from_vec4(vec4_from_json(terms[0].at("params").at("center")));
        radius = terms[0].at("params").at("radius").get<double>();
      }
      return g;
    }
    if (has_random) {
      auto rg = r.child("random_gauge");
      const auto c = rg.vec4("center").value_or(Vec4(0.5, 0.42, 0.0, 0.0));
      radius = rg.positive("radius", 0.25);
      const double norm = rg.positive("generator_norm", 1.0);
      rg.finish();
      center = SpacetimePoint::from_vec4(c);
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
      const CMatrix x = random_skew_hermitian(n, rng, norm);
      if (distance_to_observation_closure(c, u) < radius) {
        r.fail("random_gauge", "bump support overlaps the closure of the observation set");
        return std::nullopt;
      }
      return make_bump_gauge(n, x, center, radius, u);
    }
  } catch (const std::exception& e) {
    r.fail("gauge", e.what());
    return std::nullopt;
  }
  r.allow("random_gauge");
  if (required) r.fail("gauge", "gauge or random_gauge is required");
  return std::nullopt;
}

inline double read_epsilon(ConfigReader& r) {
  const double eps = r.number("epsilon", 0.15);
  if (!(eps > 0.0)) r.fail("epsilon", "must be positive");
  return eps > 0.0 ? eps : 0.15;
}

struct Tolerances {
  ConfigReader reader;
  double get(const std::string& key, double def) { return reader.number(key, def); }
};

inline std::optional<WaveGrid> read_grid(ConfigReader& r, bool check_invariants, int default_dim, int default_nodes,
                                         double default_half_width, double default_t_max, double default_cfl) {
  auto g = r.child("grid");
  const int dim = g.integer("dim", default_dim, 1);
  const int nodes = g.integer("nodes", default_nodes, 5);
  const double hw = g.positive("half_width", default_half_width);
  const double t_max = g.positive("t_max", default_t_max);
  const double cfl = g.positive("cfl", default_cfl);
  const bool has_dt = g.has("dt");
  const double dt = g.number("dt", 0.0);
  g.finish();
  if (dim > 3) {
    g.fail("dim", "must be 1, 2 or 3");
    return std::nullopt;
  }
  WaveGrid out;
  out.dim = dim;
  out.h = 2.0 * hw / (nodes - 1);
  out.dt = has_dt ? dt : cfl * out.h / std::sqrt(static_cast<double>(dim));
  out.t_max = t_max;
  for (int a = 0; a < dim; ++a) {
    out.extents[static_cast<std::size_t>(a)] = nodes;
    out.lower[static_cast<std::size_t>(a)] = -hw;
  }
  if (has_dt && !(dt > 0.0)) g.fail("dt", "must be positive");
  if (check_invariants) {
    try {
      out.validate();
    } catch (const InvalidGrid& e) {
      g.fail(has_dt ? "dt" : "cfl", e.what());
    }
  }
  return out;
}

inline std::optional<SourceSpec> read_source(const Json& j, const std::string& path, int n,
                                             std::vector<std::string>& diags) {
  ConfigReader r(j, path, diags);
  SourceSpec s;
  const auto c = r.numbers("center", {0.0, 0.0, 0.0}, 1);
  for (std::size_t k = 0; k < std::min<std::size_t>(3, c.size()); ++k) s.center(static_cast<Eigen::Index>(k)) = c[k];
  if (c.size() > 3) r.fail("center", "has at most 3 entries");
  s.radius = r.positive("radius", 0.05);
  const auto window = r.numbers("window", {0.05, 0.15}, 2);
  if (window.size() == 2) {
    s.t_lo = window[0];
    s.t_hi = window[1];
  } else {
    r.fail("window", "must have 2 entries");
  }
  s.poly = r.numbers("poly", {1.0}, 1);
  const auto amp = r.numbers("amplitude", {}, 0);
  if (amp.empty()) {
    s.amplitude = CVector::Ones(n);
  } else if (amp.size() == static_cast<std::size_t>(n)) {
    s.amplitude = CVector(n);
    for (int k = 0; k < n; ++k) s.amplitude(k) = amp[static_cast<std::size_t>(k)];
  } else if (amp.size() == static_cast<std::size_t>(2 * n)) {
    s.amplitude = CVector(n);
    for (int k = 0; k < n; ++k)
      s.amplitude(k) = Complex(amp[static_cast<std::size_t>(2 * k)], amp[static_cast<std::size_t>(2 * k + 1)]);
  } else {
    r.fail("amplitude", "needs n real entries or 2n entries (re, im pairs)");
  }
  s.amplitude *= r.number("scale", 1.0);
  r.finish();
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    r.fail("", e.what());
    return std::nullopt;
  }
  return s;
}

}  // namespace detail

// Experiments ----------------------------------------------------------------

/// Unitarity over random segments. Constant connections are also checked
/// against exp(−⟨A, γ̇⟩ s_len), with the observed RK4 order measured on
/// full-length segments.
inline std::optional<ExperimentResult> experiment_transport(ConfigReader& r, const RunContext& ctx, bool execute) {
  std::optional<ConnectionField> fixed;
  int rand_n = 2;
  double rand_bound = 1.0;
  bool rand_constant = false;
  if (r.has("connection") || !r.has("random_connection")) {
    fixed = detail::read_connection(r, ctx.seed, true);
  } else {
    r.allow("connection");
    auto rc = r.child("random_connection");
    rand_n = rc.integer("n", 2, 1);
    rand_bound = rc.positive("bound", 1.0);
    rand_constant = rc.boolean("constant", false);
    rc.finish();
    if (rand_n > 4) rc.fail("n", "must be at most 4");
  }
  const int cases = r.integer("cases", 100, 1);
  const double max_length = r.positive("max_length", 2.0);
  const double step_size = r.positive("step_size", 1e-3);
  const double box = r.positive("box", 1.5);
  const int order_cases = r.integer("order_cases", 10, 0);
  auto tol = r.child("tolerances");
  const double tol_unit = tol.positive("unitarity_defect", 1e-9);
  const double tol_oracle = tol.positive("oracle_error", 1e-8);
  const double order_lo = tol.number("min_order", 3.8);
  const double order_hi = tol.number("max_order", 4.2);
  tol.finish();
  if (2.0 * box < max_length) r.fail("max_length", "must fit inside the box of half-width 'box'");
  if (!execute || (r.has("connection") && !fixed)) return std::nullopt;

  const bool constant = fixed ? fixed->is_static() : rand_constant;
  std::mt19937_64 rng(ctx.seed + 1);
  auto draw_constant = [&](bool full_norm) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Components c;
    for (auto& m : c) m = random_skew_hermitian(rand_n, rng, full_norm ? rand_bound : rand_bound * unit(rng));
    return constant_connection(c);
  };
  std::vector<ConnectionField> conns;
  std::vector<LightlikeSegment> segs;
  for (int k = 0; k < cases; ++k) {
    if (fixed) conns.push_back(*fixed);
    else conns.push_back(rand_constant ? draw_constant(false) : random_connection(rand_n, rng, rand_bound));
    segs.push_back(random_segment_in_box(rng, max_length, box));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> defects(segs.size()), oracle(segs.size(), nan);
  std::vector<int> steps(segs.size());
  auto exact = [](const ConnectionField& a, const LightlikeSegment& s) {
    return exp_skew_hermitian(-s.length * pairing(a, s.start, s.tangent()));
  };
  parallel_for(segs.size(), ctx.workers, [&](std::size_t k) {
    steps[k] = std::max(1, static_cast<int>(std::ceil(segs[k].length / step_size)));
    const CMatrix w = parallel_transport(conns[k], segs[k], steps[k]).matrix;
    defects[k] = unitarity_defect(w);
    if (constant) oracle[k] = (w - exact(conns[k], segs[k])).norm();
  });

  std::vector<double> orders;
  if (constant) {
    static constexpr std::array<int, 4> kOrderSteps{8, 16, 32, 64};
    for (int k = 0; k < order_cases; ++k) {
      const ConnectionField a = fixed ? *fixed : draw_constant(true);
      const auto seg = LightlikeSegment::from_ray(SpacetimePoint(-0.5 * max_length, 0.0, 0.0, 0.0),
                                                  random_unit_vector(rng), max_length);
      const CMatrix e = exact(a, seg);
      if ((parallel_transport(a, seg, kOrderSteps.back()).matrix - e).norm() < 1e-12) continue;
      orders.push_back(observed_transport_order(a, seg, e, kOrderSteps));
    }
  }

  ExperimentResult res;
  res.table.header = {"case", "length", "steps", "unitarity_defect", "oracle_error"};
  for (std::size_t k = 0; k < segs.size(); ++k)
    res.table.add_row({static_cast<double>(k), segs[k].length, static_cast<double>(steps[k]), defects[k], oracle[k]});
  res.summary = {{"unitarity_defect", summary_stats(defects)},
                 {"oracle_error", summary_stats(oracle)},
                 {"constant", constant},
                 {"observed_order", orders}};
  res.check("max_unitarity_defect", res.table.max_of("unitarity_defect"), "<", tol_unit);
  if (constant) res.check("max_oracle_error", res.table.max_of("oracle_error"), "<", tol_oracle);
  if (!orders.empty()) {
    res.check("min_observed_order", *std::min_element(orders.begin(), orders.end()), ">=", order_lo);
    res.check("max_observed_order", *std::max_element(orders.begin(), orders.end()), "<=", order_hi);
  }
  return res;
}

/// Broken transforms over sampled 𝕊⁺(℧) triples; with a gauge, S^A against
/// S^{A^u}.
inline std::optional<ExperimentResult> experiment_broken_ray(ConfigReader& r, const RunContext& ctx, bool execute) {
  auto a = detail::read_connection(r, ctx.seed, true);
  const double eps = detail::read_epsilon(r);
  const ObservationSet u(eps);
  SpacetimePoint gc;
  double gr = 0.0;
  std::optional<GaugeMap> gauge;
  if (a) gauge = detail::read_gauge(r, a->rank(), u, ctx.seed, false, gc, gr);
  else {
    r.allow("gauge");
    r.allow("random_gauge");
  }
  const int vertices = r.integer("vertices", 40, 1);
  const int per_vertex = r.integer("triples_per_vertex", 5, 1);
  const int steps = r.integer("steps", 0, 0);
  auto tol = r.child("tolerances");
  const double tol_s = tol.positive("s_difference", 1e-7);
  const double tol_unit = tol.positive("unitarity_defect", 1e-9);
  tol.finish();
  if (!execute || !a) return std::nullopt;

  std::optional<ConnectionField> b;
  if (gauge) b = gauge_transform_connection(*a, *gauge);
  const auto ys = sample_diamond_points(u, vertices, ctx.seed + 2);
  std::vector<TripleSample> triples;
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (auto& t : sample_triples(u, ys[i], per_vertex, ctx.seed + 7919ULL * (i + 1))) triples.push_back(t);
  std::vector<std::vector<double>> rows(triples.size());
  parallel_for(triples.size(), ctx.workers, [&](std::size_t k) {
    const auto d = broken_transform(*a, triples[k], steps, u);
    const CMatrix back = broken_transform_reverse(*a, triples[k], steps);
    const double inv = (back * d.S - CMatrix::Identity(a->rank(), a->rank())).norm();
    double sd = std::numeric_limits<double>::quiet_NaN();
    if (b) sd = (broken_transform(*b, triples[k], steps).S - d.S).norm();
    auto row = triple_csv_row(triples[k]);
    row.insert(row.end(), {d.unitarity_defect, inv, sd});
    rows[k] = row;
  });
  ExperimentResult res;
  res.table.header = triple_csv_header();
  for (const char* c : {"unitarity_defect", "inverse_residual", "s_difference"}) res.table.header.emplace_back(c);
  for (auto& row : rows) res.table.add_row(row);
  res.summary = {{"triples", static_cast<int>(triples.size())},
                 {"vertices", static_cast<int>(ys.size())},
                 {"unitarity_defect", summary_stats(res.table.values("unitarity_defect"))},
                 {"inverse_residual", summary_stats(res.table.values("inverse_residual"))},
                 {"s_difference", summary_stats(res.table.values("s_difference"))}};
  res.check("triples_sampled", static_cast<double>(triples.size()), ">", 0.0);
  res.check("max_unitarity_defect", res.table.max_of("unitarity_defect"), "<", tol_unit);
  if (b) res.check("max_s_difference", res.table.max_of("s_difference"), "<", tol_s);
  return res;
}

/// Synthetic inversion: reconstruct a gauge trivial on ℧ from broken
/// transforms and compare with the truth.
inline std::optional<ExperimentResult> experiment_reconstruct(ConfigReader& r, const RunContext& ctx, bool execute) {
  auto a = detail::read_connection(r, ctx.seed, true);
  const double eps = detail::read_epsilon(r);
  const ObservationSet u(eps);
  SpacetimePoint gc(0.5, 0.42, 0.0, 0.0);
  double gr = 0.25;
  std::optional<GaugeMap> gauge;
  if (a) gauge = detail::read_gauge(r, a->rank(), u, ctx.seed, true, gc, gr);
  else {
    r.allow("gauge");
    r.allow("random_gauge");
  }
  const int points = r.integer("points", 50, 1);
  EndToEndOptions opt;
  opt.base_points = r.integer("base_points", 6, 2);
  opt.s_triples = r.integer("s_triples", 200, 0);
  opt.fd_step = r.positive("fd_step", 1e-4);
  opt.steps = r.integer("steps", 0, 0);
  opt.gauge_residual = r.boolean("gauge_residual", true);
  auto region = r.child("y_region");
  const auto rc = region.vec4("center");
  const double rr = region.positive("radius", gr);
  region.finish();
  auto tol = r.child("tolerances");
  const double tol_x = tol.positive("x_indep_defect", 1e-7);
  const double tol_u = tol.positive("u_error", 1e-6);
  const double tol_g = tol.positive("gauge_residual", 1e-4);
  const double tol_s = tol.positive("s_difference", 1e-7);
  tol.finish();
  if (!execute || !a || !gauge) return std::nullopt;

  opt.seed = ctx.seed + 3;
  opt.workers = ctx.workers;
  const SpacetimePoint center = rc ? SpacetimePoint::from_vec4(*rc) : gc;
  const auto ys = sample_diamond_points(u, points, ctx.seed + 4, center, rr);
  const auto rep = end_to_end_synthetic(*a, *gauge, u, ys, opt);
  ExperimentResult res;
  res.table = rep.table();
  res.summary = rep.summary();
  res.summary["points"] = static_cast<int>(ys.size());
  res.check("points_reconstructed", static_cast<double>(rep.rows.size()), ">", 0.0);
  res.check("max_x_indep_defect", res.summary["x_indep_defect"]["max"].get<double>(), "<", tol_x);
  res.check("max_u_error", res.summary["u_error"]["max"].get<double>(), "<", tol_u);
  if (opt.gauge_residual) res.check("max_gauge_residual", res.summary["gauge_residual"]["max"].get<double>(), "<", tol_g);
  if (opt.s_triples > 0) res.check("max_s_difference", rep.max_s_difference, "<", tol_s);
  return res;
}

/// Exact triplet decomposition over an r sweep, asymptotic order, and the
/// sign quantity b on frames sampled from 𝕊⁺(℧).
inline std::optional<ExperimentResult> experiment_span_lemma(ConfigReader& r, const RunContext& ctx, bool execute) {
  const auto xi1 = r.vec4("xi1").value_or(Vec4(1.0, 1.0, 0.0, 0.0));
  const auto eta = r.vec4("eta").value_or(Vec4(1.0, -0.8, 0.6, 0.0));
  const auto rs = r.numbers("r_values", {0.1, 0.05, 0.025}, 2);
  for (double x : rs)
    if (!(x > 0.0 && x < 1.0)) r.fail("r_values", "entries must lie in (0, 1)");
  const double det_r = r.number("determinant_r", 0.6);
  if (!(det_r > 0.0 && det_r < 1.0)) r.fail("determinant_r", "must lie in (0, 1)");
  const int random_frames = r.integer("random_frames", 1000, 0);
  const double random_r = r.number("random_frame_r", 0.1);
  if (!(random_r > 0.0 && random_r < 1.0)) r.fail("random_frame_r", "must lie in (0, 1)");
  const int sign_frames = r.integer("sign_frames", 1000, 0);
  const double eps = detail::read_epsilon(r);
  auto tol = r.child("tolerances");
  const double tol_res = tol.positive("residual", 1e-12);
  const double tol_det = tol.positive("determinant", 1e-12);
  const double min_order = tol.number("min_order", 0.9);
  const double min_b = tol.number("min_b", 1.0);
  tol.finish();
  std::optional<LightlikeFrame> frame;
  try {
    frame = normalize_pair(xi1, eta);
  } catch (const std::exception& e) {
    r.fail("eta", e.what());
  }
  if (!execute || !frame) return std::nullopt;

  ExperimentResult res;
  const auto sweep = span_lemma_sweep(*frame, rs);
  res.table = sweep.table;
  const auto dd = lightlike_triplet(*frame, det_r);
  const double det_err = std::abs(dd.determinant - 2.0 * det_r * (1.0 - lightlike_a(det_r)));

  std::mt19937_64 rng(ctx.seed + 5);
  double random_res = 0.0;
  for (int k = 0; k < random_frames; ++k) {
    const Vec3 p = random_unit_vector(rng), q = random_unit_vector(rng);
    if ((p - q).norm() < 1e-6) continue;
    const auto f = normalize_pair(Vec4(1.0, p(0), p(1), p(2)), Vec4(1.0, q(0), q(1), q(2)));
    random_res = std::max(random_res, lightlike_triplet(f, random_r).residual);
  }

  const ObservationSet u(eps);
  std::vector<double> bs;
  if (sign_frames > 0) {
    const auto ys = sample_diamond_points(u, sign_frames, ctx.seed + 6);
    for (std::size_t i = 0; i < ys.size() && static_cast<int>(bs.size()) < sign_frames; ++i)
      for (const auto& t : sample_triples(u, ys[i], 1, ctx.seed + 31ULL * (i + 1)))
        bs.push_back(check_sign_condition(frame_from_triple(t)));
  }
  const double b_min = bs.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::min_element(bs.begin(), bs.end());
  const auto lam = eta_flow_components(*frame, rs.front());
  res.summary = {{"r0", frame->r0},
                 {"sign", frame->sign},
                 {"b", sign_condition_b(*frame)},
                 {"fitted_order", sweep.fitted_order},
                 {"asymptotic_error", sweep.errors},
                 {"max_residual", sweep.max_residual},
                 {"random_frame_residual", random_res},
                 {"determinant", dd.determinant},
                 {"determinant_error", det_err},
                 {"lambda", {lam(0), lam(1), lam(2)}},
                 {"sign_frames", {{"count", static_cast<int>(bs.size())}, {"b_min", b_min}}}};
  res.check("max_residual", sweep.max_residual, "<", tol_res);
  if (random_frames > 0) res.check("random_frame_residual", random_res, "<", tol_res);
  res.check("determinant_error", det_err, "<", tol_det);
  res.check("fitted_order", sweep.fitted_order, ">=", min_order);
  if (!bs.empty()) res.check("b_min", b_min, ">=", min_b);
  return res;
}

/// Filament residuals, flowout Jacobian conditioning, collision search and the
/// cone mesh dump.
inline std::optional<ExperimentResult> experiment_cone_geometry(ConfigReader& r, const RunContext& ctx, bool execute) {
  const double s_in = r.positive("s_in", 2.0);
  const double rr = r.number("r", 0.8);
  if (!(rr > 0.0 && rr < 1.0)) r.fail("r", "must lie in (0, 1)");
  const int z_samples = r.integer("z_samples", 401, 2);
  auto fl = r.child("flowout");
  FlowoutRegion region;
  region.t_min = fl.positive("t_min", 0.1);
  region.t_max = fl.positive("t_max", 2.0);
  region.z_max = fl.positive("z_max", 0.2 * s_in);
  fl.finish();
  if (region.t_min > region.t_max) r.fail("flowout", "t_min must not exceed t_max");
  if (!(region.z_max < 0.5 * s_in)) r.fail("flowout.z_max", "must be below s_in/2");
  const int pairs = r.integer("collision_pairs", 100000, 0);
  const bool mesh = r.boolean("mesh", true);
  const double mesh_time = r.number("mesh_time", 0.5);
  if (!(mesh_time > -s_in)) r.fail("mesh_time", "must exceed −s_in");
  auto tol = r.child("tolerances");
  const double tol_cone = tol.positive("cone_residual", 1e-12);
  const double min_sv = tol.number("min_singular_value", 0.1);
  tol.finish();
  if (!execute) return std::nullopt;

  ExperimentResult res;
  std::vector<double> zs;
  for (int k = 0; k < z_samples; ++k) zs.push_back(-s_in + 2.0 * s_in * k / (z_samples - 1));
  res.table = filament_table(s_in, rr, zs, region);
  double cone_max = 0.0;
  for (const char* c : {"cone_res_1", "cone_res_2", "cone_res_3"})
    for (double v : res.table.values(c)) cone_max = std::max(cone_max, std::abs(v));
  const double sv = flowout_min_singular_value(s_in, region);
  const auto cs = flowout_collision_search(s_in, region, pairs, ctx.seed + 7);
  res.summary = {{"max_cone_residual", cone_max},
                 {"min_singular_value", sv},
                 {"collision_pairs", cs.pairs},
                 {"collisions", cs.collisions},
                 {"min_image_ratio", cs.min_ratio},
                 {"region", {{"t_min", region.t_min}, {"t_max", region.t_max}, {"z_max", region.z_max}}}};
  if (mesh) res.summary["mesh"] = cone_mesh_json(s_in, rr, mesh_time);
  res.check("max_cone_residual", cone_max, "<", tol_cone);
  res.check("min_singular_value", sv, ">", min_sv);
  if (pairs > 0) res.check("collisions", static_cast<double>(cs.collisions), "==", 0.0);
  return res;
}

/// Symplectic residuals of F^± with analytic and finite-difference Jacobians,
/// and the normal-form identities.
inline std::optional<ExperimentResult> experiment_symplectic(ConfigReader& r, const RunContext& ctx, bool execute) {
  const int points = r.integer("points", 100, 1);
  const double fd_step = r.positive("fd_step", 1e-6);
  auto tol = r.child("tolerances");
  const double tol_an = tol.positive("analytic", 1e-8);
  const double tol_fd = tol.positive("finite_difference", 1e-6);
  const double tol_id = tol.positive("identity", 1e-12);
  tol.finish();
  if (!execute) return std::nullopt;

  ExperimentResult res;
  res.table.header = {"point", "sign", "residual_analytic", "residual_fd"};
  std::mt19937_64 rng(ctx.seed + 8);
  std::uniform_real_distribution<double> unit(-2.0, 2.0);
  double id_err = 0.0;
  for (int k = 0; k < points; ++k) {
    PhaseSpacePoint p;
    for (int i = 0; i < 4; ++i) {
      p.x(i) = unit(rng);
      p.xi(i) = unit(rng);
    }
    for (int s : {1, -1})
      res.table.add_row({static_cast<double>(k), static_cast<double>(s), symplectic_residual(symplectic_jacobian(s, p)),
                         symplectic_residual(symplectic_jacobian_fd(s, p, fd_step))});
    // F⁺(t, tθ; −λ, λθ) = (t, 0; 0, λθ) and F⁻(t, tθ; λ, −λθ) = (t, 0; 0, −λθ).
    const double t = std::abs(unit(rng)) + 0.1, lam = std::abs(unit(rng)) + 0.1;
    const Vec3 th = random_unit_vector(rng);
    PhaseSpacePoint q;
    q.x << t, t * th;
    q.xi << -lam, lam * th;
    const auto fq = symplectic_normal_form(1, q);
    Eigen::Matrix<double, 8, 1> expect;
    expect << t, 0, 0, 0, 0, lam * th;
    id_err = std::max(id_err, (fq.as_vec8() - expect).norm());
    PhaseSpacePoint q2;
    q2.x << t, t * th;
    q2.xi << lam, -lam * th;
    const auto fq2 = symplectic_normal_form(-1, q2);
    Eigen::Matrix<double, 8, 1> expect2;
    expect2 << t, 0, 0, 0, 0, -lam * th;
    id_err = std::max(id_err, (fq2.as_vec8() - expect2).norm());
    PhaseSpacePoint o;
    o.xi << unit(rng), Vec3(unit(rng), unit(rng), unit(rng));
    if (o.xi.tail<3>().norm() > 1e-3) {
      const auto fo = symplectic_normal_form(1, o);
      Eigen::Matrix<double, 8, 1> e3;
      e3 << 0, 0, 0, 0, o.xi(0) + o.xi.tail<3>().norm(), o.xi.tail<3>();
      id_err = std::max(id_err, (fo.as_vec8() - e3).norm());
    }
  }
  res.summary = {{"residual_analytic", summary_stats(res.table.values("residual_analytic"))},
                 {"residual_fd", summary_stats(res.table.values("residual_fd"))},
                 {"identity_error", id_err}};
  res.check("max_residual_analytic", res.table.max_of("residual_analytic"), "<", tol_an);
  res.check("max_residual_fd", res.table.max_of("residual_fd"), "<", tol_fd);
  res.check("identity_error", id_err, "<", tol_id);
  return res;
}

/// Wave-solver studies: manufactured-solution refinement, gauge covariance of
/// L_A under refinement, or the finite-propagation support check.
inline std::optional<ExperimentResult> experiment_wave_converge(ConfigReader& r, const RunContext& ctx, bool execute) {
  const std::string study = r.string("study", "manufactured", {"manufactured", "gauge-covariance", "cone-support"});
  auto a = detail::read_connection(r, ctx.seed, false, 1);
  const double kappa = r.number("kappa", 0.5);
  const auto grid = detail::read_grid(r, ctx.check_invariants, study == "cone-support" ? 3 : 1,
                                      study == "cone-support" ? 48 : 201, study == "cone-support" ? 1.0 : 2.0,
                                      study == "cone-support" ? 0.6 : 1.0, study == "cone-support" ? 0.9 : 0.5);
  const int refinements = r.integer("refinements", 3, 2);
  const double eps = detail::read_epsilon(r);
  const ObservationSet u(eps);
  std::optional<SourceSpec> source;
  if (const Json* sj = r.raw("source")) {
    if (a) {
      std::vector<std::string> d;
      source = detail::read_source(*sj, "source", a->rank(), d);
      for (auto& m : d) r.fail("", m);
    }
  }
  SpacetimePoint gc;
  double gr = 0.0;
  std::optional<GaugeMap> gauge;
  if (a && study == "gauge-covariance") gauge = detail::read_gauge(r, a->rank(), u, ctx.seed, true, gc, gr);
  else {
    r.allow("gauge");
    r.allow("random_gauge");
  }
  auto ms_r = r.child("manufactured");
  ManufacturedSolution ms;
  ms.t_a = ms_r.number("t_a", 0.1);
  ms.t_b = ms_r.number("t_b", 0.9);
  ms.width = ms_r.positive("width", 0.5);
  const double ms_amp = ms_r.number("amplitude", 1.0);
  ms_r.finish();
  if (!(ms.t_a > 0.0 && ms.t_a < ms.t_b)) r.fail("manufactured", "needs 0 < t_a < t_b");
  auto tol = r.child("tolerances");
  const double min_order = tol.number("min_order", 1.8);
  const double max_order = tol.number("max_order", 2.2);
  const double tol_prop = tol.positive("propagation", 1e-3);
  const double max_c_spread = tol.positive("max_constant_spread", 1.5);
  tol.finish();
  if (study == "manufactured" && a && !a->has_derivative()) r.fail("connection", "needs an analytic derivative");
  if (!execute || !a || !grid) return std::nullopt;

  ExperimentResult res;
  SolveOptions opt;
  opt.workers = ctx.workers;
  auto refined = [&](int level) {
    WaveGrid g = *grid;
    const int k = 1 << level;
    for (int ax = 0; ax < g.dim; ++ax) {
      auto& e = g.extents[static_cast<std::size_t>(ax)];
      e = (e - 1) * k + 1;
    }
    g.h /= k;
    g.dt /= k;
    g.validate();
    return g;
  };

  if (study == "manufactured") {
    ms.amplitude = CVector::Constant(a->rank(), Complex(ms_amp, 0.5 * ms_amp));
    const Source src = ms.source(*a, kappa, grid->dim);
    res.table.header = {"nodes", "h", "dt", "max_error"};
    std::vector<double> hs, es;
    for (int l = 0; l < refinements; ++l) {
      const WaveGrid g = refined(l);
      const auto sol = solve_forward(*a, kappa, src, g, opt);
      const double e = ms.max_error(sol);
      hs.push_back(g.h);
      es.push_back(e);
      res.table.add_row({static_cast<double>(g.extents[0]), g.h, g.dt, e});
    }
    const double order = loglog_slope(hs, es);
    res.summary = {{"study", study}, {"fitted_order", order}, {"errors", es}};
    res.check("fitted_order", order, ">=", min_order);
    res.check("fitted_order", order, "<=", max_order);
  } else if (study == "gauge-covariance") {
    if (!gauge) return std::nullopt;
    const ConnectionField b = gauge_transform_connection(*a, *gauge);
    SourceSpec f = source.value_or(SourceSpec{});
    if (!source) {
      f.radius = 0.1;
      f.t_lo = 0.05;
      f.t_hi = 0.35;
      f.amplitude = CVector::Constant(a->rank(), Complex(30.0, 10.0));
    }
    res.table.header = {"nodes", "h", "restriction_difference", "relative_difference", "constant"};
    std::vector<double> hs, es, cs;
    for (int l = 0; l < refinements; ++l) {
      const WaveGrid g = refined(l);
      const auto la = source_to_solution(*a, kappa, Source::from_specs({f}), g, u, opt);
      const auto lb = source_to_solution(b, kappa, Source::from_specs({f}), g, u, opt);
      const double d = (la.values - lb.values).cwiseAbs().maxCoeff();
      const double scale = la.values.cwiseAbs().maxCoeff();
      hs.push_back(g.h);
      es.push_back(d);
      cs.push_back(d / (g.h * g.h));
      res.table.add_row({static_cast<double>(g.extents[0]), g.h, d, scale > 0.0 ? d / scale : d, cs.back()});
    }
    const double order = loglog_slope(hs, es);
    const double spread = *std::max_element(cs.begin(), cs.end()) / *std::min_element(cs.begin(), cs.end());
    res.summary = {{"study", study}, {"fitted_order", order}, {"constant_spread", spread}, {"constants", cs}};
    res.check("fitted_order", order, ">=", min_order);
    res.check("constant_spread", spread, "<=", max_c_spread);
  } else {
    SourceSpec f = source.value_or(SourceSpec{});
    if (!source) {
      f.radius = 0.12;
      f.t_lo = 0.02;
      f.t_hi = 0.2;
      f.amplitude = CVector::Constant(a->rank(), Complex(50.0, 0.0));
    }
    double worst = 0.0;
    opt.store_history = false;
    opt.observer = [&](int m, const FieldLevel& l) {
      if (m > 0) worst = std::max(worst, propagation_violation(l, *grid, m, {f}, grid->h));
    };
    const auto sol = solve_forward(*a, kappa, Source::from_specs({f}), *grid, opt);
    res.table.header = {"nodes", "h", "dt", "steps", "propagation_violation", "peak", "boundary_peak"};
    res.table.add_row({static_cast<double>(grid->extents[0]), grid->h, grid->dt, static_cast<double>(grid->steps()),
                       worst, sol.peak, sol.boundary_peak});
    res.summary = {{"study", study}, {"propagation_violation", worst}, {"peak", sol.peak},
                   {"boundary_peak", sol.boundary_peak}};
    res.extra_tables.emplace_back("snapshot", snapshot_table(sol.final_level(), *grid));
    res.check("propagation_violation", worst, "<", tol_prop);
  }
  return res;
}

/// Third cross-derivative against the interaction solve over an ε sweep.
inline std::optional<ExperimentResult> experiment_threefold(ConfigReader& r, const RunContext& ctx, bool execute) {
  auto a = detail::read_connection(r, ctx.seed, false, 1);
  const double kappa = r.number("kappa", 1.0);
  const auto grid = detail::read_grid(r, ctx.check_invariants, 1, 401, 2.0, 1.0, 0.5);
  const auto eps = r.numbers("eps", {4e-2, 2e-2, 1e-2}, 2);
  for (double e : eps)
    if (!(e > 0.0)) r.fail("eps", "entries must be positive");
  std::array<SourceSpec, 3> f;
  const int n = a ? a->rank() : 1;
  const Json* sj = r.raw("sources");
  if (sj) {
    if (!sj->is_array() || sj->size() != 3) {
      r.fail("sources", "must be an array of 3 source objects");
    } else {
      for (std::size_t k = 0; k < 3; ++k) {
        std::vector<std::string> d;
        auto s = detail::read_source((*sj)[k], "sources[" + std::to_string(k) + "]", n, d);
        for (auto& m : d) r.fail("", m);
        if (s) f[k] = *s;
      }
    }
  } else {
    for (std::size_t k = 0; k < 3; ++k) {
      f[k].center = Vec3(-0.3 + 0.3 * static_cast<double>(k), 0.0, 0.0);
      f[k].radius = 0.05;
      f[k].t_lo = 0.05;
      f[k].t_hi = 0.15;
      f[k].amplitude = CVector::Constant(n, Complex(1000.0, 0.0));
    }
  }
  auto tol = r.child("tolerances");
  const double tol_rel = tol.positive("rel_err_finest", 0.05);
  const double tol_kappa = tol.positive("kappa_linearity", 1e-10);
  const double tol_second = tol.positive("second_central", 1e-12);
  tol.finish();
  if (!pairwise_causally_disjoint({f[0], f[1], f[2]})) r.fail("sources", "supports must be pairwise causally disjoint");
  if (!execute || !a || !grid) return std::nullopt;

  std::vector<double> sweep = eps;
  std::sort(sweep.begin(), sweep.end(), std::greater<>());
  const auto rep = verify_threefold(*a, kappa, f, sweep, *grid, ctx.workers);
  ExperimentResult res;
  res.table = rep.table();
  res.summary = rep.to_json();
  bool decreasing = true;
  for (std::size_t k = 1; k < rep.rel_err.size(); ++k) decreasing = decreasing && rep.rel_err[k] < rep.rel_err[k - 1];
  bool second_decreasing = true;
  for (std::size_t k = 1; k < rep.second_forward.size(); ++k)
    second_decreasing = second_decreasing && rep.second_forward[k] < rep.second_forward[k - 1];
  res.summary["rel_err_decreasing"] = decreasing;
  res.check("rel_err_finest", rep.rel_err.back(), "<", tol_rel);
  res.check("rel_err_decreasing", decreasing ? 1.0 : 0.0, "==", 1.0);
  res.check("second_forward_decreasing", second_decreasing ? 1.0 : 0.0, "==", 1.0);
  res.check("max_second_central", *std::max_element(rep.second_central.begin(), rep.second_central.end()), "<",
            tol_second);
  res.check("kappa_linearity", rep.kappa_linearity, "<", tol_kappa);
  return res;
}

// Orchestration --------------------------------------------------------------

struct ParsedConfig {
  std::string kind;
  std::uint64_t seed = 1;
  std::vector<std::string> diagnostics;
  std::optional<ExperimentResult> result;
};

/// Parses and checks the config; with `execute` and no diagnostics, also runs
/// it. An explicit seed overrides the config value. Grid invariants are
/// diagnostics when validating and InvalidGrid errors when executing.
inline ParsedConfig process_config(const Json& cfg, bool execute, std::optional<std::uint64_t> seed_override = {},
                                   unsigned workers = 1) {
  ParsedConfig out;
  ConfigReader r(cfg, "", out.diagnostics);
  if (!cfg.is_object()) return out;
  out.kind = r.string("kind", "");
  r.allow("description");
  RunContext ctx;
  ctx.workers = workers;
  ctx.check_invariants = !execute;
  const int seed = r.integer("seed", 1, 0);
  ctx.seed = seed_override.value_or(static_cast<std::uint64_t>(seed));
  out.seed = ctx.seed;
  if (out.kind.empty()) {
    out.diagnostics.push_back(
        std::string("kind: ") + (cfg.contains("kind") ? "must be a nonempty string" : "is required") +
        " (allowed: " + joined_kinds() + ")");
    return out;
  }
  using Fn = std::optional<ExperimentResult> (*)(ConfigReader&, const RunContext&, bool);
  Fn fn = nullptr;
  if (out.kind == "transport") fn = experiment_transport;
  else if (out.kind == "broken-ray") fn = experiment_broken_ray;
  else if (out.kind == "reconstruct") fn = experiment_reconstruct;
  else if (out.kind == "span-lemma") fn = experiment_span_lemma;
  else if (out.kind == "cone-geometry") fn = experiment_cone_geometry;
  else if (out.kind == "symplectic") fn = experiment_symplectic;
  else if (out.kind == "wave-converge") fn = experiment_wave_converge;
  else if (out.kind == "threefold") fn = experiment_threefold;
  if (!fn) {
    out.diagnostics.push_back("kind: unknown experiment kind '" + out.kind + "' (allowed: " + joined_kinds() + ")");
    return out;
  }
  // First pass validates only; the run happens after a clean pass.
  fn(r, ctx, false);
  r.finish();
  if (!out.diagnostics.empty() || !execute) return out;
  std::vector<std::string> scratch;
  ConfigReader again(cfg, "", scratch);
  again.allow("kind");
  again.allow("description");
  again.allow("seed");
  out.result = fn(again, ctx, true);
  if (out.result) out.result->kind = out.kind;
  return out;
}

/// Canonical hash of a config: FNV-1a of its sorted-key compact dump, with the
/// effective seed written in.
inline std::string config_hash(Json cfg, std::optional<std::uint64_t> seed_override = {}) {
  if (seed_override && cfg.is_object()) cfg["seed"] = *seed_override;
  return fnv1a_hex(cfg.dump());
}

struct OutputPaths {
  std::filesystem::path csv;
  std::filesystem::path json;
};

inline OutputPaths write_outputs(const ExperimentResult& res, const std::filesystem::path& dir,
                                 const std::string& hash, double wall_seconds, std::uint64_t seed,
                                 const Json& config = Json::object()) {
  std::filesystem::create_directories(dir);
  OutputPaths p{dir / (res.kind + "_" + hash + ".csv"), dir / (res.kind + "_" + hash + ".json")};
  res.table.write_file(p.csv.string());
  for (const auto& [name, table] : res.extra_tables)
    table.write_file((dir / (res.kind + "_" + hash + "_" + name + ".csv")).string());
  Json j{{"kind", res.kind},
         {"version", LIGHTRAY_VERSION},
         {"config_hash", hash},
         {"seed", seed},
         {"wall_time_s", wall_seconds},
         {"passed", res.passed()},
         {"checks", res.checks_json()},
         {"summary", res.summary},
         {"config", config}};
  std::ofstream os(p.json);
  if (!os) throw std::runtime_error("cannot write " + p.json.string());
  os << j.dump(2) << '\n';
  return p;
}

}  // namespace lightray
