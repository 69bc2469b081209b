#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lightray/errors.hpp"
#include "lightray/io.hpp"
#include "lightray/linalg.hpp"
#include "lightray/minkowski.hpp"

namespace lightray {

/// (A_0, A_1, A_2, A_3) at one point.
using Components = std::array<CMatrix, 4>;
/// d[ν][μ] = ∂_ν A_μ.
using ComponentDerivatives = std::array<Components, 4>;

inline Components zero_components(Eigen::Index n) {
  return {CMatrix::Zero(n, n), CMatrix::Zero(n, n), CMatrix::Zero(n, n), CMatrix::Zero(n, n)};
}

inline ComponentDerivatives zero_derivatives(Eigen::Index n) {
  return {zero_components(n), zero_components(n), zero_components(n), zero_components(n)};
}

inline double ipow(double base, int e) {
  double r = 1.0;
  for (; e > 0; --e) r *= base;
  return r;
}

/// Monomial coeff · t^{p0} x1^{p1} x2^{p2} x3^{p3}.
struct Monomial {
  double coeff = 0.0;
  std::array<int, 4> powers{0, 0, 0, 0};
};

enum class TermKind { Constant, Poly, Bump };

/// One vocabulary term c(p)·M contributing to component A_μ. The scalar
/// factor c is real, so skew-Hermitian M keeps A_μ skew-Hermitian.
struct ConnectionTerm {
  TermKind kind = TermKind::Constant;
  int component = 0;
  CMatrix matrix;
  std::vector<Monomial> monomials;   // Poly
  Vec4 center = Vec4::Zero();        // Bump
  double width = 1.0;                // Bump: exp(−|p − center|² / width²)

  [[nodiscard]] double coefficient(const Vec4& p) const {
    switch (kind) {
      case TermKind::Constant: return 1.0;
      case TermKind::Poly: {
        double sum = 0.0;
        for (const auto& m : monomials) {
          double v = m.coeff;
          for (int k = 0; k < 4; ++k) v *= ipow(p(k), m.powers[static_cast<std::size_t>(k)]);
          sum += v;
        }
        return sum;
      }
      case TermKind::Bump: return std::exp(-(p - center).squaredNorm() / (width * width));
    }
    return 0.0;
  }

  [[nodiscard]] Vec4 gradient(const Vec4& p) const {
    Vec4 g = Vec4::Zero();
    switch (kind) {
      case TermKind::Constant: break;
      case TermKind::Poly:
        for (const auto& m : monomials) {
          for (int nu = 0; nu < 4; ++nu) {
            const int pw = m.powers[static_cast<std::size_t>(nu)];
            if (pw == 0) continue;
            double v = m.coeff * pw;
            for (int k = 0; k < 4; ++k) {
              const int e = m.powers[static_cast<std::size_t>(k)] - (k == nu ? 1 : 0);
              v *= ipow(p(k), e);
            }
            g(nu) += v;
          }
        }
        break;
      case TermKind::Bump: g = (-2.0 / (width * width)) * coefficient(p) * (p - center); break;
    }
    return g;
  }
};

inline const char* to_string(TermKind k) {
  switch (k) {
    case TermKind::Constant: return "constant";
    case TermKind::Poly: return "poly";
    case TermKind::Bump: return "bump";
  }
  return "?";
}

// Matrix JSON: row-major list of [re, im] pairs.
inline Json matrix_to_json(const CMatrix& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(Json::array({m(i, j).real(), m(i, j).imag()}));
  return out;
}

inline CMatrix matrix_from_json(const Json& j, Eigen::Index n) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n * n) {
    throw ConfigError("matrix must list n*n = " + std::to_string(n * n) + " [re, im] pairs");
  }
  CMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const Json& e = j[static_cast<std::size_t>(i * n + k)];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
        throw ConfigError("matrix entries must be [re, im] number pairs");
      }
      m(i, k) = Complex(e[0].get<double>(), e[1].get<double>());
    }
  }
  return m;
}

inline Json vec4_to_json(const Vec4& v) { return Json::array({v(0), v(1), v(2), v(3)}); }

inline Vec4 vec4_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("expected a 4-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

/// Smooth connection 1-form x ↦ (A_0, …, A_3) on the trivial rank-n bundle.
///
/// Evaluation is pure and re-entrant. Fields built from the term vocabulary
/// carry an analytic derivative and a JSON description; derived fields (gauge
/// transforms) may carry neither.
class ConnectionField {
 public:
  using EvalFn = std::function<void(const SpacetimePoint&, Components&)>;
  using DerivFn = std::function<void(const SpacetimePoint&, ComponentDerivatives&)>;

  ConnectionField(int n, EvalFn eval, DerivFn deriv = {}, std::optional<Json> description = std::nullopt,
                  bool is_static = false)
      : n_(n), eval_(std::move(eval)), deriv_(std::move(deriv)), description_(std::move(description)),
        static_(is_static) {
    if (n < 1) throw InvalidArgument("bundle rank must be positive");
    if (!eval_) throw InvalidArgument("connection needs an evaluator");
  }

  static ConnectionField zero(int n) { return from_terms(n, {}); }

  static ConnectionField from_terms(int n, std::vector<ConnectionTerm> terms) {
    for (const auto& t : terms) {
      if (t.component < 0 || t.component > 3) throw InvalidArgument("term component must be in 0..3");
      if (t.matrix.rows() != n || t.matrix.cols() != n) throw InvalidArgument("term matrix has wrong size");
      if (!is_skew_hermitian(t.matrix)) throw InvalidArgument("term matrix must be skew-Hermitian");
      if (t.kind == TermKind::Poly) {
        for (const auto& m : t.monomials) {
          int deg = 0;
          for (int e : m.powers) {
            if (e < 0) throw InvalidArgument("monomial powers must be non-negative");
            deg += e;
          }
          if (deg > 3) throw InvalidArgument("polynomial terms are limited to degree 3");
        }
      }
      if (t.kind == TermKind::Bump && !(t.width > 0.0)) throw InvalidArgument("bump width must be positive");
    }
    bool is_static = true;
    for (const auto& t : terms) is_static = is_static && t.kind == TermKind::Constant;

    auto shared = std::make_shared<const std::vector<ConnectionTerm>>(std::move(terms));
    const Eigen::Index rank = n;
    EvalFn eval = [shared, rank](const SpacetimePoint& p, Components& out) {
      const Vec4 q = p.as_vec4();
      for (auto& m : out) m.setZero(rank, rank);
      for (const auto& t : *shared) out[static_cast<std::size_t>(t.component)] += t.coefficient(q) * t.matrix;
    };
    DerivFn deriv = [shared, rank](const SpacetimePoint& p, ComponentDerivatives& out) {
      const Vec4 q = p.as_vec4();
      for (auto& c : out)
        for (auto& m : c) m.setZero(rank, rank);
      for (const auto& t : *shared) {
        if (t.kind == TermKind::Constant) continue;
        const Vec4 g = t.gradient(q);
        for (int nu = 0; nu < 4; ++nu)
          out[static_cast<std::size_t>(nu)][static_cast<std::size_t>(t.component)] += g(nu) * t.matrix;
      }
    };
    return ConnectionField(n, std::move(eval), std::move(deriv), describe(n, *shared), is_static);
  }

  static ConnectionField from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("connection description must be an object");
    for (const auto& [key, _] : j.items()) {
      if (key != "n" && key != "terms") throw ConfigError("unknown connection key '" + key + "'");
    }
    if (!j.contains("n") || !j["n"].is_number_integer() || j["n"].get<int>() < 1) {
      throw ConfigError("connection.n must be a positive integer");
    }
    const int n = j["n"].get<int>();
    std::vector<ConnectionTerm> terms;
    for (const auto& jt : j.value("terms", Json::array())) {
      ConnectionTerm t;
      const std::string kind = jt.at("kind").get<std::string>();
      const Json params = jt.value("params", Json::object());
      t.matrix = matrix_from_json(jt.at("matrix"), n);
      t.component = params.value("component", 0);
      if (kind == "constant") {
        t.kind = TermKind::Constant;
      } else if (kind == "poly") {
        t.kind = TermKind::Poly;
        for (const auto& jm : params.at("monomials")) {
          Monomial m;
          m.coeff = jm.at("coeff").get<double>();
          const auto& pw = jm.at("powers");
          if (!pw.is_array() || pw.size() != 4) throw ConfigError("monomial powers must have 4 entries");
          for (std::size_t k = 0; k < 4; ++k) m.powers[k] = pw[k].get<int>();
          t.monomials.push_back(m);
        }
      } else if (kind == "bump") {
        t.kind = TermKind::Bump;
        t.center = vec4_from_json(params.at("center"));
        t.width = params.at("width").get<double>();
      } else {
        throw ConfigError("unknown connection term kind '" + kind + "' (allowed: constant, poly, bump)");
      }
      terms.push_back(std::move(t));
    }
    try {
      return from_terms(n, std::move(terms));
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("connection: ") + e.what());
    }
  }

  [[nodiscard]] int rank() const { return n_; }
  [[nodiscard]] bool is_static() const { return static_; }
  [[nodiscard]] bool has_derivative() const { return static_cast<bool>(deriv_); }
  [[nodiscard]] const std::optional<Json>& description() const { return description_; }

  void evaluate(const SpacetimePoint& p, Components& out) const { eval_(p, out); }

  [[nodiscard]] Components operator()(const SpacetimePoint& p) const {
    Components out = zero_components(n_);
    eval_(p, out);
    return out;
  }

  void derivative(const SpacetimePoint& p, ComponentDerivatives& out) const {
    if (!deriv_) throw InvalidArgument("connection has no analytic derivative");
    deriv_(p, out);
  }

  [[nodiscard]] ComponentDerivatives derivative(const SpacetimePoint& p) const {
    ComponentDerivatives out = zero_derivatives(n_);
    derivative(p, out);
    return out;
  }

  [[nodiscard]] Json to_json() const {
    if (!description_) throw InvalidArgument("connection has no serializable description");
    return *description_;
  }

 private:
  static Json describe(int n, const std::vector<ConnectionTerm>& terms) {
    Json jt = Json::array();
    for (const auto& t : terms) {
      Json params{{"component", t.component}};
      if (t.kind == TermKind::Poly) {
        Json ms = Json::array();
        for (const auto& m : t.monomials)
          ms.push_back({{"coeff", m.coeff}, {"powers", Json::array({m.powers[0], m.powers[1], m.powers[2], m.powers[3]})}});
        params["monomials"] = ms;
      } else if (t.kind == TermKind::Bump) {
        params["center"] = vec4_to_json(t.center);
        params["width"] = t.width;
      }
      jt.push_back({{"kind", to_string(t.kind)}, {"matrix", matrix_to_json(t.matrix)}, {"params", params}});
    }
    return Json{{"n", n}, {"terms", jt}};
  }

  int n_;
  EvalFn eval_;
  DerivFn deriv_;
  std::optional<Json> description_;
  bool static_;
};

/// Σ_μ A_μ(p) v^μ.
inline CMatrix pairing(const ConnectionField& a, const SpacetimePoint& p, const Vec4& v) {
  const Components c = a(p);
  return v(0) * c[0] + v(1) * c[1] + v(2) * c[2] + v(3) * c[3];
}

/// Random smooth connection with ‖A_μ(p)‖_F ≤ bound for |p^ν| ≤ 1.5: a
/// constant part, a linear-plus-quadratic polynomial part and a Gaussian bump
/// per component.
template <class Rng>
ConnectionField random_connection(int n, Rng& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> index(0, 3);
  std::vector<ConnectionTerm> terms;
  for (int mu = 0; mu < 4; ++mu) {
    ConnectionTerm c;
    c.kind = TermKind::Constant;
    c.component = mu;
    c.matrix = random_skew_hermitian(n, rng, 0.35 * bound);
    terms.push_back(c);

    // |a·p^ν + b·p^ν p^λ| ≤ 1.5|a| + 2.25|b| ≤ 1 with |a| ≤ 0.4, |b| ≤ 0.18.
    ConnectionTerm poly;
    poly.kind = TermKind::Poly;
    poly.component = mu;
    poly.matrix = random_skew_hermitian(n, rng, 0.3 * bound);
    Monomial lin;
    lin.coeff = 0.4 * unit(rng);
    lin.powers[static_cast<std::size_t>(index(rng))] += 1;
    Monomial quad;
    quad.coeff = 0.18 * unit(rng);
    quad.powers[static_cast<std::size_t>(index(rng))] += 1;
    quad.powers[static_cast<std::size_t>(index(rng))] += 1;
    poly.monomials = {lin, quad};
    terms.push_back(poly);

    ConnectionTerm bump;
    bump.kind = TermKind::Bump;
    bump.component = mu;
    bump.matrix = random_skew_hermitian(n, rng, 0.35 * bound);
    bump.center = Vec4(0.5 + 0.3 * unit(rng), 0.3 * unit(rng), 0.3 * unit(rng), 0.3 * unit(rng));
    bump.width = 0.4 + 0.2 * (unit(rng) + 1.0);
    terms.push_back(bump);
  }
  return ConnectionField::from_terms(n, std::move(terms));
}

/// Constant connection with the given components.
inline ConnectionField constant_connection(const Components& c) {
  const int n = static_cast<int>(c[0].rows());
  std::vector<ConnectionTerm> terms;
  for (int mu = 0; mu < 4; ++mu) {
    if (c[static_cast<std::size_t>(mu)].norm() == 0.0) continue;
    ConnectionTerm t;
    t.kind = TermKind::Constant;
    t.component = mu;
    t.matrix = c[static_cast<std::size_t>(mu)];
    terms.push_back(t);
  }
  return ConnectionField::from_terms(n, std::move(terms));
}

}  // namespace lightray
