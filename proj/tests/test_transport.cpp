#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lightray/connection.hpp"
#include "lightray/gauge.hpp"
#include "lightray/transport.hpp"
#include "oracles/expm_taylor.hpp"

using namespace lightray;

namespace {

CMatrix scalar(Complex z) { return CMatrix::Constant(1, 1, z); }

ConnectionField scalar_time_connection(double alpha) {
  Components c = zero_components(1);
  c[0] = scalar(Complex(0.0, alpha));
  return constant_connection(c);
}

LightlikeSegment segment(double t0, const Vec3& x0, const Vec3& dir, double len) {
  return LightlikeSegment::from_ray(SpacetimePoint(t0, x0), dir, len);
}

/// u = exp(iχ) with χ = sin(t) + x1² − 0.5·x2·x3.
GaugeMap abelian_gauge(bool with_differential) {
  auto chi = [](const SpacetimePoint& p) { return std::sin(p.t) + p.x(0) * p.x(0) - 0.5 * p.x(1) * p.x(2); };
  auto grad = [](const SpacetimePoint& p) {
    return Vec4(std::cos(p.t), 2.0 * p.x(0), -0.5 * p.x(2), -0.5 * p.x(1));
  };
  GaugeMap::EvalFn eval = [chi](const SpacetimePoint& p) { return scalar(std::exp(kI * chi(p))); };
  GaugeMap::DiffFn diff;
  if (with_differential) {
    diff = [chi, grad](const SpacetimePoint& p) {
      const Vec4 g = grad(p);
      GaugeDifferential d;
      for (int mu = 0; mu < 4; ++mu) d[static_cast<std::size_t>(mu)] = scalar(kI * g(mu) * std::exp(kI * chi(p)));
      return d;
    };
  }
  return GaugeMap(1, eval, diff);
}

}  // namespace

TEST(Pairing, ZeroConnection) {
  const auto a = ConnectionField::zero(3);
  EXPECT_EQ(pairing(a, SpacetimePoint(0.3, 0.1, 0.2, 0.3), Vec4(1, 0.6, 0.8, 0)).norm(), 0.0);
}

TEST(Pairing, OnlyTimeComponentContributes) {
  const auto a = scalar_time_connection(0.5);
  const CMatrix p = pairing(a, SpacetimePoint(0.2, 0.4, 0, 0), Vec4(1, 0, 0.6, 0.8));
  EXPECT_NEAR(std::abs(p(0, 0) - Complex(0, 0.5)), 0.0, 1e-16);
}

TEST(Pairing, LinearInDirection) {
  std::mt19937_64 rng(1);
  const auto a = random_connection(3, rng);
  const SpacetimePoint p(0.4, 0.2, -0.3, 0.1);
  const Vec4 v(1.0, 0.0, 0.6, -0.8);
  EXPECT_LT((pairing(a, p, 2.0 * v) - 2.0 * pairing(a, p, v)).norm(), 1e-15);
}

TEST(RandomConnection, SkewHermitianAndBounded) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> box(-1.5, 1.5);
  for (int n = 1; n <= 4; ++n) {
    const auto a = random_connection(n, rng, 1.0);
    for (int k = 0; k < 50; ++k) {
      const Components c = a(SpacetimePoint(box(rng), box(rng), box(rng), box(rng)));
      for (const auto& m : c) {
        EXPECT_LT(skew_hermitian_defect(m), 1e-14);
        EXPECT_LE(m.norm(), 1.0 + 1e-12);
      }
    }
  }
}

TEST(ConnectionJson, RoundTripAndErrors) {
  std::mt19937_64 rng(3);
  const auto a = random_connection(2, rng);
  const auto b = ConnectionField::from_json(a.to_json());
  const SpacetimePoint p(0.3, 0.1, 0.2, -0.4);
  for (std::size_t mu = 0; mu < 4; ++mu) EXPECT_LT((a(p)[mu] - b(p)[mu]).norm(), 1e-15);
  EXPECT_THROW(ConnectionField::from_json(Json{{"n", 0}}), ConfigError);
  EXPECT_THROW(ConnectionField::from_json(Json{{"n", 1}, {"extra", 1}}), ConfigError);
  EXPECT_THROW(ConnectionField::from_json(Json::parse(R"({"n": 1, "terms": [{"kind": "constant", "matrix": [[1, 0]]}]})")),
               ConfigError);
  EXPECT_THROW(ConnectionField::from_json(Json::parse(R"({"n": 1, "terms": [{"kind": "wavy", "matrix": [[0, 1]]}]})")),
               ConfigError);
}

TEST(ConnectionDerivative, MatchesFiniteDifference) {
  std::mt19937_64 rng(4);
  const auto a = random_connection(2, rng);
  const SpacetimePoint p(0.45, 0.2, -0.1, 0.3);
  const auto d = a.derivative(p);
  const double h = 1e-5;
  for (int nu = 0; nu < 4; ++nu) {
    Vec4 e = Vec4::Zero();
    e(nu) = h;
    const Components up = a(p.shifted(e)), dn = a(p.shifted(-e));
    for (std::size_t mu = 0; mu < 4; ++mu)
      EXPECT_LT((d[static_cast<std::size_t>(nu)][mu] - (up[mu] - dn[mu]) / (2 * h)).norm(), 1e-8);
  }
}

TEST(ParallelTransport, ZeroConnectionIsIdentity) {
  const auto r = parallel_transport(ConnectionField::zero(2), segment(0, Vec3::Zero(), Vec3::UnitX(), 1.0), 100);
  EXPECT_EQ((r.matrix - CMatrix::Identity(2, 2)).norm(), 0.0);
  EXPECT_EQ(r.unitarity_defect, 0.0);
}

TEST(ParallelTransport, ScalarExponential) {
  const auto seg = segment(0.1, Vec3::Zero(), Vec3::UnitY(), 0.3);
  const auto r = parallel_transport(scalar_time_connection(0.5), seg, 300);
  EXPECT_LT(std::abs(r.matrix(0, 0) - std::exp(Complex(0, -0.15))), 1e-13);
}

TEST(ParallelTransport, ConstantMatrixAgainstTaylorExponential) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    Components c;
    for (auto& m : c) m = random_skew_hermitian(2, rng, 0.8);
    const auto a = constant_connection(c);
    const auto seg = random_segment_in_box(rng, 2.0, 1.5);
    const CMatrix expect = oracle::expm_taylor(-seg.length * pairing(a, seg.start, seg.tangent()));
    const CMatrix w = parallel_transport(a, seg, default_transport_steps(seg.length)).matrix;
    EXPECT_LT((w - expect).norm(), 1e-10);
  }
}

TEST(ParallelTransport, ReverseIsInverse) {
  std::mt19937_64 rng(6);
  const auto a = random_connection(3, rng);
  const auto seg = random_segment_in_box(rng, 2.0, 1.5);
  const CMatrix w = parallel_transport(a, seg, 2000).matrix;
  const CMatrix back = parallel_transport_reverse(a, seg, 2000);
  EXPECT_LT((back * w - CMatrix::Identity(3, 3)).norm(), 1e-10);
}

TEST(ParallelTransport, ProjectionRestoresUnitarity) {
  std::mt19937_64 rng(7);
  const auto a = random_connection(2, rng, 1.0);
  const auto seg = segment(-1.0, Vec3(-0.5, 0, 0), Vec3(0.6, 0.8, 0), 2.0);
  const auto coarse = parallel_transport(a, seg, 4, true);
  EXPECT_GT(coarse.unitarity_defect, 1e-6);
  EXPECT_LT(unitarity_defect(coarse.matrix), 1e-13);
}

TEST(ParallelTransport, RejectsNonPositiveSteps) {
  EXPECT_THROW(parallel_transport(ConnectionField::zero(1), segment(0, Vec3::Zero(), Vec3::UnitX(), 1.0), 0),
               InvalidArgument);
}

// Property: transport is unitary to integration accuracy for smooth bounded
// random connections in every rank up to 4.
TEST(ParallelTransport, PropertyUnitarity) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 40; ++k) {
    const int n = 1 + k % 4;
    const auto a = random_connection(n, rng, 1.0);
    const auto seg = random_segment_in_box(rng, 2.0, 1.5);
    EXPECT_LT(parallel_transport(a, seg, default_transport_steps(seg.length)).unitarity_defect, 1e-9);
  }
}

// Property: composing transports along consecutive pieces of one line equals
// transport along the whole line.
TEST(ParallelTransport, PropertyComposition) {
  std::mt19937_64 rng(9);
  const auto a = random_connection(2, rng);
  const auto seg = segment(-0.5, Vec3(-0.2, 0, 0.1), Vec3(0.6, 0.8, 0.0), 1.6);
  const auto first = LightlikeSegment::from_ray(seg.start, seg.direction, 0.7);
  const auto second = LightlikeSegment::from_ray(seg.point_at(0.7), seg.direction, 0.9);
  const CMatrix whole = parallel_transport(a, seg, 1600).matrix;
  const CMatrix parts = parallel_transport(a, second, 900).matrix * parallel_transport(a, first, 700).matrix;
  EXPECT_LT((whole - parts).norm(), 1e-11);
}

TEST(RandomSegment, StaysInBox) {
  std::mt19937_64 rng(10);
  for (int k = 0; k < 500; ++k) {
    const auto s = random_segment_in_box(rng, 2.0, 1.5);
    EXPECT_GT(s.length, 0.0);
    EXPECT_LE(s.length, 2.0);
    EXPECT_LE(s.start.as_vec4().cwiseAbs().maxCoeff(), 1.5 + 1e-12);
    EXPECT_LE(s.end.as_vec4().cwiseAbs().maxCoeff(), 1.5 + 1e-12);
  }
  EXPECT_THROW(random_segment_in_box(rng, 4.0, 1.5), InvalidArgument);
}

TEST(TransportOrder, ConstantConnectionIsFourthOrder) {
  std::mt19937_64 rng(11);
  Components c;
  for (auto& m : c) m = random_skew_hermitian(2, rng, 1.0);
  const auto a = constant_connection(c);
  const auto seg = segment(-1.0, Vec3::Zero(), Vec3(0, 0.6, 0.8), 2.0);
  const CMatrix exact = oracle::expm_taylor(-seg.length * pairing(a, seg.start, seg.tangent()));
  const std::array<int, 4> steps{8, 16, 32, 64};
  const double order = observed_transport_order(a, seg, exact, steps);
  EXPECT_GE(order, 3.8);
  EXPECT_LE(order, 4.2);
}

TEST(FundamentalSolution, IdentityAndInverse) {
  std::mt19937_64 rng(12);
  const auto a = random_connection(2, rng);
  const auto seg = segment(0.0, Vec3(0.1, 0, 0), Vec3(0, 1, 0), 1.0);
  EXPECT_EQ((fundamental_solution(a, seg, 0.4, 0.4, 100) - CMatrix::Identity(2, 2)).norm(), 0.0);
  const CMatrix ts = fundamental_solution(a, seg, 0.8, 0.2, 1200);
  const CMatrix st = fundamental_solution(a, seg, 0.2, 0.8, 1200);
  EXPECT_LT((ts * st - CMatrix::Identity(2, 2)).norm(), 1e-11);
}

TEST(FundamentalSolution, DerivativeInStartParameter) {
  std::mt19937_64 rng(13);
  const auto a = random_connection(2, rng);
  const auto seg = segment(0.0, Vec3(0.1, 0, 0), Vec3(0, 1, 0), 1.0);
  const double t = 0.9, s = 0.3, h = 1e-5;
  const int steps = 4000;
  const CMatrix fd = (fundamental_solution(a, seg, t, s + h, steps) - fundamental_solution(a, seg, t, s - h, steps)) /
                     (2.0 * h);
  const CMatrix expect = fundamental_solution(a, seg, t, s, steps) * pairing(a, seg.point_at(s), seg.tangent());
  EXPECT_LT((fd - expect).norm(), 1e-8);
}

TEST(GaugeTransform, IdentityGaugeIsExact) {
  std::mt19937_64 rng(14);
  const auto a = random_connection(2, rng);
  const auto b = gauge_transform_connection(a, GaugeMap::identity(2));
  const SpacetimePoint p(0.3, 0.2, 0.1, 0.0);
  for (std::size_t mu = 0; mu < 4; ++mu) EXPECT_EQ((a(p)[mu] - b(p)[mu]).norm(), 0.0);
}

TEST(GaugeTransform, PureGaugeIsSkewHermitian) {
  std::mt19937_64 rng(15);
  const ObservationSet u(0.15);
  const auto g = make_bump_gauge(3, random_skew_hermitian(3, rng, 1.2), SpacetimePoint(0.5, 0.5, 0, 0), 0.3, u);
  const auto b = gauge_transform_connection(ConnectionField::zero(3), g);
  for (int k = 0; k < 20; ++k) {
    const SpacetimePoint p(0.5 + 0.01 * k, 0.5 - 0.01 * k, 0.05, 0.0);
    for (const auto& m : b(p)) EXPECT_LT(skew_hermitian_defect(m), 1e-10);
  }
}

TEST(GaugeTransform, AbelianClosedForm) {
  const auto a = scalar_time_connection(0.3);
  for (bool analytic : {true, false}) {
    const auto b = gauge_transform_connection(a, abelian_gauge(analytic), 1e-5);
    const SpacetimePoint p(0.4, 0.3, -0.2, 0.5);
    const Vec4 grad(std::cos(p.t), 2.0 * p.x(0), -0.5 * p.x(2), -0.5 * p.x(1));
    const Components c = b(p);
    for (int mu = 0; mu < 4; ++mu) {
      const Complex expect = (mu == 0 ? Complex(0, 0.3) : Complex(0, 0)) + kI * grad(mu);
      EXPECT_LT(std::abs(c[static_cast<std::size_t>(mu)](0, 0) - expect), analytic ? 1e-14 : 1e-9);
    }
  }
}

TEST(GaugeTransform, NonUnitaryGaugeIsRejected) {
  const GaugeMap bad(1, [](const SpacetimePoint&) { return CMatrix::Constant(1, 1, 2.0); });
  const auto b = gauge_transform_connection(ConnectionField::zero(1), bad);
  EXPECT_THROW(b(SpacetimePoint(0, 0, 0, 0)), InvalidGauge);
}

TEST(BumpGauge, SupportCentreAndUnitarity) {
  std::mt19937_64 rng(16);
  const ObservationSet u(0.15);
  const CMatrix x = random_skew_hermitian(2, rng, 1.0);
  const SpacetimePoint c(0.5, 0.5, 0, 0);
  const auto g = make_bump_gauge(2, x, c, 0.3, u);
  EXPECT_EQ((g(SpacetimePoint(0.5, 0.9, 0, 0)) - CMatrix::Identity(2, 2)).norm(), 0.0);
  EXPECT_EQ((g(SpacetimePoint(0.5, 0.05, 0, 0)) - CMatrix::Identity(2, 2)).norm(), 0.0);
  EXPECT_LT((g(c) - oracle::expm_taylor(x)).norm(), 1e-13);
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  for (int k = 0; k < 100; ++k) {
    const CMatrix m = g(c.shifted(Vec4(d(rng), d(rng), d(rng), d(rng))));
    EXPECT_LT(unitarity_defect(m), 1e-12);
  }
}

TEST(BumpGauge, RejectsSupportMeetingObservationSet) {
  const ObservationSet u(0.15);
  EXPECT_THROW(make_bump_gauge(1, scalar(Complex(0, 1)), SpacetimePoint(0.5, 0.3, 0, 0), 0.2, u), InvalidArgument);
}

TEST(BumpGauge, AnalyticDifferentialMatchesFiniteDifference) {
  std::mt19937_64 rng(17);
  const ObservationSet u(0.15);
  const auto g = make_bump_gauge(2, random_skew_hermitian(2, rng, 1.5), SpacetimePoint(0.5, 0.5, 0, 0), 0.3, u);
  const SpacetimePoint p(0.55, 0.42, 0.05, -0.1);
  const auto an = g.differential(p), fd = g.differential_fd(p, 1e-5);
  for (std::size_t mu = 0; mu < 4; ++mu) EXPECT_LT((an[mu] - fd[mu]).norm(), 1e-8);
}

TEST(GaugeJson, RoundTripAndSupportCheck) {
  std::mt19937_64 rng(18);
  const ObservationSet u(0.15);
  const auto g = make_bump_gauge(2, random_skew_hermitian(2, rng), SpacetimePoint(0.5, 0.5, 0, 0), 0.3, u);
  const auto h = gauge_from_json(g.to_json(), u);
  const SpacetimePoint p(0.5, 0.45, 0.1, 0);
  EXPECT_LT((g(p) - h(p)).norm(), 1e-15);
  Json bad = g.to_json();
  bad["terms"][0]["params"]["center"] = {0.5, 0.2, 0, 0};
  EXPECT_THROW(gauge_from_json(bad, u), ConfigError);
}

TEST(CovarianceCheck, IdentityGaugeIsZero) {
  std::mt19937_64 rng(19);
  const auto a = random_connection(2, rng);
  const auto seg = random_segment_in_box(rng, 2.0, 1.5);
  EXPECT_LT(transport_gauge_covariance_check(a, GaugeMap::identity(2), seg, 500), 1e-13);
}

TEST(CovarianceCheck, RandomGaugeSmallResidual) {
  std::mt19937_64 rng(20);
  const ObservationSet u(0.15);
  const auto a = random_connection(2, rng);
  const auto g = make_bump_gauge(2, random_skew_hermitian(2, rng, 1.0), SpacetimePoint(0.5, 0.5, 0, 0), 0.3, u);
  const auto seg = segment(0.1, Vec3(0.3, -0.1, 0), Vec3(0.6, 0.8, 0), 0.8);
  EXPECT_LT(transport_gauge_covariance_check(a, g, seg, 10000), 1e-7);
}

// A globally smooth gauge keeps RK4 in its asymptotic regime at coarse steps.
TEST(CovarianceCheck, FourthOrderInStep) {
  std::mt19937_64 rng(21);
  const auto a = random_connection(2, rng);
  const CMatrix x = random_skew_hermitian(2, rng, 1.0);
  const GaugeMap g(2, [x](const SpacetimePoint& p) {
    return exp_skew_hermitian((std::sin(p.t) + p.x(0) * p.x(0) - 0.5 * p.x(1) * p.x(2)) * x);
  });
  const auto seg = segment(0.1, Vec3(0.3, -0.1, 0), Vec3(0.6, 0.8, 0), 0.8);
  const double e5 = transport_gauge_covariance_check(a, g, seg, 5);
  const double e10 = transport_gauge_covariance_check(a, g, seg, 10);
  const double e20 = transport_gauge_covariance_check(a, g, seg, 20);
  EXPECT_GT(e5 / e10, 14.0);
  EXPECT_LT(e5 / e10, 18.0);
  EXPECT_GT(e10 / e20, 14.0);
  EXPECT_LT(e10 / e20, 18.0);
}
