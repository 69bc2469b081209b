#include <random>

#include <gtest/gtest.h>

#include "lightray/broken_ray.hpp"

using namespace lightray;

namespace {

const ObservationSet kU(0.15);
const SpacetimePoint kBumpCentre(0.5, 0.42, 0.0, 0.0);
constexpr double kBumpRadius = 0.25;

TripleSample worked_triple() {
  return triple_from_json(Json{{"x", {0.1, 0.0, 0.0, 0.0}}, {"y", {0.4, 0.3, 0.0, 0.0}}, {"z", {0.8, -0.1, 0.0, 0.0}}});
}

struct GaugePair {
  ConnectionField a;
  GaugeMap u;
  ConnectionField b;
};

GaugePair gauge_pair(std::uint64_t seed, int n = 2) {
  std::mt19937_64 rng(seed);
  auto a = random_connection(n, rng);
  auto u = make_bump_gauge(n, random_skew_hermitian(n, rng, 1.0), kBumpCentre, kBumpRadius, kU);
  auto b = gauge_transform_connection(a, u);
  return {a, u, b};
}

std::vector<SpacetimePoint> base_points_for(const SpacetimePoint& y, int count, std::uint64_t seed) {
  std::vector<SpacetimePoint> xs;
  for (const auto& t : sample_triples(kU, y, count, seed)) xs.push_back(t.x);
  return xs;
}

}  // namespace

TEST(BrokenTransform, ZeroConnectionIsIdentity) {
  const auto d = broken_transform(ConnectionField::zero(2), worked_triple());
  EXPECT_EQ((d.S - CMatrix::Identity(2, 2)).norm(), 0.0);
}

TEST(BrokenTransform, ScalarExponentialPerLeg) {
  Components c = zero_components(1);
  c[0](0, 0) = Complex(0.0, 0.7);
  const auto t = worked_triple();
  const auto d = broken_transform(constant_connection(c), t, 0, kU);
  const Complex expect = std::exp(Complex(0.0, -0.7 * (0.3 + 0.4)));
  EXPECT_LT(std::abs(d.S(0, 0) - expect), 1e-13);
}

TEST(BrokenTransform, ReverseIsInverse) {
  std::mt19937_64 rng(1);
  const auto a = random_connection(3, rng);
  for (const auto& t : sample_triples(kU, SpacetimePoint(0.5, 0.3, 0.1, 0.0), 10, 2)) {
    const auto d = broken_transform(a, t);
    EXPECT_LT((broken_transform_reverse(a, t) * d.S - CMatrix::Identity(3, 3)).norm(), 1e-7);
    EXPECT_LT(d.unitarity_defect, 1e-9);
  }
}

TEST(BrokenTransform, RejectsInvalidTriples) {
  auto t = worked_triple();
  t.y = SpacetimePoint(0.4, 0.2, 0, 0);
  EXPECT_THROW(broken_transform(ConnectionField::zero(1), t), InvalidArgument);
  const auto inside = triple_from_json(Json{{"x", {0.1, 0, 0, 0}}, {"y", {0.15, 0.05, 0, 0}}, {"z", {0.2, 0, 0, 0}}});
  EXPECT_NO_THROW(broken_transform(ConnectionField::zero(1), inside));
  EXPECT_THROW(broken_transform(ConnectionField::zero(1), inside, 0, kU), InvalidArgument);
}

// Property: S is gauge invariant under gauges trivial on the observation set.
TEST(BrokenTransform, PropertyGaugeInvariance) {
  const auto g = gauge_pair(3);
  const auto ys = sample_diamond_points(kU, 10, 4, kBumpCentre, kBumpRadius);
  int checked = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    for (const auto& t : sample_triples(kU, ys[i], 3, 50 + i)) {
      ++checked;
      EXPECT_LT((broken_transform(g.a, t).S - broken_transform(g.b, t).S).norm(), 1e-7);
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Reconstruction, EqualConnectionsGiveIdentity) {
  std::mt19937_64 rng(5);
  const auto a = random_connection(2, rng);
  const SpacetimePoint y(0.45, 0.3, 0.1, 0.0);
  const auto xs = base_points_for(y, 4, 6);
  ASSERT_FALSE(xs.empty());
  const auto r = reconstruct_gauge_at(a, a, y, xs);
  EXPECT_LT((r.u_rec - CMatrix::Identity(2, 2)).norm(), 1e-10);
  EXPECT_LT(r.x_independence_defect, 1e-10);
}

TEST(Reconstruction, RecoversSyntheticGauge) {
  const auto g = gauge_pair(7);
  const auto ys = sample_diamond_points(kU, 5, 8, kBumpCentre, kBumpRadius);
  ASSERT_EQ(ys.size(), 5u);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const auto xs = base_points_for(ys[i], 6, 100 + i);
    ASSERT_GE(xs.size(), 2u);
    const auto r = reconstruct_gauge_at(g.a, g.b, ys[i], xs);
    EXPECT_LT((r.u_rec - g.u(ys[i])).norm(), 1e-6);
    EXPECT_LT(r.x_independence_defect, 1e-7);
  }
}

TEST(Reconstruction, NoUsableBasePointThrows) {
  const std::vector<SpacetimePoint> xs{SpacetimePoint(0.5, 0, 0, 0)};
  EXPECT_THROW(reconstruct_gauge_at(ConnectionField::zero(1), ConnectionField::zero(1), SpacetimePoint(0.6, 0.5, 0, 0),
                                    xs),
               InvalidArgument);
}

TEST(PairingMatch, IdentityGaugeIsZero) {
  std::mt19937_64 rng(9);
  const auto a = random_connection(2, rng);
  const SampledGauge ident = [](const SpacetimePoint&) { return CMatrix::Identity(2, 2); };
  const auto seg = LightlikeSegment::from_ray(SpacetimePoint(0.1, 0, 0, 0), Vec3(1, 0, 0), 0.5);
  EXPECT_LT(verify_pairing_match(a, a, ident, seg, 1e-3), 1e-14);
}

TEST(PairingMatch, SyntheticPairIsSecondOrderInStep) {
  const auto g = gauge_pair(10);
  const auto seg = LightlikeSegment::from_ray(SpacetimePoint(0.1, 0, 0, 0), Vec3(1, 0, 0), 0.6);
  const auto field = reconstructed_gauge_along(g.a, g.b, seg, 600);
  const double coarse = verify_pairing_match(g.a, g.b, field, seg, 2e-3);
  const double fine = verify_pairing_match(g.a, g.b, field, seg, 1e-3);
  EXPECT_LT(verify_pairing_match(g.a, g.b, field, seg, 1e-4), 1e-4);
  EXPECT_GT(coarse / fine, 3.5);
  EXPECT_LT(coarse / fine, 4.5);
}

TEST(RecoverConnection, TetrahedralDirections) {
  std::mt19937_64 rng(11);
  const auto a = random_connection(3, rng);
  const SpacetimePoint y(0.4, 0.3, -0.1, 0.2);
  std::vector<DirectionalPairing> ps;
  for (const auto& th : tetrahedral_directions()) {
    const Vec4 v(1.0, th(0), th(1), th(2));
    ps.push_back({v, pairing(a, y, v)});
  }
  const Components c = recover_connection_at(y, ps);
  const Components truth = a(y);
  for (std::size_t mu = 0; mu < 4; ++mu) EXPECT_LT((c[mu] - truth[mu]).norm(), 1e-10);
}

TEST(RecoverConnection, ZeroValuesAndDegenerateSpans) {
  std::vector<DirectionalPairing> ps;
  for (const auto& th : tetrahedral_directions()) ps.push_back({Vec4(1.0, th(0), th(1), th(2)), CMatrix::Zero(2, 2)});
  for (const auto& m : recover_connection_at(SpacetimePoint(), ps)) EXPECT_EQ(m.norm(), 0.0);
  ps.pop_back();
  EXPECT_THROW(recover_connection_at(SpacetimePoint(), ps), DegenerateSpan);
  std::vector<DirectionalPairing> same(5, {Vec4(1, 1, 0, 0), CMatrix::Zero(1, 1)});
  EXPECT_THROW(recover_connection_at(SpacetimePoint(), same), DegenerateSpan);
}

TEST(DiamondPoints, InsideDiamondAndBall) {
  const auto ys = sample_diamond_points(kU, 30, 12, kBumpCentre, kBumpRadius);
  ASSERT_EQ(ys.size(), 30u);
  for (const auto& y : ys) {
    EXPECT_TRUE(in_diamond(y, kU));
    EXPECT_LT(euclidean_distance(y, kBumpCentre), kBumpRadius);
  }
}

TEST(EndToEnd, IdentityGaugeHasZeroDefects) {
  std::mt19937_64 rng(13);
  const auto a = random_connection(2, rng);
  const auto ys = sample_diamond_points(kU, 4, 14);
  EndToEndOptions opt;
  opt.s_triples = 20;
  const auto rep = end_to_end_synthetic(a, GaugeMap::identity(2), kU, ys, opt);
  EXPECT_LT(rep.max_s_difference, 1e-14);
  for (const auto& r : rep.rows) {
    EXPECT_LT(r.x_indep_defect, 1e-10);
    EXPECT_LT(r.u_error, 1e-10);
    EXPECT_LT(r.gauge_residual, 1e-6);
  }
}

TEST(EndToEnd, BumpGaugeRecovered) {
  const auto g = gauge_pair(15);
  const auto ys = sample_diamond_points(kU, 8, 16, kBumpCentre, kBumpRadius);
  EndToEndOptions opt;
  opt.s_triples = 40;
  opt.fd_step = 1e-4;
  const auto rep = end_to_end_synthetic(g.a, g.u, kU, ys, opt);
  ASSERT_EQ(rep.rows.size(), ys.size());
  EXPECT_EQ(rep.triples_checked, 40);
  EXPECT_LT(rep.max_s_difference, 1e-7);
  EXPECT_LT(rep.max_inverse_residual, 1e-7);
  for (const auto& r : rep.rows) {
    EXPECT_LT(r.u_error, 1e-6);
    EXPECT_LT(r.x_indep_defect, 1e-7);
    EXPECT_LT(r.gauge_residual, 1e-4);
  }
  const CsvTable t = rep.table();
  EXPECT_EQ(t.header, (std::vector<std::string>{"y_t", "y_x1", "y_x2", "y_x3", "x_indep_defect", "gauge_residual",
                                                 "unitarity_defect"}));
  EXPECT_EQ(t.rows.size(), ys.size());
}

TEST(EndToEnd, DeterministicAcrossWorkerCounts) {
  const auto g = gauge_pair(17);
  const auto ys = sample_diamond_points(kU, 4, 18, kBumpCentre, kBumpRadius);
  EndToEndOptions one, many;
  one.s_triples = many.s_triples = 12;
  one.gauge_residual = many.gauge_residual = false;
  many.workers = 3;
  EXPECT_EQ(end_to_end_synthetic(g.a, g.u, kU, ys, one).table().str(),
            end_to_end_synthetic(g.a, g.u, kU, ys, many).table().str());
}
