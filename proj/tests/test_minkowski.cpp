#include <random>

#include <gtest/gtest.h>

#include "lightray/minkowski.hpp"

using namespace lightray;

namespace {

SpacetimePoint pt(double t, double x1, double x2 = 0.0, double x3 = 0.0) { return {t, x1, x2, x3}; }

}  // namespace

TEST(CausalClassify, TimeAxisIsStrictlyBefore) {
  EXPECT_EQ(causal_classify(pt(0, 0), pt(1, 0)), CausalClass::StrictlyBefore);
  EXPECT_EQ(causal_classify(pt(1, 0), pt(0, 0)), CausalClass::StrictlyAfter);
}

TEST(CausalClassify, EqualTimeIsSpacelike) {
  EXPECT_EQ(causal_classify(pt(0, 0), pt(0, 1)), CausalClass::SpacelikeSeparated);
}

TEST(CausalClassify, LightlikeBoundaryIsCausal) {
  EXPECT_EQ(causal_classify(pt(0, 0), pt(1, 1)), CausalClass::StrictlyBefore);
  EXPECT_EQ(causal_classify(pt(0, 0), pt(0, 0)), CausalClass::Coincident);
}

TEST(CausalClassify, NegativeToleranceRejected) {
  EXPECT_THROW(causal_classify(pt(0, 0), pt(1, 0), -1.0), InvalidArgument);
}

TEST(LightlikeConnects, UnitRay) {
  const auto s = lightlike_connects(pt(0, 0), pt(1, 1));
  ASSERT_TRUE(s);
  EXPECT_NEAR((s->direction - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(s->length, 1.0);
}

TEST(LightlikeConnects, TimelikeHasNone) { EXPECT_FALSE(lightlike_connects(pt(0, 0), pt(1, 0))); }

TEST(LightlikeConnects, ShortRay) {
  const auto s = lightlike_connects(pt(0.1, 0), pt(0.4, 0.3));
  ASSERT_TRUE(s);
  EXPECT_NEAR((s->direction - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(s->length, 0.3, 1e-15);
}

TEST(LightlikeConnects, ReversedArgumentsGiveFuturePointingSegment) {
  const auto s = lightlike_connects(pt(0.4, 0.3), pt(0.1, 0));
  ASSERT_TRUE(s);
  EXPECT_DOUBLE_EQ(s->start.t, 0.1);
  EXPECT_NEAR((s->direction - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
}

TEST(ObservationSet, Membership) {
  const ObservationSet u(0.1);
  EXPECT_TRUE(in_observation_set(pt(0.5, 0), u));
  EXPECT_FALSE(in_observation_set(pt(0.5, 0.1), u));
  EXPECT_FALSE(in_observation_set(pt(1.5, 0), u));
  EXPECT_THROW(ObservationSet(-0.1), InvalidArgument);
}

TEST(SPlus, WorkedTriple) {
  const ObservationSet u(0.15);
  EXPECT_TRUE(is_in_S_plus(pt(0.1, 0), pt(0.4, 0.3), pt(0.8, -0.1), u));
  EXPECT_FALSE(is_in_S_plus(pt(0.1, 0), pt(0.4, 0.05), pt(0.8, -0.1), u));
  EXPECT_FALSE(is_in_S_plus(pt(0.1, 0), pt(0.4, 0.3), pt(0.1, 0), u));
}

TEST(SampleTriples, AllSamplesPassMembership) {
  const ObservationSet u(0.15);
  const auto ts = sample_triples(u, pt(0.4, 0.3), 5, 42);
  ASSERT_EQ(ts.size(), 5u);
  for (const auto& t : ts) {
    EXPECT_TRUE(is_in_S_plus(t, u));
    EXPECT_EQ(t.y.t, 0.4);
  }
}

TEST(SampleTriples, EmptyWhenVertexInsideOrUnreachable) {
  const ObservationSet u(0.15);
  EXPECT_TRUE(sample_triples(u, pt(0.5, 0), 5, 1).empty());
  EXPECT_TRUE(sample_triples(u, pt(0.05, 5), 5, 1).empty());
}

TEST(SampleTriples, DeterministicForFixedSeed) {
  const ObservationSet u(0.15);
  const auto a = sample_triples(u, pt(0.5, 0.2, 0.1), 8, 7);
  const auto b = sample_triples(u, pt(0.5, 0.2, 0.1), 8, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(triple_csv_row(a[i]), triple_csv_row(b[i]));
}

TEST(Diamond, Membership) {
  const ObservationSet u(0.15);
  EXPECT_TRUE(in_diamond(pt(0.4, 0.3), u));
  EXPECT_FALSE(in_diamond(pt(0.5, 2), u));
  EXPECT_FALSE(in_diamond(pt(0.5, 0), u));
}

// Property: every sampled triple satisfies the five defining conditions, and
// its vertex lies in the diamond.
TEST(SampleTriples, PropertyRandomVertices) {
  const ObservationSet u(0.2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> t(0.0, 1.0), x(-0.7, 0.7);
  int produced = 0;
  for (int k = 0; k < 200; ++k) {
    const SpacetimePoint y(t(rng), x(rng), x(rng), x(rng));
    for (const auto& s : sample_triples(u, y, 3, 100 + k)) {
      ++produced;
      EXPECT_TRUE(is_in_S_plus(s, u));
      EXPECT_TRUE(in_diamond(s.y, u));
      EXPECT_LT(s.x.t, s.y.t);
      EXPECT_LT(s.y.t, s.z.t);
    }
  }
  EXPECT_GT(produced, 50);
}

// Property: sampling never produces a triple for vertices outside the diamond.
TEST(Diamond, PropertyNoSamplesOutside) {
  const ObservationSet u(0.15);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> t(-0.5, 1.5), x(-1.2, 1.2);
  for (int k = 0; k < 300; ++k) {
    const SpacetimePoint y(t(rng), x(rng), x(rng), 0.0);
    if (!in_diamond(y, u)) {
      EXPECT_TRUE(sample_triples(u, y, 2, k).empty());
    }
  }
}

// Property: classification is antisymmetric under exchange.
TEST(CausalClassify, PropertyAntisymmetry) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  for (int k = 0; k < 500; ++k) {
    const SpacetimePoint a(c(rng), c(rng), c(rng), c(rng)), b(c(rng), c(rng), c(rng), c(rng));
    const auto ab = causal_classify(a, b), ba = causal_classify(b, a);
    if (ab == CausalClass::StrictlyBefore) {
      EXPECT_EQ(ba, CausalClass::StrictlyAfter);
    }
    if (ab == CausalClass::SpacelikeSeparated) {
      EXPECT_EQ(ba, CausalClass::SpacelikeSeparated);
    }
  }
}

TEST(Serialization, TripleRoundTrip) {
  const ObservationSet u(0.15);
  const auto ts = sample_triples(u, pt(0.4, 0.3), 1, 11);
  ASSERT_EQ(ts.size(), 1u);
  const auto back = triple_from_json(to_json(ts[0]));
  EXPECT_EQ(triple_csv_row(back), triple_csv_row(ts[0]));
  EXPECT_THROW(triple_from_json(Json{{"x", {0, 0, 0, 0}}, {"y", {1, 0, 0, 0}}, {"z", {2, 1, 0, 0}}}), ConfigError);
}
