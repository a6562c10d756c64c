#include <gtest/gtest.h>

#include "est/gradcheck.hpp"
#include "properties.hpp"

namespace est::testing {
namespace {

TEST(AttentionProperty, WeightsNormalize) {
  const auto r = attention_normalization(100, 1);
  EXPECT_LE(r.worst, 1e-6);
  EXPECT_GT(r.checked, 0);
}

TEST(AttentionProperty, ArgmaxIgnoresKeyScale) {
  const auto r = argmax_scale_invariance(100, 2);
  EXPECT_EQ(r.worst, 0.0);
}

TEST(WarpProperty, Linear) { EXPECT_LE(warp_linearity(100, 3).worst, 1e-6); }

TEST(WarpProperty, IdentityPoseIsExact) { EXPECT_EQ(warp_identity(100, 4).worst, 0.0); }

TEST(WarpProperty, RoundTripOnLinearFields) {
  const auto r = warp_round_trip(100, 5);
  EXPECT_LE(r.worst, 1e-3);
  EXPECT_GT(r.checked, 100 * 16 * 16);  // most of the grid survives both warps
}

TEST(Gradients, ZeroUpstreamGivesZero) {
  Rng rng(6);
  const auto q = random_pair(2, 2, 3, 3, rng, 1.0);
  const std::vector<transformer::KeyValuePair<double>> mem{random_pair(2, 2, 3, 3, rng, 0.8),
                                                           random_pair(2, 2, 3, 3, rng, 0.8)};
  const auto g = transformer::grad_attention_retrieve(q, mem, Volume<double>(2, 2, 3, 3));
  for (double v : g.query_key.data()) EXPECT_EQ(v, 0.0);
  for (const auto& k : g.memory_keys)
    for (double v : k.data()) EXPECT_EQ(v, 0.0);
  for (const auto& k : g.memory_values)
    for (double v : k.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, SingleMemoryHasNoKeyGradient) {
  Rng rng(7);
  const auto q = random_pair(2, 2, 3, 3, rng, 1.0);
  const std::vector<transformer::KeyValuePair<double>> mem{random_pair(2, 2, 3, 3, rng, 1.0)};
  Volume<double> up(2, 2, 3, 3);
  for (auto& v : up.data()) v = rng.normal();
  const auto g = transformer::grad_attention_retrieve(q, mem, up);
  for (double v : g.query_key.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.memory_keys[0].data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.memory_values[0], up);
}

TEST(Gradients, SmallCaseMatchesFiniteDifferences) {
  gradcheck::Options o;
  o.half_channels = 2;
  o.memories = 2;
  o.planes = 2;
  o.instances = 10;
  for (int i = 0; i < o.instances; ++i) EXPECT_LE(gradcheck::attention_instance(o, i), 1e-5);
}

TEST(Gradients, SuiteReportsEverySuite) {
  gradcheck::Options o;
  o.instances = 100;
  const auto reports = gradcheck::run(o);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].name, "attention_retrieve");
  EXPECT_EQ(reports[1].name, "soft_argmax");
  for (const auto& r : reports) {
    EXPECT_EQ(r.instances, 100);
    EXPECT_TRUE(r.pass) << r.name << " " << r.max_rel_error;
  }
}

TEST(Gradients, CorruptedAnalyticFails) {
  gradcheck::Options o;
  o.instances = 5;
  o.corrupt = true;
  for (const auto& r : gradcheck::run(o)) EXPECT_FALSE(r.pass);
}

TEST(Gradients, RelativeErrorDefinition) {
  const std::vector<double> a{3.0, 4.0}, b{3.0, 4.0}, c{0.0, 0.0};
  EXPECT_EQ(gradcheck::relative_error(a, b), 0.0);
  EXPECT_EQ(gradcheck::relative_error(c, c), 0.0);
  EXPECT_DOUBLE_EQ(gradcheck::relative_error(a, c), 1.0);
}

}  // namespace
}  // namespace est::testing
