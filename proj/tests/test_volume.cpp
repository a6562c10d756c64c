#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "est/volume.hpp"
#include "support.hpp"

namespace est::volume {
namespace {

const Intrinsics kQuarter{16.0, 16.0, 7.5, 7.5, 16, 16};

Image<float> random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image<float> img(h, w);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

FeatureVolume random_raw(int C2, int D, int H, int W, Rng& rng, double keep = 0.8) {
  FeatureVolume v{Volume<float>(C2, D, H, W), Mask(1, D, H, W)};
  for (int d = 0; d < D; ++d)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (rng.uniform() >= keep) continue;
        v.mask(0, d, y, x) = 1;
        for (int c = 0; c < C2; ++c) v.values(c, d, y, x) = static_cast<float>(rng.normal());
      }
  return v;
}

TEST(ExtractFeatures, ConstantImage) {
  const auto fm = extract_features(Image<float>(32, 32, 0.4f), 10);
  ASSERT_EQ(fm.channels(), 10);
  ASSERT_EQ(fm.height(), 8);
  ASSERT_EQ(fm.width(), 8);
  for (int c = 0; c < 10; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const int base = c % kBaseFilters;
        if (base == 1 || base == 2)
          EXPECT_EQ(fm(c, y, x), 0.0f);
        else
          EXPECT_NEAR(fm(c, y, x), 0.4f, 1e-6);
      }
}

TEST(ExtractFeatures, HorizontalRamp) {
  Image<float> img(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) img(y, x) = 0.01f * x;
  const auto fm = extract_features(img, 5);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      EXPECT_NEAR(fm(1, y, x), 0.01f, 1e-6);
      EXPECT_EQ(fm(2, y, x), 0.0f);
    }
}

TEST(ExtractFeatures, RejectsBadSizes) {
  EXPECT_THROW(extract_features(Image<float>(30, 32), 4), std::invalid_argument);
  EXPECT_THROW(extract_features(Image<float>(4, 4), 4), std::invalid_argument);
  EXPECT_THROW(extract_features(Image<float>(32, 32), 0), std::invalid_argument);
}

TEST(RawMatchingVolume, ZeroBaselineSelfMatchIsExact) {
  const auto fm = extract_features(random_image(64, 64, 1), 8);
  const DepthHypotheses hyp(0.5, 5.0, 16);
  const auto raw = build_raw_matching_volume(fm, fm, kQuarter, Pose::identity(), hyp);
  ASSERT_EQ(raw.values.channels(), 16);
  for (int d = 0; d < 16; ++d)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        EXPECT_TRUE(raw.mask(0, d, y, x));
        EXPECT_EQ(half_distance(raw, d, y, x), 0.0);
      }
}

TEST(RawMatchingVolume, MaskFollowsHomographyValidity) {
  const auto ref = extract_features(random_image(64, 64, 2), 4);
  const auto src = extract_features(random_image(64, 64, 3), 4);
  const DepthHypotheses hyp(0.5, 5.0, 12);
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Pose rel = testing::random_pose(rng, 0.2, 0.4);
    const auto raw = build_raw_matching_volume(ref, src, kQuarter, rel, hyp);
    for (int d = 0; d < 12; ++d)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const bool valid = geometry::homography_map(x, y, hyp.depth(d), kQuarter, rel).valid;
          EXPECT_EQ(raw.mask(0, d, y, x) != 0, valid);
          if (!valid)
            for (int c = 0; c < 8; ++c) EXPECT_EQ(raw.values(c, d, y, x), 0.0f);
        }
  }
}

TEST(RawMatchingVolume, NeverReadsOutsideTheSampleFootprint) {
  // Poison every source texel the valid voxels cannot legitimately touch.
  const auto ref = extract_features(random_image(64, 64, 5), 4);
  auto src = extract_features(random_image(64, 64, 6), 4);
  const DepthHypotheses hyp(0.5, 5.0, 12);
  Pose rel;
  rel.translation = {-1.0, 0.0, 0.0};  // every plane shifts by at least 3.2 texels
  Image<std::uint8_t> used(16, 16);
  for (int d = 0; d < 12; ++d)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const auto p = geometry::homography_map(x, y, hyp.depth(d), kQuarter, rel);
        if (!p.valid) continue;
        const int x0 = static_cast<int>(std::floor(p.u)), y0 = static_cast<int>(std::floor(p.v));
        for (int k = 0; k < 4; ++k) {
          const int xx = x0 + (k & 1), yy = y0 + (k >> 1);
          if (xx < 16 && yy < 16) used(yy, xx) = 1;
        }
      }
  int poisoned = 0;
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (!used(y, x)) {
          src.values(c, 0, y, x) = std::numeric_limits<float>::quiet_NaN();
          ++poisoned;
        }
  ASSERT_GT(poisoned, 0);
  const auto raw = build_raw_matching_volume(ref, src, kQuarter, rel, hyp);
  for (float v : raw.values.data()) EXPECT_TRUE(std::isfinite(v));
}

// Brute-force reduce, mask-weighted mean and 3x3x3 masked box filter.
Volume<double> aggregate_oracle(const std::vector<FeatureVolume>& raws, const LinearMap& w, Mask& mask) {
  const auto& f = raws[0].values;
  const int C = static_cast<int>(w.rows()), D = f.depth(), H = f.height(), W = f.width();
  Volume<double> mean(C, D, H, W);
  mask = Mask(1, D, H, W);
  for (int d = 0; d < D; ++d)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int n = 0;
        for (const auto& r : raws) {
          if (!r.mask(0, d, y, x)) continue;
          ++n;
          for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int k = 0; k < w.cols(); ++k) s += static_cast<double>(w(c, k)) * r.values(k, d, y, x);
            mean(c, d, y, x) += std::abs(s);
          }
        }
        if (n == 0) continue;
        mask(0, d, y, x) = 1;
        for (int c = 0; c < C; ++c) mean(c, d, y, x) /= n;
      }
  Volume<double> out(C, D, H, W);
  for (int c = 0; c < C; ++c)
    for (int d = 0; d < D; ++d)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (!mask(0, d, y, x)) continue;
          double num = 0.0, den = 0.0;
          for (int dd = std::max(0, d - 1); dd <= std::min(D - 1, d + 1); ++dd)
            for (int yy = std::max(0, y - 1); yy <= std::min(H - 1, y + 1); ++yy)
              for (int xx = std::max(0, x - 1); xx <= std::min(W - 1, x + 1); ++xx)
                if (mask(0, dd, yy, xx)) {
                  num += mean(c, dd, yy, xx);
                  den += 1.0;
                }
          out(c, d, y, x) = num / den;
        }
  return out;
}

TEST(Aggregate, MatchesBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<FeatureVolume> raws{random_raw(4, 3, 4, 4, rng), random_raw(4, 3, 4, 4, rng)};
    const LinearMap w = default_reduce_map(2, trial);
    const auto got = aggregate_and_regularize(raws, w);
    Mask mask;
    const auto want = aggregate_oracle(raws, w, mask);
    EXPECT_EQ(got.mask, mask);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.values.data()[i], want.data()[i], 1e-5);
  }
}

TEST(Aggregate, SelectorOnConstantInputIsConstant) {
  FeatureVolume raw{Volume<float>(4, 3, 5, 5, 0.7f), Mask(1, 3, 5, 5, 1)};
  raw.mask(0, 1, 2, 2) = 0;
  raw.values(0, 1, 2, 2) = raw.values(1, 1, 2, 2) = raw.values(2, 1, 2, 2) = raw.values(3, 1, 2, 2) = 0.0f;
  LinearMap w = LinearMap::Zero(2, 4);
  w(0, 0) = w(1, 1) = 1.0f;
  const auto out = aggregate_and_regularize({raw}, w);
  EXPECT_EQ(out.mask, raw.mask);
  for (int c = 0; c < 2; ++c)
    for (int d = 0; d < 3; ++d)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) EXPECT_FLOAT_EQ(out.values(c, d, y, x), raw.mask(0, d, y, x) ? 0.7f : 0.0f);
}

TEST(Aggregate, DuplicateViewsEqualSingleView) {
  Rng rng(8);
  const auto raw = random_raw(6, 4, 5, 5, rng);
  const LinearMap w = default_reduce_map(3, 1);
  const auto one = aggregate_and_regularize({raw}, w);
  const auto two = aggregate_and_regularize({raw, raw}, w);
  EXPECT_EQ(one.values, two.values);
  EXPECT_EQ(one.mask, two.mask);
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<FeatureVolume> raws{random_raw(6, 3, 4, 5, rng), random_raw(6, 3, 4, 5, rng),
                                    random_raw(6, 3, 4, 5, rng)};
    const LinearMap w = default_reduce_map(3, trial);
    const auto a = aggregate_and_regularize(raws, w);
    std::reverse(raws.begin(), raws.end());
    const auto b = aggregate_and_regularize(raws, w);
    std::swap(raws[0], raws[1]);
    const auto c = aggregate_and_regularize(raws, w);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values, c.values);
  }
}

TEST(ReduceMap, RowsAreOrthonormal) {
  const LinearMap w = default_reduce_map(8, 3);
  const Eigen::MatrixXf gram = w * w.transpose();
  EXPECT_LT((gram - Eigen::MatrixXf::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-5);
  // Each row annihilates identical halves.
  const Eigen::VectorXf v = Eigen::VectorXf::Random(8);
  Eigen::VectorXf both(16);
  both << v, v;
  EXPECT_LT((w * both).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Context, ConstantImageGivesSpatiallyConstantChannel) {
  const FeatureVolume matching{Volume<float>(2, 5, 8, 8), Mask(1, 5, 8, 8, 1)};
  const auto hv = context_and_fuse(Image<float>(32, 32, 0.3f), matching, default_context_map(5, 1),
                                   {Intrinsics{8, 8, 3.5, 3.5, 8, 8}, Pose::identity()});
  ASSERT_EQ(hv.values.channels(), 3);
  EXPECT_EQ(hv.matching_channels(), 2);
  for (int d = 0; d < 5; ++d)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) EXPECT_EQ(hv.values(2, d, y, x), hv.values(2, d, 0, 0));
}

TEST(Context, IsDeterministic) {
  const auto img = random_image(32, 32, 10);
  Rng rng(11);
  const auto matching = random_raw(3, 4, 8, 8, rng);
  const Camera cam{Intrinsics{8, 8, 3.5, 3.5, 8, 8}, Pose::identity()};
  const auto a = context_and_fuse(img, matching, default_context_map(4, 2), cam);
  const auto b = context_and_fuse(img, matching, default_context_map(4, 2), cam);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.mask, matching.mask);
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < 4; ++d)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) EXPECT_EQ(a.values(c, d, y, x), matching.values(c, d, y, x));
}

TEST(Volume, ParallelConstructionIsThreadIndependent) {
  const auto ref = extract_features(random_image(64, 64, 12), 6);
  const auto src = extract_features(random_image(64, 64, 13), 6);
  const DepthHypotheses hyp(0.5, 5.0, 20);
  Rng rng(14);
  const Pose rel = testing::random_pose(rng, 0.1, 0.3);
  const auto a = build_raw_matching_volume(ref, src, kQuarter, rel, hyp);
  const auto ga = aggregate_and_regularize({a}, default_reduce_map(6, 0));
  set_num_threads(4);
  const auto b = build_raw_matching_volume(ref, src, kQuarter, rel, hyp);
  const auto gb = aggregate_and_regularize({b}, default_reduce_map(6, 0));
  set_num_threads(1);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(ga.values, gb.values);
}

}  // namespace
}  // namespace est::volume
