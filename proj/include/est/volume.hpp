#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "est/core.hpp"
#include "est/geometry.hpp"

namespace est::volume {

using geometry::Camera;
using geometry::DepthHypotheses;
using geometry::Intrinsics;
using geometry::Pose;
using LinearMap = Eigen::MatrixXf;  // rows = output channels, cols = input channels

inline constexpr int kPool = 4;        // feature grids are a quarter of the image
inline constexpr int kBaseFilters = 5;  // intensity, d/dx, d/dy, box r=1, box r=2

/// C x H/4 x W/4 feature grid, stored as a Volume with depth 1.
struct FeatureMap {
  Volume<float> values;
  int channels() const { return values.channels(); }
  int height() const { return values.height(); }
  int width() const { return values.width(); }
  float operator()(int c, int y, int x) const { return values(c, 0, y, x); }
};

/// C x D x H x W grid plus a D x H x W validity mask. Masked voxels are 0.
struct FeatureVolume {
  Volume<float> values;
  Mask mask;
};

/// Matching channels followed by one context channel, in the frustum of
/// `camera` (intrinsics at volume resolution).
struct HybridVolume {
  Volume<float> values;
  Mask mask;
  Camera camera;
  int matching_channels() const { return values.channels() - 1; }
};

// ---------------------------------------------------------------------------
// Filters

namespace detail {

inline Image<float> box_blur(const Image<float>& img, int radius) {
  Image<float> tmp(img.height(), img.width()), out(img.height(), img.width());
  const float norm = 1.0f / static_cast<float>(2 * radius + 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += img.clamped(y, x + k);
      tmp(y, x) = static_cast<float>(s) * norm;
    }
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += tmp.clamped(y + k, x);
      out(y, x) = static_cast<float>(s) * norm;
    }
  return out;
}

// Central differences inside, one-sided differences on the border rows/cols.
inline Image<float> gradient(const Image<float>& img, bool along_x) {
  Image<float> g(img.height(), img.width());
  const int n = along_x ? img.width() : img.height();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int i = along_x ? x : y;
      auto at = [&](int j) { return along_x ? img(y, j) : img(j, x); };
      if (i == 0)
        g(y, x) = at(1) - at(0);
      else if (i == n - 1)
        g(y, x) = at(n - 1) - at(n - 2);
      else
        g(y, x) = 0.5f * (at(i + 1) - at(i - 1));
    }
  return g;
}

inline Image<float> average_pool(const Image<float>& img, int f) {
  Image<float> out(img.height() / f, img.width() / f);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      double s = 0.0;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) s += img(y * f + dy, x * f + dx);
      out(y, x) = static_cast<float>(s / (f * f));
    }
  return out;
}

// Bilinear sample; corners with zero weight are never read.
inline float bilinear(const Volume<float>& v, int c, int d, double u, double w) {
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(w));
  const double ax = u - x0, ay = w - y0;
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    const int dx = k & 1, dy = k >> 1;
    const double wt = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
    if (wt == 0.0) continue;
    acc += wt * v(c, d, y0 + dy, x0 + dx);
  }
  return static_cast<float>(acc);
}

}  // namespace detail

/// Deterministic filter bank standing in for a learned feature extractor.
/// Channel c carries base filter c mod 5, average-pooled by 4.
inline FeatureMap extract_features(const Image<float>& image, int channels) {
  if (image.height() < 8 || image.width() < 8) throw std::invalid_argument("extract_features: image smaller than 8x8");
  if (image.height() % kPool != 0 || image.width() % kPool != 0)
    throw std::invalid_argument("extract_features: image size must be divisible by 4");
  if (channels <= 0) throw std::invalid_argument("extract_features: channel count must be positive");

  const std::array<Image<float>, kBaseFilters> bases{image, detail::gradient(image, true),
                                                     detail::gradient(image, false), detail::box_blur(image, 1),
                                                     detail::box_blur(image, 2)};
  std::array<Image<float>, kBaseFilters> pooled;
  for (int b = 0; b < kBaseFilters; ++b) pooled[b] = detail::average_pool(bases[b], kPool);

  FeatureMap fm{Volume<float>(channels, 1, image.height() / kPool, image.width() / kPool)};
  for (int c = 0; c < channels; ++c) {
    const auto& src = pooled[c % kBaseFilters].data();
    std::copy(src.begin(), src.end(), fm.values.data().begin() + c * fm.values.channel_stride());
  }
  return fm;
}

/// Plane-sweep volume: reference features in channels [0, C), source features
/// warped onto each hypothesis plane in [C, 2C). `K_quarter` is the intrinsics
/// at feature resolution; `rel` maps reference to source camera coordinates.
inline FeatureVolume build_raw_matching_volume(const FeatureMap& ref, const FeatureMap& src,
                                               const Intrinsics& K_quarter, const Pose& rel,
                                               const DepthHypotheses& hyp) {
  if (ref.channels() != src.channels() || ref.height() != src.height() || ref.width() != src.width())
    throw std::invalid_argument("build_raw_matching_volume: feature maps differ in shape");
  if (K_quarter.width != ref.width() || K_quarter.height != ref.height())
    throw std::invalid_argument("build_raw_matching_volume: intrinsics do not match feature resolution");

  const int C = ref.channels(), D = hyp.count(), H = ref.height(), W = ref.width();
  FeatureVolume out{Volume<float>(2 * C, D, H, W), Mask(1, D, H, W)};
  parallel_for(D, [&](int d) {
    const double z = hyp.depth(d);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const auto p = geometry::homography_map(x, y, z, K_quarter, rel);
        if (!p.valid) continue;
        out.mask(0, d, y, x) = 1;
        for (int c = 0; c < C; ++c) {
          out.values(c, d, y, x) = ref(c, y, x);
          out.values(C + c, d, y, x) = detail::bilinear(src.values, c, 0, p.u, p.v);
        }
      }
  });
  return out;
}

/// Euclidean distance between the reference half and the warped half.
inline double half_distance(const FeatureVolume& raw, int d, int y, int x) {
  const int C = raw.values.channels() / 2;
  double s = 0.0;
  for (int c = 0; c < C; ++c) {
    const double e = static_cast<double>(raw.values(c, d, y, x)) - raw.values(C + c, d, y, x);
    s += e * e;
  }
  return std::sqrt(s);
}

/// Default channel reduction: orthonormal rows Q [I | -I] / sqrt(2), with Q
/// the orthogonal factor of a seeded Gaussian matrix. Each output channel is
/// a projection of the reference/source feature difference.
inline LinearMap default_reduce_map(int channels, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x5EDC0DEULL));
  Eigen::MatrixXd g(channels, channels);
  for (int r = 0; r < channels; ++r)
    for (int c = 0; c < channels; ++c) g(r, c) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::MatrixXd w(channels, 2 * channels);
  w << q, -q;
  return (w / std::sqrt(2.0)).cast<float>();
}

/// Reduces each raw volume per voxel (linear map followed by an absolute-value
/// activation), averages the views with mask weights, then applies a
/// mask-normalized 3x3x3 box filter over (d, y, x).
inline FeatureVolume aggregate_and_regularize(const std::vector<FeatureVolume>& raws, const LinearMap& w_reduce) {
  if (raws.empty()) throw std::invalid_argument("aggregate_and_regularize: no views");
  const auto& first = raws.front().values;
  for (const auto& r : raws)
    if (!r.values.same_shape(first) || !r.mask.same_extent(first))
      throw std::invalid_argument("aggregate_and_regularize: views differ in shape");
  if (w_reduce.cols() != first.channels())
    throw std::invalid_argument("aggregate_and_regularize: reduction map does not match channel count");

  const int C = static_cast<int>(w_reduce.rows()), D = first.depth(), H = first.height(), W = first.width();
  const std::size_t in_stride = first.channel_stride();

  // Accumulating in double keeps the view average exactly symmetric in order.
  Volume<float> mean(C, D, H, W);
  Mask mask(1, D, H, W);
  parallel_for(D, [&](int d) {
    std::vector<double> acc(C);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        std::fill(acc.begin(), acc.end(), 0.0);
        int count = 0;
        for (const auto& r : raws) {
          if (!r.mask(0, d, y, x)) continue;
          ++count;
          const float* in = &r.values(0, d, y, x);
          for (int c = 0; c < C; ++c) {
            float s = 0.0f;
            for (int k = 0; k < w_reduce.cols(); ++k) s += w_reduce(c, k) * in[k * in_stride];
            acc[c] += std::abs(s);
          }
        }
        if (count == 0) continue;
        mask(0, d, y, x) = 1;
        for (int c = 0; c < C; ++c) mean(c, d, y, x) = static_cast<float>(acc[c] / count);
      }
  });

  // Separable box sums of value*mask and of mask; masked voxels stay 0.
  auto box_sum = [&](Volume<double>& v, int axis) {
    Volume<double> out(v.channels(), D, H, W);
    for (int c = 0; c < v.channels(); ++c)
      for (int d = 0; d < D; ++d)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int k = -1; k <= 1; ++k) {
              const int dd = d + (axis == 0 ? k : 0), yy = y + (axis == 1 ? k : 0), xx = x + (axis == 2 ? k : 0);
              if (dd < 0 || dd >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              s += v(c, dd, yy, xx);
            }
            out(c, d, y, x) = s;
          }
    v = std::move(out);
  };
  Volume<double> num = mean.cast<double>();  // already 0 where masked
  Volume<double> den = mask.cast<double>();
  for (int axis = 0; axis < 3; ++axis) {
    box_sum(num, axis);
    box_sum(den, axis);
  }

  FeatureVolume out{Volume<float>(C, D, H, W), mask};
  for (int c = 0; c < C; ++c)
    for (int d = 0; d < D; ++d)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (mask(0, d, y, x)) out.values(c, d, y, x) = static_cast<float>(num(c, d, y, x) / den(0, d, y, x));
  return out;
}

inline constexpr int kContextDescriptors = 6;

/// Fixed projection from the context descriptor to D channels.
inline Eigen::MatrixXf default_context_map(int depth_planes, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0xC0E7E47ULL));
  Eigen::MatrixXf m(depth_planes, kContextDescriptors);
  for (int r = 0; r < depth_planes; ++r)
    for (int c = 0; c < kContextDescriptors; ++c)
      m(r, c) = static_cast<float>(rng.normal() / std::sqrt(static_cast<double>(kContextDescriptors)));
  return m;
}

/// Per quarter-resolution pixel: intensity at pooling 4, 8 and 16, the two
/// pooled gradients and a constant bias.
inline Volume<float> context_descriptor(const Image<float>& image) {
  const Image<float> i4 = detail::average_pool(image, 4);
  const Image<float> gx = detail::average_pool(detail::gradient(image, true), 4);
  const Image<float> gy = detail::average_pool(detail::gradient(image, false), 4);
  const Image<float> i8 = detail::average_pool(i4, 2);
  const Image<float> i16 = detail::average_pool(i8, 2);
  Volume<float> desc(kContextDescriptors, 1, i4.height(), i4.width());
  for (int y = 0; y < i4.height(); ++y)
    for (int x = 0; x < i4.width(); ++x) {
      desc(0, 0, y, x) = i4(y, x);
      desc(1, 0, y, x) = i8.clamped(y / 2, x / 2);
      desc(2, 0, y, x) = i16.clamped(y / 4, x / 4);
      desc(3, 0, y, x) = gx(y, x);
      desc(4, 0, y, x) = gy(y, x);
      desc(5, 0, y, x) = 1.0f;
    }
  return desc;
}

/// Appends the context channel: its value at (d, y, x) is context map
/// channel d at (y, x).
inline HybridVolume context_and_fuse(const Image<float>& image, const FeatureVolume& matching,
                                     const Eigen::MatrixXf& context_map, const Camera& camera) {
  const Volume<float>& m = matching.values;
  if (image.height() / kPool != m.height() || image.width() / kPool != m.width())
    throw std::invalid_argument("context_and_fuse: image size does not match the matching volume");
  if (context_map.rows() != m.depth() || context_map.cols() != kContextDescriptors)
    throw std::invalid_argument("context_and_fuse: context map must have one row per depth plane");

  const Volume<float> desc = context_descriptor(image);
  const int C = m.channels(), D = m.depth(), H = m.height(), W = m.width();
  HybridVolume out{Volume<float>(C + 1, D, H, W), matching.mask, camera};
  std::copy(m.data().begin(), m.data().end(), out.values.data().begin());
  for (int d = 0; d < D; ++d)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float s = 0.0f;
        for (int k = 0; k < kContextDescriptors; ++k) s += context_map(d, k) * desc(k, 0, y, x);
        out.values(C, d, y, x) = s;
      }
  return out;
}

}  // namespace est::volume
