#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "est/core.hpp"
#include "est/geometry.hpp"

namespace est::depth {

using geometry::DepthHypotheses;

/// Softmax over depth planes: 1 x D x H x W, sums to one per pixel.
struct ProbabilityVolume {
  Volume<double> p;
  int planes() const { return p.depth(); }
  int height() const { return p.height(); }
  int width() const { return p.width(); }
};

/// Stage 0/1 live at quarter resolution, stage 2 at half, stage 3 at full.
struct DepthMap {
  Image<double> depth;
  Image<std::uint8_t> valid;
  int stage = 0;

  int height() const { return depth.height(); }
  int width() const { return depth.width(); }
};

/// Per-voxel score = <reduce, channels>, then a softmax over the depth planes.
/// Masked voxels drop out of the softmax; a pixel with no valid plane gets a
/// uniform distribution.
template <typename T>
ProbabilityVolume probability_volume(const Volume<T>& grid, std::span<const double> reduce,
                                     const Mask* mask = nullptr) {
  if (static_cast<int>(reduce.size()) != grid.channels())
    throw std::invalid_argument("probability_volume: reduction length does not match channels");
  if (mask != nullptr && !mask->same_extent(grid)) throw std::invalid_argument("probability_volume: mask shape");

  const int C = grid.channels(), D = grid.depth(), H = grid.height(), W = grid.width();
  ProbabilityVolume out{Volume<double>(1, D, H, W)};
  std::vector<double> score(D);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double peak = -std::numeric_limits<double>::infinity();
      for (int d = 0; d < D; ++d) {
        if (mask != nullptr && !(*mask)(0, d, y, x)) continue;
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += reduce[c] * static_cast<double>(grid(c, d, y, x));
        score[d] = s;
        peak = std::max(peak, s);
      }
      if (peak == -std::numeric_limits<double>::infinity()) {
        for (int d = 0; d < D; ++d) out.p(0, d, y, x) = 1.0 / D;
        continue;
      }
      double total = 0.0;
      for (int d = 0; d < D; ++d) {
        const bool ok = mask == nullptr || (*mask)(0, d, y, x);
        score[d] = ok ? std::exp(score[d] - peak) : 0.0;
        total += score[d];
      }
      for (int d = 0; d < D; ++d) out.p(0, d, y, x) = score[d] / total;
    }
  return out;
}

/// Expected depth under P.
inline DepthMap soft_argmax(const ProbabilityVolume& P, const DepthHypotheses& hyp, int stage = 1) {
  if (P.planes() != hyp.count()) throw std::invalid_argument("soft_argmax: plane count mismatch");
  const std::vector<double> z = hyp.values();
  DepthMap out{Image<double>(P.height(), P.width()), Image<std::uint8_t>(P.height(), P.width(), 1), stage};
  for (int y = 0; y < P.height(); ++y)
    for (int x = 0; x < P.width(); ++x) {
      double e = 0.0;
      for (int d = 0; d < P.planes(); ++d) e += z[d] * P.p(0, d, y, x);
      out.depth(y, x) = std::clamp(e, hyp.z_min(), hyp.z_max());
    }
  return out;
}

/// Gradient of <upstream, soft_argmax(softmax(scores))> with respect to the
/// scores, given the softmax output P: P_m (z_m - E[z]) * upstream.
inline Volume<double> grad_soft_argmax(const ProbabilityVolume& P, const DepthHypotheses& hyp,
                                       const Image<double>& upstream) {
  if (upstream.height() != P.height() || upstream.width() != P.width())
    throw std::invalid_argument("grad_soft_argmax: upstream shape mismatch");
  const std::vector<double> z = hyp.values();
  Volume<double> g(1, P.planes(), P.height(), P.width());
  for (int y = 0; y < P.height(); ++y)
    for (int x = 0; x < P.width(); ++x) {
      double mean = 0.0;
      for (int d = 0; d < P.planes(); ++d) mean += z[d] * P.p(0, d, y, x);
      for (int d = 0; d < P.planes(); ++d) g(0, d, y, x) = upstream(y, x) * P.p(0, d, y, x) * (z[d] - mean);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Upsampling

struct RefineParams {
  int radius = 2;
  double sigma_spatial = 1.5;
  double sigma_range = 0.08;  // guide-intensity units
};

namespace detail {

// Bilinear x2 with half-pixel centers, clamped at the border.
inline Image<double> upsample2(const Image<double>& src) {
  Image<double> out(src.height() * 2, src.width() * 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const double sy = std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, src.height() - 1.0);
      const double sx = std::clamp((x + 0.5) / 2.0 - 0.5, 0.0, src.width() - 1.0);
      const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, src.height() - 1), x1 = std::min(x0 + 1, src.width() - 1);
      const double ay = sy - y0, ax = sx - x0;
      out(y, x) = (1 - ay) * ((1 - ax) * src(y0, x0) + ax * src(y0, x1)) +
                  ay * ((1 - ax) * src(y1, x0) + ax * src(y1, x1));
    }
  return out;
}

inline Image<float> downsample_guide(const Image<float>& img, int f) {
  if (f == 1) return img;
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

inline Image<double> joint_bilateral(const Image<double>& depth, const Image<float>& guide, const RefineParams& rp) {
  Image<double> out(depth.height(), depth.width());
  const double is2 = 1.0 / (2.0 * rp.sigma_spatial * rp.sigma_spatial);
  const double ir2 = 1.0 / (2.0 * rp.sigma_range * rp.sigma_range);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      double num = 0.0, den = 0.0;
      const double g0 = guide(y, x);
      for (int dy = -rp.radius; dy <= rp.radius; ++dy)
        for (int dx = -rp.radius; dx <= rp.radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= depth.height() || xx < 0 || xx >= depth.width()) continue;
          const double dg = guide(yy, xx) - g0;
          const double w = std::exp(-(dx * dx + dy * dy) * is2 - dg * dg * ir2);
          num += w * depth(yy, xx);
          den += w;
        }
      out(y, x) = num / den;
    }
  return out;
}

inline DepthMap refine_stage(const DepthMap& in, const Image<float>& guide_full, const DepthHypotheses& hyp,
                             int stage, const RefineParams& rp) {
  const Image<double> up = upsample2(in.depth);
  const int f = guide_full.width() / up.width();
  const Image<float> guide = downsample_guide(guide_full, f);
  if (guide.height() != up.height() || guide.width() != up.width())
    throw std::invalid_argument("upsample_refine: guide image does not match depth resolution");
  DepthMap out{joint_bilateral(up, guide, rp), Image<std::uint8_t>(up.height(), up.width()), stage};
  for (auto& v : out.depth.data()) v = std::clamp(v, hyp.z_min(), hyp.z_max());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.valid(y, x) = in.valid(y / 2, x / 2);
  return out;
}

}  // namespace detail

/// Two fixed refinement stages: bilinear x2, then a joint bilateral filter
/// steered by the guide image. Returns (half resolution, full resolution).
inline std::pair<DepthMap, DepthMap> upsample_refine(const DepthMap& quarter, const Image<float>& guide,
                                                     const DepthHypotheses& hyp, const RefineParams& rp = {}) {
  if (guide.width() != quarter.width() * 4 || guide.height() != quarter.height() * 4)
    throw std::invalid_argument("upsample_refine: guide must be 4x the depth map");
  DepthMap half = detail::refine_stage(quarter, guide, hyp, 2, rp);
  DepthMap full = detail::refine_stage(half, guide, hyp, 3, rp);
  return {std::move(half), std::move(full)};
}

// ---------------------------------------------------------------------------
// Multi-view loss

enum class StageWeighting {
  AsPublished,  // lambda^(s-3): coarse stages weigh more
  Reversed,     // lambda^(3-s)
};

struct ViewPrediction {
  std::array<std::optional<DepthMap>, 4> stages;
};

/// Nearest-neighbour reduction of a full-resolution ground truth by `f`.
inline Image<float> downsize_nearest(const Image<float>& gt, int f) {
  if (f == 1) return gt;
  Image<float> out(gt.height() / f, gt.width() / f);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out(y, x) = gt(y * f + f / 2, x * f + f / 2);
  return out;
}

/// (1/N) sum_s sum_i lambda^(s-3) * mean_valid |D_s^i - gt_s^i|.
/// Ground truth is full resolution with 0 marking invalid pixels.
inline double multiview_loss(const std::vector<ViewPrediction>& preds, const std::vector<Image<float>>& gts,
                             double lambda = 0.8, StageWeighting weighting = StageWeighting::AsPublished) {
  if (preds.size() != gts.size() || preds.empty()) throw std::invalid_argument("multiview_loss: view count mismatch");
  if (!(lambda > 0.0)) throw std::invalid_argument("multiview_loss: lambda must be positive");
  double total = 0.0;
  bool any_valid = false;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int s = 0; s < 4; ++s) {
      const auto& pred = preds[i].stages[s];
      if (!pred) continue;
      if (gts[i].width() % pred->width() != 0 || gts[i].width() / pred->width() * pred->height() != gts[i].height())
        throw std::invalid_argument("multiview_loss: prediction does not tile the ground truth");
      const Image<float> gt = downsize_nearest(gts[i], gts[i].width() / pred->width());
      double sum = 0.0;
      long count = 0;
      for (int y = 0; y < gt.height(); ++y)
        for (int x = 0; x < gt.width(); ++x) {
          if (!(gt(y, x) > 0.0f)) continue;
          sum += std::abs(pred->depth(y, x) - gt(y, x));
          ++count;
        }
      if (count == 0) continue;
      any_valid = true;
      const double exponent = weighting == StageWeighting::AsPublished ? s - 3 : 3 - s;
      total += std::pow(lambda, exponent) * (sum / count);
    }
  }
  if (!any_valid) throw Error("multiview_loss: no valid ground-truth pixels");
  return total / static_cast<double>(preds.size());
}

}  // namespace est::depth
