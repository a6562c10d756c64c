#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance suite. Nothing here calls the code path it is used to check.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "est/core.hpp"
#include "est/geometry.hpp"
#include "est/volume.hpp"

namespace est::testing {

inline geometry::Pose random_pose(Rng& rng, double max_angle = 0.3, double max_shift = 0.5) {
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  geometry::Pose p;
  p.rotation = Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), axis).toRotationMatrix();
  p.translation = Eigen::Vector3d(rng.uniform(-max_shift, max_shift), rng.uniform(-max_shift, max_shift),
                                  rng.uniform(-max_shift, max_shift));
  return p;
}

/// Plain-array unproject / rigid transform / project, no Eigen.
inline std::array<double, 3> compose_oracle(double u, double v, double z, const geometry::Intrinsics& K,
                                            const geometry::Pose& rel) {
  const double x[3] = {(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z};
  double y[3];
  for (int r = 0; r < 3; ++r) {
    y[r] = rel.translation(r);
    for (int c = 0; c < 3; ++c) y[r] += rel.rotation(r, c) * x[c];
  }
  return {K.fx * y[0] / y[2] + K.cx, K.fy * y[1] / y[2] + K.cy, y[2]};
}

/// Plane-induced homography K (R + t n^T / z) K^-1 for the fronto-parallel
/// plane z = z_m of the reference camera.
inline std::array<double, 2> homography_matrix_oracle(double u, double v, double z, const geometry::Intrinsics& K,
                                                      const geometry::Pose& rel) {
  const Eigen::Matrix3d k = K.matrix();
  const Eigen::Matrix3d h = k * (rel.rotation + rel.translation * Eigen::RowVector3d(0.0, 0.0, 1.0 / z)) * k.inverse();
  const Eigen::Vector3d p = h * Eigen::Vector3d(u, v, 1.0);
  return {p.x() / p.z(), p.y() / p.z()};
}

/// Softmax computed in long double as a brute-force reference.
inline std::vector<double> softmax_oracle(const std::vector<double>& s) {
  long double peak = s[0];
  for (double v : s) peak = std::max<long double>(peak, v);
  long double total = 0;
  std::vector<long double> e(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) total += (e[i] = std::exp(static_cast<long double>(s[i]) - peak));
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<double>(e[i] / total);
  return out;
}

struct Recovery {
  int counted = 0;
  int recovered = 0;
  Image<std::uint8_t> scored;  // pixels that entered the count
  double fraction() const { return counted == 0 ? 0.0 : static_cast<double>(recovered) / counted; }
};

/// Depth-index recovery by exhaustive matching in raw volumes. For each
/// interior pixel, the views valid at the ground-truth plane form a fixed set;
/// the half-to-half distance summed over that set is minimized over the planes
/// where every view in it is valid. Ground truth comes from the pixel at the
/// center of the 4x4 block.
inline Recovery raw_argmin_recovery(const std::vector<volume::FeatureVolume>& raws, const Image<float>& gt_full,
                                    const geometry::DepthHypotheses& hyp, int margin) {
  const int H = raws.front().values.height(), W = raws.front().values.width(), D = hyp.count();
  Recovery r{0, 0, Image<std::uint8_t>(H, W)};
  for (int y = margin; y < H - margin; ++y)
    for (int x = margin; x < W - margin; ++x) {
      const double gt = gt_full(4 * y + 2, 4 * x + 2);
      if (!(gt > 0.0)) continue;
      const long target = std::lround(hyp.index(gt));
      if (target < 0 || target >= D) continue;
      std::vector<const volume::FeatureVolume*> views;
      for (const auto& raw : raws)
        if (raw.mask(0, static_cast<int>(target), y, x)) views.push_back(&raw);
      if (views.empty()) continue;
      int best = -1;
      double best_cost = 0.0;
      for (int d = 0; d < D; ++d) {
        double cost = 0.0;
        bool all = true;
        for (const auto* v : views) {
          if (!v->mask(0, d, y, x)) {
            all = false;
            break;
          }
          const int C = v->values.channels() / 2;
          double s = 0.0;
          for (int c = 0; c < C; ++c) {
            const double e = static_cast<double>(v->values(c, d, y, x)) - v->values(C + c, d, y, x);
            s += e * e;
          }
          cost += std::sqrt(s);
        }
        if (all && (best < 0 || cost < best_cost)) {
          best = d;
          best_cost = cost;
        }
      }
      ++r.counted;
      r.scored(y, x) = 1;
      if (std::abs(best - target) <= 1) ++r.recovered;
    }
  return r;
}

}  // namespace est::testing
