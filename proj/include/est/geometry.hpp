#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "est/core.hpp"

namespace est::geometry {

/// Pinhole intrinsics in pixels. Pixel centers sit at integer coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 4;
  int height = 4;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
    if (width < 4 || height < 4) throw ConfigError("intrinsics: image must be at least 4x4");
  }

  /// Intrinsics of a grid downsampled by `s` (e.g. 4 for feature maps).
  Intrinsics scaled(int s) const {
    if (s <= 0) throw std::invalid_argument("scaled: factor must be positive");
    return {fx / s, fy / s, cx / s, cy / s, width / s, height / s};
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1;
  }

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// Camera-from-world rigid transform: X_cam = R * X_world + t.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  void validate(double tol = 1e-9) const {
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho <= tol)) throw ConfigError("pose: rotation is not orthonormal");
    if (!(std::abs(rotation.determinant() - 1.0) <= tol)) throw ConfigError("pose: rotation determinant is not +1");
    if (!translation.allFinite()) throw ConfigError("pose: non-finite translation");
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }
  Pose inverse() const { return {rotation.transpose(), -rotation.transpose() * translation}; }
  /// (*this) after `other`: X -> this(other(X)).
  Pose compose(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  bool operator==(const Pose& o) const { return rotation == o.rotation && translation == o.translation; }
};

struct Camera {
  Intrinsics intrinsics;
  Pose pose;

  bool operator==(const Camera& o) const { return intrinsics == o.intrinsics && pose == o.pose; }
};

/// Uniformly spaced fronto-parallel depth planes z_0 .. z_{D-1}.
class DepthHypotheses {
 public:
  DepthHypotheses(double z_min, double z_max, int count) : z_min_(z_min), z_max_(z_max), count_(count) {
    if (!(z_min > 0.0) || !(z_max > z_min)) throw ConfigError("hypotheses: need 0 < z_min < z_max");
    if (count < 2) throw ConfigError("hypotheses: need at least 2 planes");
  }

  double z_min() const { return z_min_; }
  double z_max() const { return z_max_; }
  int count() const { return count_; }
  double spacing() const { return (z_max_ - z_min_) / (count_ - 1); }

  double depth(double index) const {
    // Exact endpoint so the last plane is z_max bit-for-bit.
    if (index == count_ - 1) return z_max_;
    return z_min_ + index * spacing();
  }
  // Snaps to the nearest plane when within rounding noise of it, so the
  // depth -> index -> depth round trip is exact on grid points.
  double index(double z) const {
    const double i = (z - z_min_) / spacing();
    const double r = std::round(i);
    return std::abs(i - r) <= 1e-9 * std::max(1.0, std::abs(r)) ? r : i;
  }

  std::vector<double> values() const {
    std::vector<double> v(count_);
    for (int m = 0; m < count_; ++m) v[m] = depth(m);
    return v;
  }

  bool operator==(const DepthHypotheses&) const = default;

 private:
  double z_min_;
  double z_max_;
  int count_;
};

struct PixelMapResult {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
  bool valid = false;
};

struct VoxelMapResult {
  double u = 0.0;
  double v = 0.0;
  double d = 0.0;
  bool valid = false;
};

/// Pose taking reference-camera coordinates to source-camera coordinates.
inline Pose relative_pose(const Pose& reference, const Pose& source) {
  if (reference == source) return Pose::identity();
  return source.compose(reference.inverse());
}

/// Plane-sweep mapping: back-project (u, v) to depth z_m in the reference
/// camera, move it into the target camera by `rel` and project again.
/// `K` describes both cameras.
inline PixelMapResult homography_map(double u, double v, double z_m, const Intrinsics& K, const Pose& rel) {
  if (rel.rotation == Eigen::Matrix3d::Identity() && rel.translation.isZero(0.0))
    return {u, v, z_m, z_m > 0.0 && K.contains(u, v)};
  const Eigen::Vector3d ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
  const Eigen::Vector3d x_src = rel.rotation * (ray * z_m) + rel.translation;
  PixelMapResult r;
  r.z = x_src.z();
  if (!(r.z > 0.0)) return r;
  r.u = K.fx * x_src.x() / r.z + K.cx;
  r.v = K.fy * x_src.y() / r.z + K.cy;
  r.valid = K.contains(r.u, r.v);
  return r;
}

/// Maps voxel (u, v, d) of one frustum-aligned volume onto fractional voxel
/// coordinates of another. The projected depth z' indexes the target volume.
inline VoxelMapResult epipolar_voxel_map(double u, double v, double d, const DepthHypotheses& hyp,
                                         const Intrinsics& K, const Pose& rel) {
  if (rel.rotation == Eigen::Matrix3d::Identity() && rel.translation.isZero(0.0))
    return {u, v, d, K.contains(u, v) && d >= 0.0 && d <= hyp.count() - 1};
  const PixelMapResult p = homography_map(u, v, hyp.depth(d), K, rel);
  VoxelMapResult r{p.u, p.v, hyp.index(p.z), false};
  r.valid = p.valid && r.d >= 0.0 && r.d <= hyp.count() - 1;
  return r;
}

}  // namespace est::geometry
