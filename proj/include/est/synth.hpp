#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "est/core.hpp"
#include "est/geometry.hpp"

namespace est::synth {

using geometry::Camera;
using geometry::Intrinsics;
using geometry::Pose;

/// Procedural solid texture: multi-octave value noise evaluated at a world
/// point. A zero frequency yields a flat, texture-less surface.
struct Texture {
  std::uint64_t seed = 0;
  double frequency = 4.0;  // lattice cells per meter at the base octave
  int octaves = 3;
  double contrast = 1.0;
};

struct FrontoPlane {
  double depth = 2.0;  // world plane z = depth
  Texture texture;
};

struct SlantedPlane {
  Eigen::Vector3d point{0.0, 0.0, 2.0};
  Eigen::Vector3d normal{0.0, 0.0, 1.0};
  Texture texture;
};

struct Sphere {
  Eigen::Vector3d center{0.0, 0.0, 2.0};
  double radius = 0.5;
  Texture texture;
};

using Primitive = std::variant<FrontoPlane, SlantedPlane, Sphere>;

struct Scene {
  std::vector<Primitive> primitives;
  double background_depth = 0.0;  // world plane z = background_depth; 0 disables it
  Texture background;
  double z_min = 0.5;
  double z_max = 5.0;

  void validate() const {
    if (!(z_min > 0.0) || !(z_max > z_min)) throw ConfigError("scene: need 0 < z_min < z_max");
    if (background_depth != 0.0 && (background_depth < z_min || background_depth > z_max))
      throw ConfigError("scene: background outside depth range");
    for (const auto& p : primitives) {
      if (const auto* f = std::get_if<FrontoPlane>(&p)) {
        if (f->depth < z_min || f->depth > z_max) throw ConfigError("scene: plane outside depth range");
      } else if (const auto* s = std::get_if<SlantedPlane>(&p)) {
        if (!(s->normal.norm() > 0.0)) throw ConfigError("scene: degenerate plane normal");
        if (s->point.z() < z_min || s->point.z() > z_max) throw ConfigError("scene: plane anchor outside depth range");
      } else if (const auto* q = std::get_if<Sphere>(&p)) {
        if (!(q->radius > 0.0)) throw ConfigError("scene: sphere radius must be positive");
        if (q->center.z() - q->radius < z_min || q->center.z() + q->radius > z_max)
          throw ConfigError("scene: sphere outside depth range");
      }
    }
  }
};

struct RenderedFrame {
  Image<float> image;     // intensities in [0, 1]
  Image<float> depth_gt;  // camera depth in meters, 0 = invalid
  Camera camera;
};

namespace detail {

inline double lattice(std::uint64_t seed, long long x, long long y, long long z) {
  std::uint64_t h = hash_combine(seed, static_cast<std::uint64_t>(x));
  h = hash_combine(h, static_cast<std::uint64_t>(y));
  h = hash_combine(h, static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;  // [-1, 1)
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double value_noise(std::uint64_t seed, const Eigen::Vector3d& p) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<long long>(fx), iy = static_cast<long long>(fy), iz = static_cast<long long>(fz);
  const double tx = fade(p.x() - fx), ty = fade(p.y() - fy), tz = fade(p.z() - fz);
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
    acc += w * lattice(seed, ix + dx, iy + dy, iz + dz);
  }
  return acc;
}

}  // namespace detail

inline double evaluate(const Texture& tex, const Eigen::Vector3d& x) {
  if (tex.frequency <= 0.0 || tex.octaves <= 0) return 0.5;
  double sum = 0.0, norm = 0.0, amp = 1.0, freq = tex.frequency;
  for (int o = 0; o < tex.octaves; ++o) {
    sum += amp * detail::value_noise(hash_combine(tex.seed, static_cast<std::uint64_t>(o)), x * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return std::clamp(0.5 + 0.5 * tex.contrast * sum / norm * 1.6, 0.0, 1.0);
}

struct Hit {
  double depth = std::numeric_limits<double>::infinity();  // ray parameter == camera z
  const Texture* texture = nullptr;
};

/// Intersects the ray c + s * dir, s > 0. `dir` has unit camera-z component,
/// so s is the camera depth of the hit.
inline void intersect(const Primitive& prim, const Eigen::Vector3d& c, const Eigen::Vector3d& dir, Hit& best) {
  auto consider = [&](double s, const Texture& t) {
    if (s > 0.0 && s < best.depth) best = {s, &t};
  };
  if (const auto* f = std::get_if<FrontoPlane>(&prim)) {
    if (dir.z() != 0.0) consider((f->depth - c.z()) / dir.z(), f->texture);
  } else if (const auto* p = std::get_if<SlantedPlane>(&prim)) {
    const double den = p->normal.dot(dir);
    if (den != 0.0) consider(p->normal.dot(p->point - c) / den, p->texture);
  } else if (const auto* q = std::get_if<Sphere>(&prim)) {
    const Eigen::Vector3d oc = c - q->center;
    const double a = dir.squaredNorm();
    const double b = oc.dot(dir);
    const double disc = b * b - a * (oc.squaredNorm() - q->radius * q->radius);
    if (disc >= 0.0) {
      const double root = std::sqrt(disc);
      const double s0 = (-b - root) / a;
      consider(s0 > 0.0 ? s0 : (-b + root) / a, q->texture);
    }
  }
}

/// Ray casts one ray through every pixel center; the nearest hit wins.
inline RenderedFrame render(const Scene& scene, const Camera& camera) {
  camera.intrinsics.validate();
  camera.pose.validate();
  const Intrinsics& K = camera.intrinsics;
  const Eigen::Matrix3d r_wc = camera.pose.rotation.transpose();
  const Eigen::Vector3d center = camera.pose.center();
  const FrontoPlane background{scene.background_depth, scene.background};

  RenderedFrame frame{Image<float>(K.height, K.width), Image<float>(K.height, K.width), camera};
  parallel_for(K.height, [&](int y) {
    for (int x = 0; x < K.width; ++x) {
      const Eigen::Vector3d dir = r_wc * Eigen::Vector3d((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      Hit hit;
      for (const auto& p : scene.primitives) intersect(p, center, dir, hit);
      if (scene.background_depth > 0.0) intersect(background, center, dir, hit);
      if (hit.texture == nullptr) continue;  // depth stays 0, intensity 0
      frame.depth_gt(y, x) = static_cast<float>(hit.depth);
      frame.image(y, x) = static_cast<float>(evaluate(*hit.texture, center + hit.depth * dir));
    }
  });
  return frame;
}

/// Adds seeded Gaussian noise and clamps back into [0, 1].
inline void add_noise(Image<float>& image, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  Rng rng(seed);
  for (auto& px : image.data())
    px = static_cast<float>(std::clamp(px + sigma * rng.normal(), 0.0, 1.0));
}

enum class MotionKind { Lateral, Forward, Orbit };

struct Motion {
  MotionKind kind = MotionKind::Lateral;
  double baseline = 0.05;  // meters per frame (arc length for orbits)
  double radius = 2.0;     // orbit pivot distance along the start optical axis
};

inline std::vector<Pose> make_trajectory(int n_frames, const Motion& motion, const Pose& start = Pose::identity()) {
  if (n_frames < 1) throw ConfigError("trajectory: need at least one frame");
  if (!(motion.baseline > 0.0)) throw ConfigError("trajectory: baseline must be positive");
  start.validate();

  const Eigen::Matrix3d r_wc = start.rotation.transpose();
  const Eigen::Vector3d c0 = start.center();
  std::vector<Pose> poses;
  poses.reserve(n_frames);
  poses.push_back(start);
  for (int i = 1; i < n_frames; ++i) {
    Pose p;
    switch (motion.kind) {
      case MotionKind::Lateral:
      case MotionKind::Forward: {
        const Eigen::Vector3d axis = r_wc.col(motion.kind == MotionKind::Lateral ? 0 : 2);
        const Eigen::Vector3d c = c0 + (i * motion.baseline) * axis;
        p.rotation = start.rotation;
        p.translation = -start.rotation * c;
        break;
      }
      case MotionKind::Orbit: {
        if (!(motion.radius > 0.0)) throw ConfigError("trajectory: orbit radius must be positive");
        const Eigen::Vector3d pivot = c0 + motion.radius * r_wc.col(2);
        const Eigen::Matrix3d q =
            Eigen::AngleAxisd(i * motion.baseline / motion.radius, r_wc.col(1)).toRotationMatrix();
        const Eigen::Vector3d c = pivot + q * (c0 - pivot);
        p.rotation = start.rotation * q.transpose();
        p.translation = -p.rotation * c;
        break;
      }
    }
    poses.push_back(p);
  }
  return poses;
}

}  // namespace est::synth
