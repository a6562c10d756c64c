#pragma once

#include <cstdint>
#include <vector>

#include "est/geometry.hpp"
#include "est/inference.hpp"
#include "est/synth.hpp"

// Desk-scale scene presets. Surfaces sit between roughly 0.6 m and 1.5 m,
// where one hypothesis step still moves a quarter-resolution pixel by a
// usable fraction at a 0.25 m baseline.
namespace est::scenes {

inline geometry::Intrinsics desk_intrinsics() { return {64.0, 64.0, 31.5, 31.5, 64, 64}; }

inline constexpr double kDeskBaseline = 0.25;

inline synth::Texture desk_texture(std::uint64_t seed) { return {seed, 2.0, 2, 1.0}; }

struct Sequence {
  std::vector<inference::Frame> frames;
  std::vector<Image<float>> depth_gt;
};

/// Renders `n` frames along `motion`; frame i gets noise seeded by (seed, i).
inline Sequence render_sequence(const synth::Scene& scene, const geometry::Intrinsics& K, int n,
                                const synth::Motion& motion, double noise_sigma = 0.0, std::uint64_t seed = 0) {
  scene.validate();
  Sequence seq;
  for (const auto& pose : synth::make_trajectory(n, motion)) {
    auto r = synth::render(scene, {K, pose});
    synth::add_noise(r.image, noise_sigma, hash_combine(seed, seq.frames.size()));
    seq.frames.push_back({std::move(r.image), r.camera});
    seq.depth_gt.push_back(std::move(r.depth_gt));
  }
  return seq;
}

enum class Shape { Fronto, Slanted, Sphere };

/// One member of the depth-recovery family. `variant` 0 or 1 selects the
/// geometry; the texture seed is free.
inline synth::Scene recovery_scene(Shape shape, int variant, std::uint64_t texture_seed,
                                   const geometry::DepthHypotheses& hyp) {
  synth::Scene s;
  const auto tex = desk_texture(texture_seed);
  const double g = variant;
  switch (shape) {
    case Shape::Fronto:
      s.primitives.push_back(synth::FrontoPlane{hyp.depth(6 + 2 * variant), tex});
      break;
    case Shape::Slanted:
      s.primitives.push_back(synth::SlantedPlane{{0.0, 0.0, 1.0 + 0.1 * g}, {0.3 - 0.25 * g, 0.15, 1.0}, tex});
      break;
    case Shape::Sphere:
      s.primitives.push_back(synth::Sphere{{0.05 * g, 0.0, 1.5 + 0.1 * g}, 0.9 + 0.05 * g, tex});
      break;
  }
  return s;
}

/// Textured fronto-parallel plane on hypothesis plane 8 (about 1.07 m with
/// the default range), used for the temporal-coherence runs.
inline synth::Scene temporal_scene(const geometry::DepthHypotheses& hyp, std::uint64_t texture_seed) {
  synth::Scene s;
  s.primitives.push_back(synth::FrontoPlane{hyp.depth(8), desk_texture(texture_seed)});
  return s;
}

}  // namespace est::scenes
