#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "surfelmap/core_types.hpp"

namespace surfelmap {

/// 3-D checker intensity: base +/- amplitude by parity of the world cell.
struct IntensityPattern {
  double base = 128.0;
  double amplitude = 64.0;
  double cell = 0.4;  // meters

  double value_at(const Vec3& p) const;
};

/// Infinite plane normal . p = offset.
struct ScenePlane {
  Vec3 normal = Vec3::UnitZ();  // unit
  double offset = 0.0;
  IntensityPattern pattern;
};

/// Axis-aligned box, surfaces included.
struct SceneBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  IntensityPattern pattern;
};

struct RayHit {
  double t = 0.0;  // camera-frame depth when cast with a z=1 ray
  Vec3 point = Vec3::Zero();
  double intensity = 0.0;
};

struct SyntheticScene {
  std::vector<ScenePlane> planes;
  std::vector<SceneBox> boxes;

  bool empty() const { return planes.empty() && boxes.empty(); }
};

/// Unsigned distance from a point to the nearest scene surface.
double surface_distance(const SyntheticScene& scene, const Vec3& p);

/// First intersection along origin + t * dir for t > 1e-9; dir need not be
/// normalized (pass the camera ray so t is the camera-frame depth).
std::optional<RayHit> raycast(const SyntheticScene& scene, const Vec3& origin,
                              const Vec3& dir);

/// Ray-cast render with seeded sensor noise: Gaussian disparity noise of
/// sigma_sim pixels applied in disparity space, plus a dropped-pixel
/// fraction. Deterministic for fixed arguments at any thread count.
Frame render_scene(const SyntheticScene& scene, const Pose& pose,
                   const CameraModel& camera, double sigma_sim,
                   double invalid_fraction, std::uint64_t seed,
                   int threads = 1);

/// Square-circuit benchmark scene: four checkered walls, the camera riding a
/// square path facing the outer wall at 2.5 m.
SyntheticScene loop_corridor_scene();

/// Pose on the loop circuit at lap fraction s in [0, 1); bitwise identical
/// for identical s, so whole laps repeat poses exactly.
Pose loop_corridor_pose(double s);

}  // namespace surfelmap
