#include "surfelmap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "surfelmap/parallel.hpp"
#include "surfelmap/random.hpp"

namespace surfelmap {

double IntensityPattern::value_at(const Vec3& p) const {
  const long long ix = static_cast<long long>(std::floor(p.x() / cell));
  const long long iy = static_cast<long long>(std::floor(p.y() / cell));
  const long long iz = static_cast<long long>(std::floor(p.z() / cell));
  const bool odd = ((ix + iy + iz) % 2 + 2) % 2 == 1;
  return odd ? base + amplitude : base - amplitude;
}

namespace {

constexpr double kRayEps = 1e-9;

std::optional<double> plane_hit(const ScenePlane& plane, const Vec3& origin,
                                const Vec3& dir) {
  const double denom = plane.normal.dot(dir);
  if (std::abs(denom) < 1e-15) {
    return std::nullopt;
  }
  const double t = (plane.offset - plane.normal.dot(origin)) / denom;
  if (t <= kRayEps) {
    return std::nullopt;
  }
  return t;
}

std::optional<double> box_hit(const SceneBox& box, const Vec3& origin,
                              const Vec3& dir) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double o = origin[axis];
    const double d = dir[axis];
    const double lo = box.lo[axis];
    const double hi = box.hi[axis];
    if (std::abs(d) < 1e-15) {
      if (o < lo || o > hi) {
        return std::nullopt;
      }
      continue;
    }
    double t0 = (lo - o) / d;
    double t1 = (hi - o) / d;
    if (t0 > t1) {
      std::swap(t0, t1);
    }
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) {
      return std::nullopt;
    }
  }
  if (t_near > kRayEps) {
    return t_near;
  }
  if (t_far > kRayEps) {
    return t_far;  // origin inside the box
  }
  return std::nullopt;
}

double box_surface_distance(const SceneBox& box, const Vec3& p) {
  double outside2 = 0.0;
  bool inside = true;
  double min_face = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double v = p[axis];
    const double lo = box.lo[axis];
    const double hi = box.hi[axis];
    if (v < lo) {
      outside2 += (lo - v) * (lo - v);
      inside = false;
    } else if (v > hi) {
      outside2 += (v - hi) * (v - hi);
      inside = false;
    } else {
      min_face = std::min(min_face, std::min(v - lo, hi - v));
    }
  }
  return inside ? min_face : std::sqrt(outside2);
}

}  // namespace

double surface_distance(const SyntheticScene& scene, const Vec3& p) {
  if (scene.empty()) {
    throw std::invalid_argument("empty synthetic scene");
  }
  double best = std::numeric_limits<double>::infinity();
  for (const ScenePlane& plane : scene.planes) {
    best = std::min(best, std::abs(plane.normal.dot(p) - plane.offset));
  }
  for (const SceneBox& box : scene.boxes) {
    best = std::min(best, box_surface_distance(box, p));
  }
  return best;
}

std::optional<RayHit> raycast(const SyntheticScene& scene, const Vec3& origin,
                              const Vec3& dir) {
  if (scene.empty()) {
    throw std::invalid_argument("empty synthetic scene");
  }
  double best_t = std::numeric_limits<double>::infinity();
  const IntensityPattern* pattern = nullptr;
  for (const ScenePlane& plane : scene.planes) {
    if (const auto t = plane_hit(plane, origin, dir); t && *t < best_t) {
      best_t = *t;
      pattern = &plane.pattern;
    }
  }
  for (const SceneBox& box : scene.boxes) {
    if (const auto t = box_hit(box, origin, dir); t && *t < best_t) {
      best_t = *t;
      pattern = &box.pattern;
    }
  }
  if (pattern == nullptr) {
    return std::nullopt;
  }
  RayHit hit;
  hit.t = best_t;
  hit.point = origin + best_t * dir;
  hit.intensity = pattern->value_at(hit.point);
  return hit;
}

Frame render_scene(const SyntheticScene& scene, const Pose& pose,
                   const CameraModel& camera, double sigma_sim,
                   double invalid_fraction, std::uint64_t seed, int threads) {
  camera.validate();
  if (sigma_sim < 0.0 || invalid_fraction < 0.0 || invalid_fraction > 1.0) {
    throw std::invalid_argument("bad render noise parameters");
  }
  Frame frame;
  frame.intensity = IntensityImage(camera.width, camera.height);
  frame.depth = DepthImage(camera.width, camera.height);
  frame.pose = pose;

  const double bf = camera.baseline * camera.fx;
  const bool add_noise = sigma_sim > 0.0;
  const bool drop = invalid_fraction > 0.0;

  // Per-row RNG streams keep the render identical at any thread count.
  parallel_for_blocks(static_cast<std::size_t>(camera.height), threads,
                      [&](std::size_t y_begin, std::size_t y_end) {
    for (std::size_t py = y_begin; py < y_end; ++py) {
      SplitMix64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (py + 1)));
      float* intensity_row = frame.intensity.row(static_cast<int>(py));
      float* depth_row = frame.depth.row(static_cast<int>(py));
      const double ry = (static_cast<double>(py) - camera.cy) / camera.fy;
      for (int px = 0; px < camera.width; ++px) {
        const double rx = (px - camera.cx) / camera.fx;
        const Vec3 dir_cam(rx, ry, 1.0);
        const Vec3 dir_world = pose.rotation * dir_cam;
        const auto hit = raycast(scene, pose.translation, dir_world);
        if (!hit) {
          intensity_row[px] = 0.0f;
          depth_row[px] = static_cast<float>(kInvalidDepth);
          continue;
        }
        intensity_row[px] = static_cast<float>(hit->intensity);
        double depth = hit->t;
        if (drop && rng.uniform() < invalid_fraction) {
          depth_row[px] = static_cast<float>(kInvalidDepth);
          continue;
        }
        if (add_noise) {
          const double disparity = bf / depth + sigma_sim * rng.gaussian();
          if (!(disparity > 1e-9)) {
            depth_row[px] = static_cast<float>(kInvalidDepth);
            continue;
          }
          depth = bf / disparity;
        }
        depth_row[px] = static_cast<float>(depth);
      }
    }
  });
  return frame;
}

namespace {

constexpr double kWallInner = 8.0;   // inner wall surface distance from center
constexpr double kWallOuter = 8.2;
constexpr double kWallZLo = -2.0;
constexpr double kWallZHi = 2.0;
constexpr double kPathHalf = 5.5;    // camera square half-side; wall gap 2.5 m

}  // namespace

SyntheticScene loop_corridor_scene() {
  SyntheticScene scene;
  IntensityPattern pattern;
  pattern.cell = 0.4;
  SceneBox wall;
  wall.pattern = pattern;

  wall.lo = Vec3(-kWallOuter, -kWallOuter, kWallZLo);
  wall.hi = Vec3(kWallOuter, -kWallInner, kWallZHi);
  scene.boxes.push_back(wall);  // south, outward -y
  wall.lo = Vec3(-kWallOuter, kWallInner, kWallZLo);
  wall.hi = Vec3(kWallOuter, kWallOuter, kWallZHi);
  scene.boxes.push_back(wall);  // north
  wall.lo = Vec3(-kWallOuter, -kWallOuter, kWallZLo);
  wall.hi = Vec3(-kWallInner, kWallOuter, kWallZHi);
  scene.boxes.push_back(wall);  // west
  wall.lo = Vec3(kWallInner, -kWallOuter, kWallZLo);
  wall.hi = Vec3(kWallOuter, kWallOuter, kWallZHi);
  scene.boxes.push_back(wall);  // east
  return scene;
}

Pose loop_corridor_pose(double s) {
  if (!(s >= 0.0) || s >= 1.0) {
    s = s - std::floor(s);
  }
  const double side_len = 2.0 * kPathHalf;
  const double along = s * 4.0 * side_len;
  const int side = std::min(3, static_cast<int>(along / side_len));
  const double u = along - side * side_len;

  Vec3 position;
  Vec3 outward;
  switch (side) {
    case 0:  // south edge, marching +x, facing -y
      position = Vec3(-kPathHalf + u, -kPathHalf, 0.0);
      outward = Vec3(0.0, -1.0, 0.0);
      break;
    case 1:  // east edge, marching +y, facing +x
      position = Vec3(kPathHalf, -kPathHalf + u, 0.0);
      outward = Vec3(1.0, 0.0, 0.0);
      break;
    case 2:  // north edge, marching -x, facing +y
      position = Vec3(kPathHalf - u, kPathHalf, 0.0);
      outward = Vec3(0.0, 1.0, 0.0);
      break;
    default:  // west edge, marching -y, facing -x
      position = Vec3(-kPathHalf, kPathHalf - u, 0.0);
      outward = Vec3(-1.0, 0.0, 0.0);
      break;
  }

  // Camera axes: z looks outward, y points to world -z (down), x completes.
  Pose pose;
  const Vec3 y_cam(0.0, 0.0, -1.0);
  const Vec3 x_cam = y_cam.cross(outward);
  pose.rotation.col(0) = x_cam;
  pose.rotation.col(1) = y_cam;
  pose.rotation.col(2) = outward;
  pose.translation = position;
  return pose;
}

}  // namespace surfelmap
