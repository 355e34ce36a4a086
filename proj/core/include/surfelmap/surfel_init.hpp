#pragma once

#include <span>
#include <vector>

#include "surfelmap/core_types.hpp"
#include "surfelmap/superpixel.hpp"

namespace surfelmap {

using NormalImage = Image<Vec3>;

inline bool normal_valid(const Vec3& n) { return n.allFinite(); }

/// Robust plane through a point cloud: normal, offset b with the plane
/// equation normal . (p - mean_point) + b = 0, and the Huber inlier count.
struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();
  double bias_b = 0.0;
  Vec3 mean_point = Vec3::Zero();
  int inlier_count = 0;
};

struct SurfelInitConfig {
  int min_pixels = 16;       // surfel needs strictly more assigned pixels
  double huber_delta = 0.05; // meters, plane fit robust radius
  double grazing_eps = 1e-6; // |normal . ray| below this aborts the superpixel

  void validate() const;
};

struct SurfelInitResult {
  std::vector<Surfel> surfels;        // ordered by source center index
  std::vector<int> surfel_of_center;  // center index -> surfel index, -1 if none
  int skipped = 0;                    // eligible centers that failed to fit
};

/// Central-difference normals of the back-projected depth image, oriented
/// toward the camera. Pixels at the border or with an invalid depth in the
/// 4-neighborhood get an invalid normal.
NormalImage pixel_normals(const Frame& frame, const CameraModel& camera,
                          int threads = 1);

/// Huber Gauss-Newton plane fit from the given starting normal and b = 0.
/// The normal moves in its tangent plane each iteration and is renormalized;
/// 10 iterations max, step tolerance 1e-6. The result faces the camera.
PlaneFit fit_plane(std::span<const Vec3> points, const Vec3& initial_normal,
                   double huber_delta);

/// Intersection of the fitted plane with the ray through the center pixel.
Vec3 surfel_position(const PlaneFit& fit, const Vec2& center_pixel,
                     const CameraModel& camera, double grazing_eps = 1e-6);

/// Metric radius covering a superpixel of pixel radius r_i at the surfel.
double surfel_radius(const PlaneFit& fit, const Vec3& position, double r_i,
                     const CameraModel& camera, double grazing_eps = 1e-6);

/// Inverse variance of the surfel depth for a stereo-style depth sensor.
double surfel_weight(double depth_z, const CameraModel& camera);

/// One surfel per eligible superpixel (pixel_count strictly above
/// cfg.min_pixels, valid mean depth), in the camera frame. Failures inside a
/// superpixel (degenerate fit, grazing ray, missing normals) skip it.
SurfelInitResult initialize_surfels(const Frame& frame,
                                    const Segmentation& segmentation,
                                    const NormalImage& normals,
                                    const SurfelInitConfig& cfg,
                                    const CameraModel& camera,
                                    int threads = 1);

}  // namespace surfelmap
