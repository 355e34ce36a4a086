#include "surfelmap/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace surfelmap {

void FusionConfig::validate() const {
  if (!(normal_dot_min > 0.0) || normal_dot_min > 1.0) {
    throw std::invalid_argument("normal_dot_min must be in (0, 1]");
  }
  if (!(depth_gate_sigmas > 0.0) || prune_keyframe_gap <= 0 ||
      prune_min_updates <= 0) {
    throw std::invalid_argument("fusion config fields must be positive");
  }
}

std::optional<int> associate(const Surfel& local_in_camera,
                             const Segmentation& segmentation,
                             std::span<const Surfel> new_surfels,
                             std::span<const int> surfel_of_center,
                             const CameraModel& camera,
                             const FusionConfig& cfg) {
  const double z_l = local_in_camera.position.z();
  if (!(z_l > 0.0)) {
    return std::nullopt;
  }
  const double u = camera.fx * local_in_camera.position.x() / z_l + camera.cx;
  const double v = camera.fy * local_in_camera.position.y() / z_l + camera.cy;
  const long px = std::lround(u);
  const long py = std::lround(v);
  if (px < 0 || py < 0 || px >= camera.width || py >= camera.height) {
    return std::nullopt;
  }
  const std::int32_t label =
      segmentation.labels(static_cast<int>(px), static_cast<int>(py));
  if (label < 0 || static_cast<std::size_t>(label) >= surfel_of_center.size()) {
    return std::nullopt;
  }
  const int idx = surfel_of_center[label];
  if (idx < 0 || static_cast<std::size_t>(idx) >= new_surfels.size()) {
    return std::nullopt;
  }
  const Surfel& fresh = new_surfels[idx];
  const double gate = z_l * z_l / (camera.baseline * camera.fx) *
                      cfg.depth_gate_sigmas * camera.disparity_sigma;
  if (!(std::abs(fresh.position.z() - z_l) < gate)) {
    return std::nullopt;
  }
  if (!(fresh.normal.dot(local_in_camera.normal) > cfg.normal_dot_min)) {
    return std::nullopt;
  }
  return idx;
}

Surfel fuse_pair(const Surfel& local, const Surfel& fresh) {
  if (!(local.weight > 0.0) || !(fresh.weight > 0.0)) {
    throw std::invalid_argument("fuse_pair requires positive weights");
  }
  const double w_sum = local.weight + fresh.weight;
  Surfel out;
  out.position =
      (local.weight * local.position + fresh.weight * fresh.position) / w_sum;
  Vec3 n = local.weight * local.normal + fresh.weight * fresh.normal;
  const double len = n.norm();
  out.normal = len > 1e-12 ? Vec3(n / len) : local.normal;
  out.intensity = fresh.intensity;
  out.weight = w_sum;
  out.radius = std::min(local.radius, fresh.radius);
  out.update_count = local.update_count + 1;
  out.attached_keyframe = fresh.attached_keyframe;
  return out;
}

FuseResult fuse_frame(std::span<const Surfel> local_surfels,
                      std::span<const Surfel> new_surfels,
                      std::span<const int> surfel_of_center,
                      const Segmentation& segmentation, const Pose& frame_pose,
                      int ref_keyframe, const CameraModel& camera,
                      const FusionConfig& cfg) {
  cfg.validate();
  camera.validate();

  const Pose world_from_camera = frame_pose;
  const Pose camera_from_world = frame_pose.inverse();

  FuseResult result;
  result.consumed_new.assign(new_surfels.size(), 0);
  result.surfels.reserve(local_surfels.size() + new_surfels.size());

  for (const Surfel& local_world : local_surfels) {
    Surfel local = local_world;
    local.position = camera_from_world.transform_point(local_world.position);
    local.normal = camera_from_world.transform_vector(local_world.normal);

    Surfel updated = local;
    const std::optional<int> match = associate(
        local, segmentation, new_surfels, surfel_of_center, camera, cfg);
    if (match && !result.consumed_new[*match]) {
      result.consumed_new[*match] = 1;
      updated = fuse_pair(local, new_surfels[*match]);
      ++result.fused_count;
    }

    updated.position = world_from_camera.transform_point(updated.position);
    updated.normal = world_from_camera.transform_vector(updated.normal);

    const bool stale =
        std::abs(updated.attached_keyframe - ref_keyframe) >
        cfg.prune_keyframe_gap;
    if (stale && updated.update_count < cfg.prune_min_updates) {
      result.pruned.push_back(updated);
    } else {
      result.surfels.push_back(updated);
    }
  }

  for (std::size_t i = 0; i < new_surfels.size(); ++i) {
    if (result.consumed_new[i]) {
      continue;
    }
    Surfel s = new_surfels[i];
    s.position = world_from_camera.transform_point(s.position);
    s.normal = world_from_camera.transform_vector(s.normal);
    result.surfels.push_back(s);
  }
  return result;
}

}  // namespace surfelmap
