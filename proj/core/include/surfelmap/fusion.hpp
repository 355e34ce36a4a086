#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "surfelmap/core_types.hpp"
#include "surfelmap/superpixel.hpp"

namespace surfelmap {

struct FusionConfig {
  double normal_dot_min = 0.8;    // minimum normal agreement for a match
  double depth_gate_sigmas = 2.0; // disparity sigmas allowed between depths
  int prune_keyframe_gap = 10;    // |attached - ref| beyond this is stale
  int prune_min_updates = 5;      // stale surfels under this count are dropped

  void validate() const;
};

struct FuseResult {
  std::vector<Surfel> surfels;  // world frame: surviving locals, then news
  std::vector<std::uint8_t> consumed_new;  // per new surfel
  std::vector<Surfel> pruned;   // dropped locals, world frame
  int fused_count = 0;
};

/// Candidate new surfel for a camera-frame local surfel: projects the local
/// onto the frame, reads the superpixel label, and applies the depth and
/// normal gates. Behind-camera and off-image surfels yield no candidate.
std::optional<int> associate(const Surfel& local_in_camera,
                             const Segmentation& segmentation,
                             std::span<const Surfel> new_surfels,
                             std::span<const int> surfel_of_center,
                             const CameraModel& camera,
                             const FusionConfig& cfg);

/// Weighted average of two camera-frame surfels; the local surfel absorbs
/// the new one. Intensity and attachment come from the new surfel, the
/// normal is renormalized, weight sums, radius takes the minimum.
Surfel fuse_pair(const Surfel& local, const Surfel& fresh);

/// One fusion round: locals arrive in the world frame (extract_local_map
/// output), news in the camera frame. Locals are matched one-to-one against
/// news (first match wins in ascending local order), fused, pruned, and
/// everything is returned in the world frame: surviving local-derived
/// surfels in local order, then unconsumed news in their order.
FuseResult fuse_frame(std::span<const Surfel> local_surfels,
                      std::span<const Surfel> new_surfels,
                      std::span<const int> surfel_of_center,
                      const Segmentation& segmentation, const Pose& frame_pose,
                      int ref_keyframe, const CameraModel& camera,
                      const FusionConfig& cfg);

}  // namespace surfelmap
