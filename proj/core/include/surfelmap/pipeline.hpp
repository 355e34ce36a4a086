#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "surfelmap/core_types.hpp"
#include "surfelmap/dataset_io.hpp"
#include "surfelmap/evaluation.hpp"
#include "surfelmap/fusion.hpp"
#include "surfelmap/pose_graph.hpp"
#include "surfelmap/superpixel.hpp"
#include "surfelmap/surfel_init.hpp"

namespace surfelmap {

struct PipelineConfig {
  SegmentationConfig segmentation;
  SurfelInitConfig surfel_init;
  FusionConfig fusion;
  int g_delta = 20;
  int threads = 1;
  KeyframePolicy keyframes;  // used only for trajectory-only input

  void validate() const;
};

/// Sensor presets bundling the robust-loss scale with the expected disparity
/// noise of the depth source.
enum class SensorProfile { kIcl, kKittiStereo, kMono };

/// Accepts "icl", "kitti-stereo", "mono".
SensorProfile profile_from_name(std::string_view name);

/// Sets both Huber deltas and overwrites camera.disparity_sigma.
void apply_profile(SensorProfile profile, PipelineConfig& config,
                   CameraModel& camera);

struct FrameResult {
  StageTimings timings;
  std::size_t new_surfels = 0;  // surfels extracted from this frame
  int fused = 0;
  std::size_t pruned = 0;
  std::size_t map_size = 0;  // database size after insertion
};

/// Owns the pose graph and the surfel database and advances them one frame
/// at a time: deform, segment, init, extract, fuse.
class Pipeline {
public:
  Pipeline(const CameraModel& camera, const PipelineConfig& config);

  /// frame.frame_index must match event.frame_index; the event's pose and
  /// reference keyframe are authoritative. Errors carry the frame index and
  /// the stage name.
  FrameResult process_frame(const Frame& frame, const TrackEvent& event);

  const CameraModel& camera() const { return camera_; }
  const PoseGraph& graph() const { return graph_; }
  const MapDatabase& map() const { return map_; }
  const PerfReport& perf() const { return perf_; }

  /// World-frame copy of every stored surfel, ascending keyframe groups.
  std::vector<Surfel> snapshot() const;

private:
  CameraModel camera_;
  PipelineConfig config_;
  PoseGraph graph_;
  MapDatabase map_;
  PerfReport perf_;
};

using FrameCallback =
    std::function<void(const Frame&, const FrameResult&, const Pipeline&)>;

/// Processes every event against its manifest frame, in order. A
/// trajectory-only event list is first run through synthesize_keyframes with
/// config.keyframes. The callback, when set, fires after each frame.
Pipeline run_pipeline(const SequenceManifest& manifest,
                      std::span<const TrackEvent> events,
                      const PipelineConfig& config,
                      const FrameCallback& callback = {});

}  // namespace surfelmap
