#include "surfelmap/pipeline.hpp"

#include <chrono>
#include <stdexcept>
#include <string>
#include <utility>

namespace surfelmap {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

[[noreturn]] void rethrow_tagged(int frame_index, const char* stage,
                                 const std::exception& e) {
  throw std::runtime_error("frame " + std::to_string(frame_index) +
                           ", stage " + stage + ": " + e.what());
}

}  // namespace

void PipelineConfig::validate() const {
  segmentation.validate();
  surfel_init.validate();
  fusion.validate();
  if (g_delta < 1)
    throw std::invalid_argument("PipelineConfig: g_delta must be positive");
  if (threads < 1)
    throw std::invalid_argument("PipelineConfig: threads must be positive");
  if (!(keyframes.translation_thresh > 0.0) ||
      !(keyframes.rotation_thresh_deg > 0.0) ||
      !(keyframes.proximity_factor > 0.0))
    throw std::invalid_argument(
        "PipelineConfig: keyframe policy thresholds must be positive");
}

SensorProfile profile_from_name(std::string_view name) {
  if (name == "icl") return SensorProfile::kIcl;
  if (name == "kitti-stereo") return SensorProfile::kKittiStereo;
  if (name == "mono") return SensorProfile::kMono;
  throw std::invalid_argument("unknown sensor profile: " + std::string(name));
}

void apply_profile(SensorProfile profile, PipelineConfig& config,
                   CameraModel& camera) {
  double huber = 0.0;
  double sigma = 0.0;
  switch (profile) {
    case SensorProfile::kIcl:
      huber = 0.05;
      sigma = 1.0;
      break;
    case SensorProfile::kKittiStereo:
      huber = 0.5;
      sigma = 2.0;
      break;
    case SensorProfile::kMono:
      huber = 0.5;
      sigma = 4.0;
      break;
  }
  config.segmentation.huber_delta = huber;
  config.surfel_init.huber_delta = huber;
  camera.disparity_sigma = sigma;
}

Pipeline::Pipeline(const CameraModel& camera, const PipelineConfig& config)
    : camera_(camera), config_(config), graph_(config.g_delta) {
  camera_.validate();
  config_.validate();
}

FrameResult Pipeline::process_frame(const Frame& frame,
                                    const TrackEvent& event) {
  if (frame.frame_index != event.frame_index)
    throw std::invalid_argument(
        "frame " + std::to_string(frame.frame_index) +
        ": track event is for frame " + std::to_string(event.frame_index));
  const int fi = frame.frame_index;
  FrameResult result;

  auto start = Clock::now();
  try {
    apply_graph_update(graph_, event.graph_update);
    deform_map(map_, graph_, config_.threads);
    if (!graph_.has_keyframe(event.ref_keyframe))
      throw std::invalid_argument("unknown reference keyframe " +
                                  std::to_string(event.ref_keyframe));
  } catch (const std::exception& e) {
    rethrow_tagged(fi, "deform", e);
  }
  result.timings.deform_ms = ms_since(start);

  Segmentation seg;
  start = Clock::now();
  try {
    seg = segment(frame, config_.segmentation, config_.threads);
  } catch (const std::exception& e) {
    rethrow_tagged(fi, "segment", e);
  }
  result.timings.segment_ms = ms_since(start);

  SurfelInitResult init;
  start = Clock::now();
  try {
    const NormalImage normals = pixel_normals(frame, camera_, config_.threads);
    init = initialize_surfels(frame, seg, normals, config_.surfel_init,
                              camera_, config_.threads);
    for (Surfel& s : init.surfels) s.attached_keyframe = event.ref_keyframe;
  } catch (const std::exception& e) {
    rethrow_tagged(fi, "init", e);
  }
  result.timings.init_ms = ms_since(start);
  result.new_surfels = init.surfels.size();

  std::vector<Surfel> locals;
  start = Clock::now();
  try {
    locals = extract_local_map(map_, graph_, event.ref_keyframe);
  } catch (const std::exception& e) {
    rethrow_tagged(fi, "extract", e);
  }
  result.timings.extract_ms = ms_since(start);

  start = Clock::now();
  try {
    FuseResult fused =
        fuse_frame(locals, init.surfels, init.surfel_of_center, seg,
                   event.pose, event.ref_keyframe, camera_, config_.fusion);
    result.fused = fused.fused_count;
    result.pruned = fused.pruned.size();
    insert_surfels(map_, graph_, fused.surfels);
  } catch (const std::exception& e) {
    rethrow_tagged(fi, "fuse", e);
  }
  result.timings.fuse_ms = ms_since(start);
  result.map_size = map_.size();

  const std::size_t pixels = static_cast<std::size_t>(camera_.width) *
                             static_cast<std::size_t>(camera_.height);
  const std::size_t buffer_bytes =
      pixels * (2 * sizeof(float) + sizeof(Vec3) + sizeof(std::int32_t));
  perf_.rows.push_back({fi, result.timings, map_.size(),
                        map_.size() * sizeof(Surfel) + buffer_bytes});
  return result;
}

std::vector<Surfel> Pipeline::snapshot() const {
  std::vector<Surfel> all;
  all.reserve(map_.size());
  for (const auto& [id, group] : map_.groups())
    all.insert(all.end(), group.begin(), group.end());
  return all;
}

Pipeline run_pipeline(const SequenceManifest& manifest,
                      std::span<const TrackEvent> events,
                      const PipelineConfig& config,
                      const FrameCallback& callback) {
  std::vector<TrackEvent> synthesized;
  if (trajectory_only(events)) {
    synthesized = synthesize_keyframes(events, config.keyframes);
    events = synthesized;
  }

  Pipeline pipeline(manifest.camera, config);
  for (const TrackEvent& event : events) {
    if (event.frame_index < 0 ||
        event.frame_index >= static_cast<int>(manifest.entries.size()))
      throw std::out_of_range("frame " + std::to_string(event.frame_index) +
                              ": not in the sequence manifest");
    Frame frame = next_frame(manifest, event.frame_index);
    frame.pose = event.pose;
    frame.ref_keyframe = event.ref_keyframe;
    const FrameResult result = pipeline.process_frame(frame, event);
    if (callback) callback(frame, result, pipeline);
  }
  return pipeline;
}

}  // namespace surfelmap
