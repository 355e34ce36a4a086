#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "surfelmap/core_types.hpp"
#include "surfelmap/pose_graph.hpp"

namespace surfelmap {

/// Camera intrinsics plus the divisor turning stored integer depth into
/// meters. File format: `fx fy cx cy width height baseline sigma depth_scale`.
struct CameraProfile {
  CameraModel camera;
  double depth_scale = 5000.0;
};

CameraProfile load_camera_file(const std::filesystem::path& path);
void save_camera_file(std::ostream& out, const CameraProfile& profile);

struct SequenceEntry {
  double timestamp = 0.0;
  std::filesystem::path intensity_path;
  std::filesystem::path depth_path;
};

struct SequenceManifest {
  std::vector<SequenceEntry> entries;
  CameraModel camera;
  double depth_scale = 5000.0;
};

/// Manifest lines: `timestamp intensity_path depth_path`, # comments allowed.
/// Relative paths resolve against the manifest directory; every referenced
/// file must exist and timestamps must strictly increase.
SequenceManifest load_sequence(const std::filesystem::path& manifest_path,
                               const CameraProfile& profile);

/// Decodes the indexed entry. Intensity collapses to grayscale [0, 255] via
/// luminance weights 0.299/0.587/0.114; stored depth 0 becomes invalid.
Frame next_frame(const SequenceManifest& manifest, int index);

/// Per-frame localization record: pose, reference keyframe, and the graph
/// mutations taking effect at this frame. ref_keyframe -1 marks a
/// trajectory-only record (keyframes must then be synthesized).
struct TrackEvent {
  int frame_index = 0;
  Pose pose;  // world from camera
  int ref_keyframe = -1;
  GraphUpdate graph_update;
};

/// Records: `POSE frame tx ty tz qx qy qz qw ref_kf`,
/// `KF id tx ty tz qx qy qz qw`, `EDGE id1 id2`,
/// `OPT frame` + `KFPOSE id tx ty tz qx qy qz qw`... + `END`.
/// Quaternions are (qx,qy,qz,qw), world-from-camera; KF/EDGE/OPT records
/// attach to the next POSE line and OPT's frame must match it.
std::vector<TrackEvent> load_track_events(const std::filesystem::path& path);

/// Canonical form of the same format; reload-then-save is a fixed point.
void save_track_events(std::span<const TrackEvent> events, std::ostream& out);

bool trajectory_only(std::span<const TrackEvent> events);

/// Verbatim numeric view of one track-file event, keeping the parsed values
/// so canonical re-serialization is byte-stable.
struct RawTrackEvent {
  int frame = 0;
  std::array<double, 7> pose_tq{};  // tx ty tz qx qy qz qw
  int ref_keyframe = -1;
  std::vector<std::pair<int, std::array<double, 7>>> new_keyframes;
  std::vector<std::pair<int, int>> new_edges;
  std::vector<std::pair<int, std::array<double, 7>>> optimized_poses;
};

std::vector<RawTrackEvent> load_track_file(const std::filesystem::path& path);
void save_track_file(std::span<const RawTrackEvent> events, std::ostream& out);
std::vector<TrackEvent> events_from_raw(std::span<const RawTrackEvent> raw);
std::vector<RawTrackEvent> raw_from_events(std::span<const TrackEvent> events);

struct KeyframePolicy {
  double translation_thresh = 0.25;  // meters since the last keyframe
  double rotation_thresh_deg = 15.0;
  double proximity_factor = 2.0;  // edge when centers within factor * t_thresh
};

/// Builds keyframe/edge structure over a trajectory-only event list: a new
/// keyframe whenever motion since the last one exceeds a threshold,
/// sequential edges between consecutive keyframes, proximity edges between
/// nearby ones. Every event's ref_keyframe becomes the latest keyframe.
std::vector<TrackEvent> synthesize_keyframes(std::span<const TrackEvent> trajectory,
                                             const KeyframePolicy& policy);

/// TUM trajectory lines: `timestamp tx ty tz qx qy qz qw`.
std::vector<std::pair<double, Pose>> load_tum_trajectory(
    const std::filesystem::path& path);

IntensityImage load_intensity_png(const std::filesystem::path& path);
DepthImage load_depth_png(const std::filesystem::path& path,
                          double depth_scale);
void save_intensity_png(const std::filesystem::path& path,
                        const IntensityImage& image);
void save_depth_png(const std::filesystem::path& path, const DepthImage& image,
                    double depth_scale);

/// Manifest writer; paths are emitted as given (use relative paths).
void save_manifest(std::ostream& out, std::span<const SequenceEntry> entries);

}  // namespace surfelmap
