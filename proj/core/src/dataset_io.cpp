#include "surfelmap/dataset_io.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "text_util.hpp"

namespace surfelmap {

namespace {

using textutil::append_double;
using textutil::append_int;
using textutil::parse_double;
using textutil::parse_int;
using textutil::split_ws;
using textutil::strip_comment;

std::string line_tag(const std::filesystem::path& path, int line_no) {
  return path.filename().string() + ":" + std::to_string(line_no);
}

std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return in;
}

// Unit-norm check at parse tolerance, exact normalization only when needed so
// reloading our own output leaves values untouched.
Pose pose_from_tq(const std::array<double, 7>& tq, const std::string& where) {
  const double norm2 = tq[3] * tq[3] + tq[4] * tq[4] + tq[5] * tq[5] +
                       tq[6] * tq[6];
  const double norm = std::sqrt(norm2);
  if (std::abs(norm - 1.0) > 1e-3) {
    throw std::invalid_argument(where + ": quaternion norm " +
                                std::to_string(norm) + " is not unit");
  }
  Eigen::Quaterniond q(tq[6], tq[3], tq[4], tq[5]);
  if (std::abs(norm - 1.0) > 1e-12) {
    q.normalize();
  }
  Pose pose;
  pose.rotation = q.toRotationMatrix();
  pose.translation = Vec3(tq[0], tq[1], tq[2]);
  return pose;
}

std::array<double, 7> tq_from_pose(const Pose& pose) {
  Eigen::Quaterniond q(pose.rotation);
  if (q.w() < 0.0 ||
      (q.w() == 0.0 &&
       (q.x() < 0.0 || (q.x() == 0.0 && (q.y() < 0.0 || (q.y() == 0.0 && q.z() < 0.0)))))) {
    q.coeffs() = -q.coeffs();
  }
  return {pose.translation.x(), pose.translation.y(), pose.translation.z(),
          q.x(), q.y(), q.z(), q.w()};
}

void append_tq(std::string& out, const std::array<double, 7>& tq) {
  for (double v : tq) {
    out += ' ';
    append_double(out, v);
  }
}

std::array<double, 7> parse_tq(const std::vector<std::string_view>& tokens,
                               std::size_t first, const std::string& where) {
  std::array<double, 7> tq{};
  for (std::size_t i = 0; i < 7; ++i) {
    tq[i] = parse_double(tokens[first + i], where);
  }
  return tq;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) * 0.5;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace

CameraProfile load_camera_file(const std::filesystem::path& path) {
  std::ifstream in = open_text(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(strip_comment(line));
    if (tokens.empty()) {
      continue;
    }
    const std::string where = line_tag(path, line_no);
    if (tokens.size() != 9) {
      throw std::invalid_argument(where + ": camera file needs 9 values");
    }
    CameraProfile profile;
    profile.camera.fx = parse_double(tokens[0], where);
    profile.camera.fy = parse_double(tokens[1], where);
    profile.camera.cx = parse_double(tokens[2], where);
    profile.camera.cy = parse_double(tokens[3], where);
    profile.camera.width = static_cast<int>(parse_int(tokens[4], where));
    profile.camera.height = static_cast<int>(parse_int(tokens[5], where));
    profile.camera.baseline = parse_double(tokens[6], where);
    profile.camera.disparity_sigma = parse_double(tokens[7], where);
    profile.depth_scale = parse_double(tokens[8], where);
    profile.camera.validate();
    if (!(profile.depth_scale > 0.0)) {
      throw std::invalid_argument(where + ": depth_scale must be positive");
    }
    return profile;
  }
  throw std::invalid_argument(path.string() + ": empty camera file");
}

void save_camera_file(std::ostream& out, const CameraProfile& profile) {
  std::string line;
  append_double(line, profile.camera.fx);
  line += ' ';
  append_double(line, profile.camera.fy);
  line += ' ';
  append_double(line, profile.camera.cx);
  line += ' ';
  append_double(line, profile.camera.cy);
  line += ' ';
  append_int(line, profile.camera.width);
  line += ' ';
  append_int(line, profile.camera.height);
  line += ' ';
  append_double(line, profile.camera.baseline);
  line += ' ';
  append_double(line, profile.camera.disparity_sigma);
  line += ' ';
  append_double(line, profile.depth_scale);
  line += '\n';
  out << line;
}

SequenceManifest load_sequence(const std::filesystem::path& manifest_path,
                               const CameraProfile& profile) {
  profile.camera.validate();
  SequenceManifest manifest;
  manifest.camera = profile.camera;
  manifest.depth_scale = profile.depth_scale;

  const std::filesystem::path root = manifest_path.parent_path();
  std::ifstream in = open_text(manifest_path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(strip_comment(line));
    if (tokens.empty()) {
      continue;
    }
    const std::string where = line_tag(manifest_path, line_no);
    if (tokens.size() != 3) {
      throw std::invalid_argument(
          where + ": manifest line needs `timestamp intensity depth`");
    }
    SequenceEntry entry;
    entry.timestamp = parse_double(tokens[0], where);
    entry.intensity_path = root / std::filesystem::path(std::string(tokens[1]));
    entry.depth_path = root / std::filesystem::path(std::string(tokens[2]));
    if (!manifest.entries.empty() &&
        !(entry.timestamp > manifest.entries.back().timestamp)) {
      throw std::invalid_argument(where +
                                  ": timestamps must strictly increase");
    }
    if (!std::filesystem::exists(entry.intensity_path)) {
      throw std::runtime_error(where + ": missing file " +
                               entry.intensity_path.string());
    }
    if (!std::filesystem::exists(entry.depth_path)) {
      throw std::runtime_error(where + ": missing file " +
                               entry.depth_path.string());
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

IntensityImage load_intensity_png(const std::filesystem::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw std::runtime_error("unreadable image " + path.string());
  }
  if (raw.depth() != CV_8U ||
      (raw.channels() != 1 && raw.channels() != 3 && raw.channels() != 4)) {
    throw std::runtime_error("unsupported intensity format in " +
                             path.string());
  }
  IntensityImage image(raw.cols, raw.rows);
  for (int y = 0; y < raw.rows; ++y) {
    float* dst = image.row(y);
    if (raw.channels() == 1) {
      const std::uint8_t* src = raw.ptr<std::uint8_t>(y);
      for (int x = 0; x < raw.cols; ++x) {
        dst[x] = static_cast<float>(src[x]);
      }
    } else {
      const std::uint8_t* src = raw.ptr<std::uint8_t>(y);
      const int ch = raw.channels();
      for (int x = 0; x < raw.cols; ++x) {
        const double b = src[x * ch + 0];
        const double g = src[x * ch + 1];
        const double r = src[x * ch + 2];
        dst[x] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
      }
    }
  }
  return image;
}

DepthImage load_depth_png(const std::filesystem::path& path,
                          double depth_scale) {
  if (!(depth_scale > 0.0)) {
    throw std::invalid_argument("depth_scale must be positive");
  }
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw std::runtime_error("unreadable image " + path.string());
  }
  if (raw.type() != CV_16UC1) {
    throw std::runtime_error("depth image must be 16-bit single channel: " +
                             path.string());
  }
  DepthImage image(raw.cols, raw.rows);
  const double inv_scale = 1.0 / depth_scale;
  for (int y = 0; y < raw.rows; ++y) {
    const std::uint16_t* src = raw.ptr<std::uint16_t>(y);
    float* dst = image.row(y);
    for (int x = 0; x < raw.cols; ++x) {
      dst[x] = src[x] == 0
                   ? static_cast<float>(kInvalidDepth)
                   : static_cast<float>(src[x] * inv_scale);
    }
  }
  return image;
}

void save_intensity_png(const std::filesystem::path& path,
                        const IntensityImage& image) {
  if (image.empty()) {
    throw std::invalid_argument("empty intensity image");
  }
  cv::Mat mat(image.height(), image.width(), CV_8UC1);
  for (int y = 0; y < image.height(); ++y) {
    const float* src = image.row(y);
    std::uint8_t* dst = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      dst[x] = static_cast<std::uint8_t>(
          std::clamp(std::lround(src[x]), 0L, 255L));
    }
  }
  if (!cv::imwrite(path.string(), mat)) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

void save_depth_png(const std::filesystem::path& path, const DepthImage& image,
                    double depth_scale) {
  if (image.empty()) {
    throw std::invalid_argument("empty depth image");
  }
  if (!(depth_scale > 0.0)) {
    throw std::invalid_argument("depth_scale must be positive");
  }
  cv::Mat mat(image.height(), image.width(), CV_16UC1);
  for (int y = 0; y < image.height(); ++y) {
    const float* src = image.row(y);
    std::uint16_t* dst = mat.ptr<std::uint16_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      if (!depth_valid(src[x])) {
        dst[x] = 0;
        continue;
      }
      const long stored = std::lround(static_cast<double>(src[x]) * depth_scale);
      dst[x] = static_cast<std::uint16_t>(std::clamp(stored, 0L, 65535L));
    }
  }
  if (!cv::imwrite(path.string(), mat)) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

void save_manifest(std::ostream& out, std::span<const SequenceEntry> entries) {
  std::string line;
  for (const SequenceEntry& e : entries) {
    line.clear();
    append_double(line, e.timestamp);
    line += ' ';
    line += e.intensity_path.generic_string();
    line += ' ';
    line += e.depth_path.generic_string();
    line += '\n';
    out << line;
  }
}

Frame next_frame(const SequenceManifest& manifest, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= manifest.entries.size()) {
    throw std::out_of_range("frame index out of range: " +
                            std::to_string(index));
  }
  const SequenceEntry& entry = manifest.entries[index];
  Frame frame;
  frame.intensity = load_intensity_png(entry.intensity_path);
  frame.depth = load_depth_png(entry.depth_path, manifest.depth_scale);
  if (!frame.intensity.same_size(frame.depth)) {
    throw std::runtime_error("intensity/depth dimensions differ for frame " +
                             std::to_string(index));
  }
  if (frame.intensity.width() != manifest.camera.width ||
      frame.intensity.height() != manifest.camera.height) {
    throw std::runtime_error("frame " + std::to_string(index) +
                             " does not match camera dimensions");
  }
  frame.frame_index = index;
  return frame;
}

std::vector<RawTrackEvent> load_track_file(const std::filesystem::path& path) {
  std::ifstream in = open_text(path);
  std::vector<RawTrackEvent> events;
  RawTrackEvent pending;
  bool pending_used = false;
  bool in_opt = false;
  int opt_frame = 0;
  std::string line;
  int line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(strip_comment(line));
    if (tokens.empty()) {
      continue;
    }
    const std::string where = line_tag(path, line_no);
    const std::string_view kind = tokens[0];

    if (in_opt) {
      if (kind == "KFPOSE") {
        if (tokens.size() != 9) {
          throw std::invalid_argument(where + ": KFPOSE needs id + 7 values");
        }
        const int id = static_cast<int>(parse_int(tokens[1], where));
        const auto tq = parse_tq(tokens, 2, where);
        pose_from_tq(tq, where);  // norm check with line context
        pending.optimized_poses.emplace_back(id, tq);
        continue;
      }
      if (kind == "END") {
        if (tokens.size() != 1) {
          throw std::invalid_argument(where + ": END takes no arguments");
        }
        in_opt = false;
        continue;
      }
      throw std::invalid_argument(where + ": expected KFPOSE or END inside OPT");
    }

    if (kind == "POSE") {
      if (tokens.size() != 10) {
        throw std::invalid_argument(where +
                                    ": POSE needs frame + 7 values + ref_kf");
      }
      pending.frame = static_cast<int>(parse_int(tokens[1], where));
      pending.pose_tq = parse_tq(tokens, 2, where);
      pose_from_tq(pending.pose_tq, where);
      pending.ref_keyframe = static_cast<int>(parse_int(tokens[9], where));
      if (!pending.optimized_poses.empty() && opt_frame != pending.frame) {
        throw std::invalid_argument(
            where + ": OPT frame " + std::to_string(opt_frame) +
            " does not match POSE frame " + std::to_string(pending.frame));
      }
      if (!events.empty() && pending.frame <= events.back().frame) {
        throw std::invalid_argument(where +
                                    ": POSE frames must strictly increase");
      }
      events.push_back(std::move(pending));
      pending = RawTrackEvent{};
      pending_used = false;
      continue;
    }
    if (kind == "KF") {
      if (tokens.size() != 9) {
        throw std::invalid_argument(where + ": KF needs id + 7 values");
      }
      const int id = static_cast<int>(parse_int(tokens[1], where));
      const auto tq = parse_tq(tokens, 2, where);
      pose_from_tq(tq, where);
      pending.new_keyframes.emplace_back(id, tq);
      pending_used = true;
      continue;
    }
    if (kind == "EDGE") {
      if (tokens.size() != 3) {
        throw std::invalid_argument(where + ": EDGE needs two ids");
      }
      pending.new_edges.emplace_back(
          static_cast<int>(parse_int(tokens[1], where)),
          static_cast<int>(parse_int(tokens[2], where)));
      pending_used = true;
      continue;
    }
    if (kind == "OPT") {
      if (tokens.size() != 2) {
        throw std::invalid_argument(where + ": OPT needs a frame index");
      }
      if (!pending.optimized_poses.empty()) {
        throw std::invalid_argument(where + ": multiple OPT blocks per frame");
      }
      opt_frame = static_cast<int>(parse_int(tokens[1], where));
      in_opt = true;
      pending_used = true;
      continue;
    }
    throw std::invalid_argument(where + ": unknown record '" +
                                std::string(kind) + "'");
  }

  if (in_opt) {
    throw std::invalid_argument(path.string() + ": OPT block missing END");
  }
  if (pending_used) {
    throw std::invalid_argument(path.string() +
                                ": dangling records after the last POSE");
  }
  return events;
}

void save_track_file(std::span<const RawTrackEvent> events, std::ostream& out) {
  std::string line;
  for (const RawTrackEvent& e : events) {
    for (const auto& [id, tq] : e.new_keyframes) {
      line.clear();
      line += "KF ";
      append_int(line, id);
      append_tq(line, tq);
      line += '\n';
      out << line;
    }
    for (const auto& [a, b] : e.new_edges) {
      line.clear();
      line += "EDGE ";
      append_int(line, a);
      line += ' ';
      append_int(line, b);
      line += '\n';
      out << line;
    }
    if (!e.optimized_poses.empty()) {
      line.clear();
      line += "OPT ";
      append_int(line, e.frame);
      line += '\n';
      out << line;
      for (const auto& [id, tq] : e.optimized_poses) {
        line.clear();
        line += "  KFPOSE ";
        append_int(line, id);
        append_tq(line, tq);
        line += '\n';
        out << line;
      }
      out << "END\n";
    }
    line.clear();
    line += "POSE ";
    append_int(line, e.frame);
    append_tq(line, e.pose_tq);
    line += ' ';
    append_int(line, e.ref_keyframe);
    line += '\n';
    out << line;
  }
}

std::vector<TrackEvent> events_from_raw(std::span<const RawTrackEvent> raw) {
  std::vector<TrackEvent> events;
  events.reserve(raw.size());
  bool any_ref = false;
  bool any_bare = false;
  for (const RawTrackEvent& r : raw) {
    TrackEvent e;
    e.frame_index = r.frame;
    e.pose = pose_from_tq(r.pose_tq, "POSE frame " + std::to_string(r.frame));
    e.ref_keyframe = r.ref_keyframe;
    for (const auto& [id, tq] : r.new_keyframes) {
      Keyframe kf;
      kf.id = id;
      kf.current_pose = pose_from_tq(tq, "KF " + std::to_string(id));
      kf.last_deformed_pose = kf.current_pose;
      e.graph_update.new_keyframes.push_back(kf);
    }
    e.graph_update.new_edges = r.new_edges;
    for (const auto& [id, tq] : r.optimized_poses) {
      e.graph_update.optimized_poses.emplace_back(
          id, pose_from_tq(tq, "KFPOSE " + std::to_string(id)));
    }
    (e.ref_keyframe < 0 ? any_bare : any_ref) = true;
    if (e.ref_keyframe < 0 && !e.graph_update.empty()) {
      throw std::invalid_argument(
          "trajectory-only POSE (ref -1) cannot carry keyframe records at frame " +
          std::to_string(r.frame));
    }
    events.push_back(std::move(e));
  }
  if (any_ref && any_bare) {
    throw std::invalid_argument(
        "track file mixes trajectory-only and keyframe-referenced poses");
  }
  return events;
}

std::vector<RawTrackEvent> raw_from_events(std::span<const TrackEvent> events) {
  std::vector<RawTrackEvent> raw;
  raw.reserve(events.size());
  for (const TrackEvent& e : events) {
    RawTrackEvent r;
    r.frame = e.frame_index;
    r.pose_tq = tq_from_pose(e.pose);
    r.ref_keyframe = e.ref_keyframe;
    for (const Keyframe& kf : e.graph_update.new_keyframes) {
      r.new_keyframes.emplace_back(kf.id, tq_from_pose(kf.current_pose));
    }
    r.new_edges = e.graph_update.new_edges;
    for (const auto& [id, pose] : e.graph_update.optimized_poses) {
      r.optimized_poses.emplace_back(id, tq_from_pose(pose));
    }
    raw.push_back(std::move(r));
  }
  return raw;
}

std::vector<TrackEvent> load_track_events(const std::filesystem::path& path) {
  return events_from_raw(load_track_file(path));
}

void save_track_events(std::span<const TrackEvent> events, std::ostream& out) {
  const std::vector<RawTrackEvent> raw = raw_from_events(events);
  save_track_file(raw, out);
}

bool trajectory_only(std::span<const TrackEvent> events) {
  if (events.empty()) {
    return false;
  }
  for (const TrackEvent& e : events) {
    if (e.ref_keyframe >= 0) {
      return false;
    }
  }
  return true;
}

std::vector<TrackEvent> synthesize_keyframes(
    std::span<const TrackEvent> trajectory, const KeyframePolicy& policy) {
  if (!(policy.translation_thresh > 0.0) ||
      !(policy.rotation_thresh_deg > 0.0) || !(policy.proximity_factor > 0.0)) {
    throw std::invalid_argument("keyframe policy fields must be positive");
  }
  std::vector<TrackEvent> events;
  events.reserve(trajectory.size());
  std::vector<Vec3> kf_centers;
  const double rot_thresh = policy.rotation_thresh_deg * std::numbers::pi / 180.0;
  const double proximity = policy.translation_thresh * policy.proximity_factor;
  Pose last_kf_pose;
  int current_kf = -1;

  for (const TrackEvent& src : trajectory) {
    TrackEvent e;
    e.frame_index = src.frame_index;
    e.pose = src.pose;

    bool make_kf = current_kf < 0;
    if (!make_kf) {
      const double trans =
          (src.pose.translation - last_kf_pose.translation).norm();
      const double rot = rotation_angle(last_kf_pose.rotation,
                                        src.pose.rotation);
      make_kf = trans > policy.translation_thresh || rot > rot_thresh;
    }
    if (make_kf) {
      const int id = current_kf + 1;
      Keyframe kf;
      kf.id = id;
      kf.current_pose = src.pose;
      kf.last_deformed_pose = src.pose;
      e.graph_update.new_keyframes.push_back(kf);
      if (current_kf >= 0) {
        e.graph_update.new_edges.emplace_back(current_kf, id);
      }
      for (int prev = 0; prev < current_kf; ++prev) {
        if ((kf_centers[prev] - src.pose.translation).norm() <= proximity) {
          e.graph_update.new_edges.emplace_back(prev, id);
        }
      }
      kf_centers.push_back(src.pose.translation);
      current_kf = id;
      last_kf_pose = src.pose;
    }
    e.ref_keyframe = current_kf;
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<std::pair<double, Pose>> load_tum_trajectory(
    const std::filesystem::path& path) {
  std::ifstream in = open_text(path);
  std::vector<std::pair<double, Pose>> result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(strip_comment(line));
    if (tokens.empty()) {
      continue;
    }
    const std::string where = line_tag(path, line_no);
    if (tokens.size() != 8) {
      throw std::invalid_argument(where +
                                  ": trajectory line needs 8 values");
    }
    const double ts = parse_double(tokens[0], where);
    std::array<double, 7> tq{};
    for (std::size_t i = 0; i < 7; ++i) {
      tq[i] = parse_double(tokens[1 + i], where);
    }
    result.emplace_back(ts, pose_from_tq(tq, where));
  }
  return result;
}

}  // namespace surfelmap
