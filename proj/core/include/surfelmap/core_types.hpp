#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace surfelmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Depth images use NaN as the "no measurement" sentinel. Downstream code
// should only ever test validity through depth_valid().
inline constexpr float kInvalidDepth = std::numeric_limits<float>::quiet_NaN();

inline bool depth_valid(float d) { return std::isfinite(d) && d > 0.0f; }
inline bool depth_valid(double d) { return std::isfinite(d) && d > 0.0; }

/// Dense row-major W×H raster.
template <typename T>
class Image {
public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(extent(width, height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_; }
  const T* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_;
  }

  bool contains(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }
  template <typename U>
  bool same_size(const Image<U>& o) const {
    return width_ == o.width() && height_ == o.height();
  }

  /// Byte-wise comparison; distinguishes NaN payloads, which makes it the
  /// right equality for determinism checks.
  bool bitwise_equal(const Image& o) const {
    return same_size(o) &&
           (data_.empty() ||
            std::memcmp(data_.data(), o.data_.data(),
                        data_.size() * sizeof(T)) == 0);
  }

private:
  static std::size_t extent(int width, int height) {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("Image: non-positive dimensions");
    return static_cast<std::size_t>(width) * height;
  }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using IntensityImage = Image<float>;  // grayscale, [0, 255]
using DepthImage = Image<float>;      // meters, NaN = invalid
using LabelImage = Image<std::int32_t>;

/// Pinhole camera with the stereo disparity noise model (baseline b and
/// disparity std sigma) that drives surfel weights and fusion gates.
struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double baseline = 0.0;         // meters
  double disparity_sigma = 0.0;  // pixels

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw std::invalid_argument("CameraModel: focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("CameraModel: image size must be positive");
    if (!(baseline > 0.0))
      throw std::invalid_argument("CameraModel: baseline must be positive");
    if (!(disparity_sigma > 0.0))
      throw std::invalid_argument("CameraModel: disparity sigma must be positive");
  }

  bool contains_pixel(int u, int v) const {
    return u >= 0 && u < width && v >= 0 && v < height;
  }
};

inline Vec2 project(const CameraModel& cam, const Vec3& p) {
  if (!(p.z() > 0.0))
    throw std::domain_error("project: point behind camera");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

inline Vec3 backproject(const CameraModel& cam, const Vec2& u, double depth) {
  if (!depth_valid(depth))
    throw std::domain_error("backproject: invalid depth");
  return {(u.x() - cam.cx) / cam.fx * depth, (u.y() - cam.cy) / cam.fy * depth,
          depth};
}

/// K^{-1} [u, v, 1]^T — the viewing ray with unit z.
inline Vec3 pixel_ray(const CameraModel& cam, double u, double v) {
  return {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
}

/// Rigid camera-to-world transform. Rotations live as matrices everywhere
/// in-process; quaternions appear only at the file I/O boundary.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  Pose inverse() const {
    Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  Vec3 transform_point(const Vec3& p) const { return rotation * p + translation; }
  Vec3 transform_vector(const Vec3& v) const { return rotation * v; }

  bool is_rigid(double tol = 1e-9) const {
    Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
    return err.cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  bool operator==(const Pose& o) const {
    return rotation == o.rotation && translation == o.translation;
  }
  bool operator!=(const Pose& o) const { return !(*this == o); }
};

/// One intensity/depth input pair with its tracked pose.
struct Frame {
  IntensityImage intensity;
  DepthImage depth;
  Pose pose;              // camera-to-world
  int ref_keyframe = -1;  // reference keyframe id from the tracker
  int frame_index = 0;
};

/// The map atom: an oriented disk with confidence bookkeeping.
struct Surfel {
  Vec3 position = Vec3::Zero();  // world frame (camera frame before insertion)
  Vec3 normal = Vec3::UnitZ();   // unit length
  double intensity = 0.0;
  double weight = 0.0;  // inverse depth variance, 1/m^2
  double radius = 0.0;  // meters
  int update_count = 0;
  int attached_keyframe = -1;
};

}  // namespace surfelmap
