#include "surfelmap/surfel_init.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "surfelmap/parallel.hpp"

namespace surfelmap {

void SurfelInitConfig::validate() const {
  if (min_pixels <= 0 || !(huber_delta > 0.0) || !(grazing_eps > 0.0)) {
    throw std::invalid_argument("surfel init config fields must be positive");
  }
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline Vec3 invalid_normal() { return Vec3(kNaN, kNaN, kNaN); }

}  // namespace

NormalImage pixel_normals(const Frame& frame, const CameraModel& camera,
                          int threads) {
  camera.validate();
  if (frame.depth.empty() || frame.depth.width() != camera.width ||
      frame.depth.height() != camera.height) {
    throw std::invalid_argument("depth image does not match camera size");
  }
  const int width = frame.depth.width();
  const int height = frame.depth.height();

  // Back-projected point per pixel; x/y left unset where depth is invalid.
  Image<Vec3> points(width, height);
  parallel_for_blocks(static_cast<std::size_t>(height), threads,
                      [&](std::size_t y_begin, std::size_t y_end) {
    for (std::size_t py = y_begin; py < y_end; ++py) {
      const float* depth_row = frame.depth.row(static_cast<int>(py));
      Vec3* point_row = points.row(static_cast<int>(py));
      const double ry = (static_cast<double>(py) - camera.cy) / camera.fy;
      for (int px = 0; px < width; ++px) {
        const float d = depth_row[px];
        if (depth_valid(d)) {
          const double rx = (px - camera.cx) / camera.fx;
          point_row[px] = Vec3(rx * d, ry * d, d);
        } else {
          point_row[px] = Vec3(0, 0, kNaN);
        }
      }
    }
  });

  NormalImage normals(width, height);
  parallel_for_blocks(static_cast<std::size_t>(height), threads,
                      [&](std::size_t y_begin, std::size_t y_end) {
    for (std::size_t sy = y_begin; sy < y_end; ++sy) {
      const int py = static_cast<int>(sy);
      Vec3* normal_row = normals.row(py);
      if (py == 0 || py == height - 1) {
        for (int px = 0; px < width; ++px) normal_row[px] = invalid_normal();
        continue;
      }
      const Vec3* row_up = points.row(py - 1);
      const Vec3* row_mid = points.row(py);
      const Vec3* row_down = points.row(py + 1);
      normal_row[0] = invalid_normal();
      normal_row[width - 1] = invalid_normal();
      for (int px = 1; px < width - 1; ++px) {
        const Vec3& center = row_mid[px];
        const Vec3& left = row_mid[px - 1];
        const Vec3& right = row_mid[px + 1];
        const Vec3& up = row_up[px];
        const Vec3& down = row_down[px];
        if (!depth_valid(center.z()) || !depth_valid(left.z()) ||
            !depth_valid(right.z()) || !depth_valid(up.z()) ||
            !depth_valid(down.z())) {
          normal_row[px] = invalid_normal();
          continue;
        }
        Vec3 n = (right - left).cross(down - up);
        const double len = n.norm();
        if (len < 1e-12) {
          normal_row[px] = invalid_normal();
          continue;
        }
        n /= len;
        if (n.dot(center) > 0.0) {
          n = -n;
        }
        normal_row[px] = n;
      }
    }
  });
  return normals;
}

PlaneFit fit_plane(std::span<const Vec3> points, const Vec3& initial_normal,
                   double huber_delta) {
  if (points.size() < 3) {
    throw std::invalid_argument("degenerate plane: fewer than 3 points");
  }
  if (!(huber_delta > 0.0)) {
    throw std::invalid_argument("huber delta must be positive");
  }
  const double init_len = initial_normal.norm();
  if (!(init_len > 1e-12) || !initial_normal.allFinite()) {
    throw std::invalid_argument("invalid initial normal");
  }

  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= static_cast<double>(points.size());

  // Centered coordinates are constant across iterations; SoA layout lets the
  // accumulation loop below vectorize. The scratch persists per thread.
  const std::size_t count = points.size();
  thread_local std::vector<double> scratch;
  scratch.resize(3 * count);
  double* const qx = scratch.data();
  double* const qy = qx + count;
  double* const qz = qy + count;
  for (std::size_t i = 0; i < count; ++i) {
    const Vec3 q = points[i] - mean;
    qx[i] = q.x();
    qy[i] = q.y();
    qz[i] = q.z();
  }

  Vec3 n = initial_normal / init_len;
  double b = 0.0;

  for (int iter = 0; iter < 10; ++iter) {
    // Tangent basis of the current normal.
    const Vec3 pick = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 t1 = n.cross(pick).normalized();
    const Vec3 t2 = n.cross(t1);

    // Nine unique sums of the weighted normal equations: jtj is symmetric and
    // the third Jacobian column is the constant 1. The simd pragma licenses
    // the reduction reassociation the vectorizer needs.
    double a00 = 0.0, a01 = 0.0, a02 = 0.0, a11 = 0.0, a12 = 0.0, a22 = 0.0;
    double r0 = 0.0, r1 = 0.0, r2 = 0.0;
    const double nx = n.x(), ny = n.y(), nz = n.z();
    const double t1x = t1.x(), t1y = t1.y(), t1z = t1.z();
    const double t2x = t2.x(), t2y = t2.y(), t2z = t2.z();
#pragma omp simd simdlen(8) \
    reduction(+ : a00, a01, a02, a11, a12, a22, r0, r1, r2)
    for (std::size_t k = 0; k < count; ++k) {
      const double x = qx[k], y = qy[k], z = qz[k];
      const double r = nx * x + ny * y + nz * z + b;
      const double j0 = t1x * x + t1y * y + t1z * z;
      const double j1 = t2x * x + t2y * y + t2z * z;
      const double ar = std::abs(r);
      const double denom = ar > huber_delta ? ar : huber_delta;
      const double w = huber_delta / denom;
      const double wr = w * r;
      a00 += w * j0 * j0;
      a01 += w * j0 * j1;
      a02 += w * j0;
      a11 += w * j1 * j1;
      a12 += w * j1;
      a22 += w;
      r0 += wr * j0;
      r1 += wr * j1;
      r2 += wr;
    }

    Eigen::Matrix3d jtj;
    Eigen::Vector3d jtr;
    jtj << a00, a01, a02, a01, a11, a12, a02, a12, a22;
    jtr << r0, r1, r2;

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig;
    eig.computeDirect(jtj, Eigen::EigenvaluesOnly);
    const double ev_min = eig.eigenvalues()(0);
    const double ev_max = eig.eigenvalues()(2);
    if (!(ev_max > 0.0) || ev_min < 1e-12 * ev_max) {
      throw std::invalid_argument("degenerate plane: rank-deficient point set");
    }
    const Eigen::Vector3d step = jtj.ldlt().solve(-jtr);
    n = (n + step.x() * t1 + step.y() * t2).normalized();
    b += step.z();
    if (step.norm() < 1e-6) {
      break;
    }
  }

  if (n.dot(mean) > 0.0) {
    n = -n;
    b = -b;
  }

  PlaneFit fit;
  fit.normal = n;
  fit.bias_b = b;
  fit.mean_point = mean;
  fit.inlier_count = 0;
  for (const Vec3& p : points) {
    if (std::abs(n.dot(p - mean) + b) <= huber_delta) {
      ++fit.inlier_count;
    }
  }
  return fit;
}

Vec3 surfel_position(const PlaneFit& fit, const Vec2& center_pixel,
                     const CameraModel& camera, double grazing_eps) {
  const Vec3 ray = pixel_ray(camera, center_pixel.x(), center_pixel.y());
  const double denom = fit.normal.dot(ray);
  if (std::abs(denom) <= grazing_eps) {
    throw std::domain_error("grazing surfel");
  }
  const double t = (fit.normal.dot(fit.mean_point) - fit.bias_b) / denom;
  return t * ray;
}

double surfel_radius(const PlaneFit& fit, const Vec3& position, double r_i,
                     const CameraModel& camera, double grazing_eps) {
  if (!(position.z() > 0.0)) {
    throw std::domain_error("surfel behind camera");
  }
  const Vec3 ray = position / position.z();
  const double denom = fit.normal.dot(ray);
  if (std::abs(denom) <= grazing_eps) {
    throw std::domain_error("grazing surfel");
  }
  return position.z() * r_i * ray.norm() / (camera.fx * std::abs(denom));
}

double surfel_weight(double depth_z, const CameraModel& camera) {
  if (!(depth_z > 0.0)) {
    throw std::domain_error("surfel weight requires positive depth");
  }
  const double bf = camera.baseline * camera.fx;
  const double z2 = depth_z * depth_z;
  return bf * bf / (z2 * z2 * camera.disparity_sigma * camera.disparity_sigma);
}

SurfelInitResult initialize_surfels(const Frame& frame,
                                    const Segmentation& segmentation,
                                    const NormalImage& normals,
                                    const SurfelInitConfig& cfg,
                                    const CameraModel& camera,
                                    int threads) {
  cfg.validate();
  camera.validate();
  if (!segmentation.labels.same_size(frame.depth) ||
      !normals.same_size(frame.depth)) {
    throw std::invalid_argument("segmentation/normals do not match frame");
  }

  const std::size_t n = segmentation.centers.size();
  const int width = frame.depth.width();
  const int height = frame.depth.height();

  // Bucket member points (valid depth) and normal sums per center.
  std::vector<int> point_count(n, 0);
  std::vector<Vec3> normal_sum(n, Vec3::Zero());
  std::vector<int> normal_count(n, 0);
  for (int py = 0; py < height; ++py) {
    const std::int32_t* label_row = segmentation.labels.row(py);
    const float* depth_row = frame.depth.row(py);
    const Vec3* normal_row = normals.row(py);
    for (int px = 0; px < width; ++px) {
      const std::int32_t label = label_row[px];
      if (label < 0 || static_cast<std::size_t>(label) >= n) {
        throw std::invalid_argument("label out of range");
      }
      if (depth_valid(depth_row[px])) {
        ++point_count[label];
      }
      if (normal_valid(normal_row[px])) {
        normal_sum[label] += normal_row[px];
        ++normal_count[label];
      }
    }
  }

  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    offset[i + 1] = offset[i] + static_cast<std::size_t>(point_count[i]);
  }
  std::vector<Vec3> point_pool(offset[n]);
  std::vector<std::size_t> cursor(offset.begin(), offset.end() - 1);
  for (int py = 0; py < height; ++py) {
    const std::int32_t* label_row = segmentation.labels.row(py);
    const float* depth_row = frame.depth.row(py);
    const double ry = (py - camera.cy) / camera.fy;
    for (int px = 0; px < width; ++px) {
      const float d = depth_row[px];
      if (!depth_valid(d)) {
        continue;
      }
      const double rx = (px - camera.cx) / camera.fx;
      point_pool[cursor[label_row[px]]++] =
          Vec3(rx * static_cast<double>(d), ry * static_cast<double>(d),
               static_cast<double>(d));
    }
  }

  std::vector<std::int8_t> outcome(n, 0);  // 0 ineligible, 1 surfel, -1 skipped
  std::vector<Surfel> slots(n);
  parallel_for_blocks(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ClusterCenter& c = segmentation.centers[i];
      if (c.empty || c.pixel_count <= cfg.min_pixels || !c.has_depth()) {
        continue;
      }
      if (point_count[i] < 3 || normal_count[i] == 0 ||
          normal_sum[i].norm() < 1e-12) {
        outcome[i] = -1;
        continue;
      }
      try {
        const std::span<const Vec3> pts(point_pool.data() + offset[i],
                                        offset[i + 1] - offset[i]);
        const PlaneFit fit = fit_plane(pts, normal_sum[i], cfg.huber_delta);
        const Vec3 position = surfel_position(fit, Vec2(c.x, c.y), camera,
                                              cfg.grazing_eps);
        if (!(position.z() > 0.0)) {
          outcome[i] = -1;
          continue;
        }
        Surfel s;
        s.position = position;
        s.normal = fit.normal;
        s.intensity = c.intensity;
        s.radius = surfel_radius(fit, position, c.radius, camera,
                                 cfg.grazing_eps);
        s.weight = surfel_weight(position.z(), camera);
        s.update_count = 0;
        s.attached_keyframe = frame.ref_keyframe;
        slots[i] = s;
        outcome[i] = 1;
      } catch (const std::exception&) {
        outcome[i] = -1;
      }
    }
  });

  SurfelInitResult result;
  result.surfel_of_center.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (outcome[i] == 1) {
      result.surfel_of_center[i] = static_cast<int>(result.surfels.size());
      result.surfels.push_back(slots[i]);
    } else if (outcome[i] == -1) {
      ++result.skipped;
    }
  }
  return result;
}

}  // namespace surfelmap
