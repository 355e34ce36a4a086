#include "surfelmap/superpixel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "surfelmap/parallel.hpp"

namespace surfelmap {

void SegmentationConfig::validate() const {
  if (grid_spacing <= 0 || iterations <= 0 || min_pixels <= 0 ||
      !(spatial_norm > 0.0) || !(intensity_norm > 0.0) ||
      !(inv_depth_norm > 0.0) || !(huber_delta > 0.0)) {
    throw std::invalid_argument("segmentation config fields must be positive");
  }
}

namespace {

void check_frame(const Frame& frame, const SegmentationConfig& cfg) {
  if (frame.intensity.empty() || frame.depth.empty() ||
      !frame.intensity.same_size(frame.depth)) {
    throw std::invalid_argument("frame needs matching intensity and depth images");
  }
  if (frame.intensity.width() < cfg.grid_spacing ||
      frame.intensity.height() < cfg.grid_spacing) {
    throw std::invalid_argument("frame smaller than grid spacing");
  }
}

// Grid cell indices whose seeds bracket coordinate p, clamped to the grid.
inline void bracketing_cells(int p, int half, int spacing, int limit, int& lo,
                             int& hi) {
  const int t = p - half;
  const int i = t >= 0 ? t / spacing : -1;
  lo = std::clamp(i, 0, limit - 1);
  hi = std::clamp(i + 1, 0, limit - 1);
}

void append_number(std::string& line, double v) {
  char buf[32];
  if (std::isnan(v)) {
    line += "nan";
    return;
  }
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  line.append(buf, res.ptr);
}

// Same estimator as robust_mean_depth, bit-identical, but reorders its input
// so the per-center hot path skips the copy.
double robust_mean_inplace(std::span<double> depths, double huber_delta) {
  const std::size_t n = depths.size();
  const auto mid = depths.begin() + n / 2;
  std::nth_element(depths.begin(), mid, depths.end());
  double mean = *mid;
  if (n % 2 == 0) {
    mean = 0.5 * (*std::max_element(depths.begin(), mid) + mean);
  }

  // w = min(1, delta/|r|) rewritten as delta / max(delta, |r|): branch free,
  // finite at r = 0, and the simd pragma licenses the reduction reassociation
  // the vectorizer needs.
  for (int iter = 0; iter < 10; ++iter) {
    double ws_sum = 0.0;
    double wr_sum = 0.0;
#pragma omp simd reduction(+ : ws_sum, wr_sum)
    for (std::size_t k = 0; k < n; ++k) {
      const double r = depths[k] - mean;
      const double ar = std::abs(r);
      const double denom = ar > huber_delta ? ar : huber_delta;
      const double w = huber_delta / denom;
      ws_sum += w;
      wr_sum += w * r;
    }
    const double step = wr_sum / ws_sum;
    mean += step;
    if (std::abs(step) < 1e-6) {
      break;
    }
  }
  return mean;
}

}  // namespace

std::vector<ClusterCenter> initialize_centers(const Frame& frame,
                                              const SegmentationConfig& cfg) {
  cfg.validate();
  check_frame(frame, cfg);
  const int spacing = cfg.grid_spacing;
  const int half = spacing / 2;
  const int cols = frame.intensity.width() / spacing;
  const int rows = frame.intensity.height() / spacing;
  std::vector<ClusterCenter> centers;
  centers.reserve(static_cast<std::size_t>(cols) * rows);
  for (int gy = 0; gy < rows; ++gy) {
    for (int gx = 0; gx < cols; ++gx) {
      const int px = gx * spacing + half;
      const int py = gy * spacing + half;
      ClusterCenter c;
      c.x = px;
      c.y = py;
      c.intensity = frame.intensity(px, py);
      const float d = frame.depth(px, py);
      c.depth = depth_valid(d) ? static_cast<double>(d) : kInvalidDepth;
      centers.push_back(c);
    }
  }
  return centers;
}

double pixel_distance(const ClusterCenter& center, double px, double py,
                      double intensity, const SegmentationConfig& cfg) {
  const double dx = center.x - px;
  const double dy = center.y - py;
  const double dc = center.intensity - intensity;
  return (dx * dx + dy * dy) / (cfg.spatial_norm * cfg.spatial_norm) +
         (dc * dc) / (cfg.intensity_norm * cfg.intensity_norm);
}

double pixel_distance_depth(const ClusterCenter& center, double px, double py,
                            double intensity, double depth,
                            const SegmentationConfig& cfg) {
  if (!center.has_depth() || !depth_valid(depth)) {
    throw std::domain_error("pixel_distance_depth requires valid depth on both sides");
  }
  const double dd = 1.0 / center.depth - 1.0 / depth;
  return pixel_distance(center, px, py, intensity, cfg) +
         (dd * dd) / (cfg.inv_depth_norm * cfg.inv_depth_norm);
}

LabelImage assign_pixels(const Frame& frame,
                         const std::vector<ClusterCenter>& centers,
                         int grid_cols, int grid_rows,
                         const SegmentationConfig& cfg, int threads) {
  cfg.validate();
  check_frame(frame, cfg);
  if (centers.empty()) {
    throw std::invalid_argument("assign_pixels requires centers");
  }
  if (grid_cols <= 0 || grid_rows <= 0 ||
      static_cast<std::size_t>(grid_cols) * grid_rows != centers.size()) {
    throw std::invalid_argument("grid shape does not match center count");
  }

  const int width = frame.intensity.width();
  const int height = frame.intensity.height();
  const int spacing = cfg.grid_spacing;
  const int half = spacing / 2;
  const double inv_ns2 = 1.0 / (cfg.spatial_norm * cfg.spatial_norm);
  const double inv_nc2 = 1.0 / (cfg.intensity_norm * cfg.intensity_norm);
  const double inv_nd2 = 1.0 / (cfg.inv_depth_norm * cfg.inv_depth_norm);

  // Hoisted per-center depth state keeps the pixel loop division-free.
  const std::size_t n = centers.size();
  std::vector<double> center_inv_depth(n, 0.0);
  std::vector<std::uint8_t> center_depth_ok(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (centers[i].has_depth()) {
      center_inv_depth[i] = 1.0 / centers[i].depth;
      center_depth_ok[i] = 1;
    }
  }

  LabelImage labels(width, height);
  parallel_for_blocks(static_cast<std::size_t>(height), threads,
                      [&](std::size_t y_begin, std::size_t y_end) {
    for (std::size_t py = y_begin; py < y_end; ++py) {
      int r0, r1;
      bracketing_cells(static_cast<int>(py), half, spacing, grid_rows, r0, r1);
      const float* intensity_row = frame.intensity.row(static_cast<int>(py));
      const float* depth_row = frame.depth.row(static_cast<int>(py));
      std::int32_t* label_row = labels.row(static_cast<int>(py));
      for (int px = 0; px < width; ++px) {
        int c0, c1;
        bracketing_cells(px, half, spacing, grid_cols, c0, c1);
        const int cand[4] = {r0 * grid_cols + c0, r0 * grid_cols + c1,
                             r1 * grid_cols + c0, r1 * grid_cols + c1};
        const double ci = intensity_row[px];
        const float di = depth_row[px];
        const bool use_depth = depth_valid(di) && center_depth_ok[cand[0]] &&
                               center_depth_ok[cand[1]] &&
                               center_depth_ok[cand[2]] &&
                               center_depth_ok[cand[3]];
        const double inv_d = use_depth ? 1.0 / static_cast<double>(di) : 0.0;
        int best = cand[0];
        double best_dist = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 4; ++k) {
          const ClusterCenter& c = centers[cand[k]];
          const double dx = c.x - px;
          const double dy = c.y - static_cast<double>(py);
          const double dc = c.intensity - ci;
          double dist = (dx * dx + dy * dy) * inv_ns2 + dc * dc * inv_nc2;
          if (use_depth) {
            const double dd = center_inv_depth[cand[k]] - inv_d;
            dist += dd * dd * inv_nd2;
          }
          if (dist < best_dist) {
            best_dist = dist;
            best = cand[k];
          }
        }
        label_row[px] = best;
      }
    }
  });
  return labels;
}

double robust_mean_depth(std::span<const double> depths, double huber_delta) {
  if (depths.empty()) {
    throw std::invalid_argument("robust_mean_depth requires at least one depth");
  }
  if (!(huber_delta > 0.0)) {
    throw std::invalid_argument("huber delta must be positive");
  }

  std::vector<double> scratch(depths.begin(), depths.end());
  return robust_mean_inplace(scratch, huber_delta);
}

void update_centers(const Frame& frame, const LabelImage& labels,
                    std::vector<ClusterCenter>& centers,
                    const SegmentationConfig& cfg) {
  cfg.validate();
  check_frame(frame, cfg);
  if (!labels.same_size(frame.intensity)) {
    throw std::invalid_argument("labels do not match frame size");
  }
  const std::size_t n = centers.size();
  const int width = labels.width();
  const int height = labels.height();

  std::vector<double> sum_x(n, 0.0), sum_y(n, 0.0), sum_c(n, 0.0);
  std::vector<int> count(n, 0), depth_count(n, 0);
  for (int py = 0; py < height; ++py) {
    const std::int32_t* label_row = labels.row(py);
    const float* intensity_row = frame.intensity.row(py);
    const float* depth_row = frame.depth.row(py);
    for (int px = 0; px < width; ++px) {
      const std::int32_t label = label_row[px];
      if (label < 0 || static_cast<std::size_t>(label) >= n) {
        throw std::invalid_argument("label out of range");
      }
      sum_x[label] += px;
      sum_y[label] += py;
      sum_c[label] += intensity_row[px];
      ++count[label];
      if (depth_valid(depth_row[px])) {
        ++depth_count[label];
      }
    }
  }

  // Valid member depths, bucketed per center via a counting sort.
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    offset[i + 1] = offset[i] + static_cast<std::size_t>(depth_count[i]);
  }
  std::vector<double> depth_pool(offset[n]);
  std::vector<std::size_t> cursor(offset.begin(), offset.end() - 1);
  for (int py = 0; py < height; ++py) {
    const std::int32_t* label_row = labels.row(py);
    const float* depth_row = frame.depth.row(py);
    for (int px = 0; px < width; ++px) {
      const float d = depth_row[px];
      if (depth_valid(d)) {
        depth_pool[cursor[label_row[px]]++] = static_cast<double>(d);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    ClusterCenter& c = centers[i];
    if (count[i] == 0) {
      c.pixel_count = 0;
      c.valid_depth_count = 0;
      c.empty = true;
      continue;
    }
    const double inv = 1.0 / count[i];
    c.x = sum_x[i] * inv;
    c.y = sum_y[i] * inv;
    c.intensity = sum_c[i] * inv;
    c.pixel_count = count[i];
    c.valid_depth_count = depth_count[i];
    c.empty = false;

    const std::span<double> member_depths(depth_pool.data() + offset[i],
                                          offset[i + 1] - offset[i]);
    if (c.has_depth()) {
      c.depth = member_depths.empty()
                    ? kInvalidDepth
                    : robust_mean_inplace(member_depths, cfg.huber_delta);
    } else if (depth_count[i] >= cfg.min_pixels / 2 &&
               !member_depths.empty()) {
      c.depth = robust_mean_inplace(member_depths, cfg.huber_delta);
    }
  }

  std::vector<double> max_r2(n, 0.0);
  for (int py = 0; py < height; ++py) {
    const std::int32_t* label_row = labels.row(py);
    for (int px = 0; px < width; ++px) {
      const std::int32_t label = label_row[px];
      const double dx = centers[label].x - px;
      const double dy = centers[label].y - py;
      max_r2[label] = std::max(max_r2[label], dx * dx + dy * dy);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] > 0) {
      centers[i].radius = std::sqrt(max_r2[i]);
    }
  }
}

Segmentation segment(const Frame& frame, const SegmentationConfig& cfg,
                     int threads) {
  cfg.validate();
  check_frame(frame, cfg);
  Segmentation seg;
  seg.grid_cols = frame.intensity.width() / cfg.grid_spacing;
  seg.grid_rows = frame.intensity.height() / cfg.grid_spacing;
  seg.centers = initialize_centers(frame, cfg);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    seg.labels = assign_pixels(frame, seg.centers, seg.grid_cols,
                               seg.grid_rows, cfg, threads);
    update_centers(frame, seg.labels, seg.centers, cfg);
  }
  return seg;
}

void write_labels_pgm(const LabelImage& labels, std::ostream& out) {
  if (labels.empty()) {
    throw std::invalid_argument("empty label image");
  }
  out << "P5\n" << labels.width() << " " << labels.height() << "\n65535\n";
  std::vector<unsigned char> row_bytes(static_cast<std::size_t>(labels.width()) * 2);
  for (int py = 0; py < labels.height(); ++py) {
    const std::int32_t* label_row = labels.row(py);
    for (int px = 0; px < labels.width(); ++px) {
      const std::int32_t v = std::clamp(label_row[px], 0, 65535);
      row_bytes[2 * px] = static_cast<unsigned char>((v >> 8) & 0xff);
      row_bytes[2 * px + 1] = static_cast<unsigned char>(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row_bytes.data()),
              static_cast<std::streamsize>(row_bytes.size()));
  }
}

void write_centers_csv(const std::vector<ClusterCenter>& centers,
                       std::ostream& out) {
  out << "x,y,d,c,r,count\n";
  std::string line;
  for (const ClusterCenter& c : centers) {
    line.clear();
    append_number(line, c.x);
    line += ',';
    append_number(line, c.y);
    line += ',';
    append_number(line, c.depth);
    line += ',';
    append_number(line, c.intensity);
    line += ',';
    append_number(line, c.radius);
    line += ',';
    char buf[16];
    auto res = std::to_chars(buf, buf + sizeof(buf), c.pixel_count);
    line.append(buf, res.ptr);
    line += '\n';
    out << line;
  }
}

}  // namespace surfelmap
