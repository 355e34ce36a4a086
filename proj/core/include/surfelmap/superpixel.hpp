#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "surfelmap/core_types.hpp"

namespace surfelmap {

/// Superpixel cluster state: mean pixel location, robust mean depth (NaN when
/// unknown), mean intensity, and the radius covering all assigned pixels.
struct ClusterCenter {
  double x = 0.0;
  double y = 0.0;
  double depth = std::numeric_limits<double>::quiet_NaN();
  double intensity = 0.0;
  double radius = 0.0;  // pixels, max distance from an assigned pixel to (x, y)
  int pixel_count = 0;
  int valid_depth_count = 0;
  bool empty = false;  // lost every pixel in the last assignment

  bool has_depth() const { return depth_valid(depth); }
};

struct SegmentationConfig {
  int grid_spacing = 8;            // pixels between initial centers
  double spatial_norm = 4.0;       // normalizes squared pixel distance
  double intensity_norm = 10.0;    // normalizes squared intensity difference
  double inv_depth_norm = 0.05;    // normalizes squared inverse-depth difference
  double huber_delta = 0.05;       // meters, robust mean depth radius
  int iterations = 5;              // assignment/update rounds
  int min_pixels = 16;             // surfel eligibility: strictly more than this

  void validate() const;
};

struct Segmentation {
  std::vector<ClusterCenter> centers;
  LabelImage labels;  // center index per pixel
  int grid_cols = 0;
  int grid_rows = 0;
};

/// One center per grid cell, seeded at the cell midpoint pixel. Seeds without
/// a valid depth measurement start with unknown depth.
std::vector<ClusterCenter> initialize_centers(const Frame& frame,
                                              const SegmentationConfig& cfg);

/// Intensity+location distance (no depth term).
double pixel_distance(const ClusterCenter& center, double px, double py,
                      double intensity, const SegmentationConfig& cfg);

/// Distance with the inverse-depth term; both the center and the pixel must
/// carry valid depth.
double pixel_distance_depth(const ClusterCenter& center, double px, double py,
                            double intensity, double depth,
                            const SegmentationConfig& cfg);

/// Labels each pixel with the best of its four grid-neighbor candidate
/// centers. The depth-aware distance is used only when the pixel and all four
/// candidates have valid depth. Ties keep the first candidate in scan order
/// (top-left, top-right, bottom-left, bottom-right).
LabelImage assign_pixels(const Frame& frame,
                         const std::vector<ClusterCenter>& centers,
                         int grid_cols, int grid_rows,
                         const SegmentationConfig& cfg, int threads = 1);

/// Huber-robust mean: Gauss-Newton from the median, 10 iterations max,
/// step tolerance 1e-6.
double robust_mean_depth(std::span<const double> depths, double huber_delta);

/// Refreshes means, robust depth, radius, and counts from the labels.
/// Centers that lost all pixels keep their previous state and are flagged.
void update_centers(const Frame& frame, const LabelImage& labels,
                    std::vector<ClusterCenter>& centers,
                    const SegmentationConfig& cfg);

/// Full segmentation: seeding plus cfg.iterations assignment/update rounds.
/// Deterministic for a fixed frame and config, at any thread count.
Segmentation segment(const Frame& frame, const SegmentationConfig& cfg,
                     int threads = 1);

/// Debug dumps behind the CLI flag: 16-bit PGM label image and a centers CSV
/// (x,y,d,c,r,count).
void write_labels_pgm(const LabelImage& labels, std::ostream& out);
void write_centers_csv(const std::vector<ClusterCenter>& centers,
                       std::ostream& out);

}  // namespace surfelmap
