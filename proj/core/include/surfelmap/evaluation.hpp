#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "surfelmap/core_types.hpp"
#include "surfelmap/synthetic.hpp"

namespace surfelmap {

struct AccuracyReport {
  double mean_error = 0.0;    // meters
  double median_error = 0.0;
  double inlier_fraction = 0.0;
  double inlier_threshold = 0.04;
  std::size_t surfel_count = 0;
};

struct StageTimings {
  double deform_ms = 0.0;
  double segment_ms = 0.0;
  double init_ms = 0.0;
  double extract_ms = 0.0;
  double fuse_ms = 0.0;

  double total_ms() const {
    return deform_ms + segment_ms + init_ms + extract_ms + fuse_ms;
  }
};

struct PerfRow {
  int frame = 0;
  StageTimings stages;
  std::size_t surfel_count = 0;
  std::size_t memory_bytes = 0;
};

struct PerfReport {
  std::vector<PerfRow> rows;

  double mean_total_ms() const;
  double mean_fuse_ms() const;
};

/// Median of a sample (average of the two middles for even sizes).
double median(std::vector<double> values);

/// Nearest-neighbor distance from each query to the reference cloud,
/// voxel-grid accelerated; exact (matches a brute-force scan).
std::vector<double> nn_distances(std::span<const Vec3> queries,
                                 std::span<const Vec3> reference,
                                 int threads = 1);

/// Per-surfel error = analytic distance to the scene surface.
AccuracyReport score_accuracy(std::span<const Surfel> surfels,
                              const SyntheticScene& scene,
                              double inlier_threshold = 0.04);

/// Per-surfel error = nearest-neighbor distance to the reference cloud.
AccuracyReport score_accuracy(std::span<const Surfel> surfels,
                              std::span<const Vec3> reference,
                              double inlier_threshold = 0.04, int threads = 1);

void write_accuracy_csv(std::ostream& out, const AccuracyReport& report);
void write_perf_csv(std::ostream& out, const PerfReport& report);

std::string summarize(const AccuracyReport& report);
std::string summarize(const PerfReport& report);

}  // namespace surfelmap
