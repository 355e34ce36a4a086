#include "surfelmap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "surfelmap/parallel.hpp"
#include "text_util.hpp"

namespace surfelmap {

double PerfReport::mean_total_ms() const {
  if (rows.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (const PerfRow& r : rows) {
    sum += r.stages.total_ms();
  }
  return sum / static_cast<double>(rows.size());
}

double PerfReport::mean_fuse_ms() const {
  if (rows.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (const PerfRow& r : rows) {
    sum += r.stages.fuse_ms;
  }
  return sum / static_cast<double>(rows.size());
}

double median(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("median of empty sample");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

struct CellKey {
  std::int64_t packed;
  bool operator==(const CellKey& other) const { return packed == other.packed; }
};

struct CellHash {
  std::size_t operator()(const CellKey& key) const {
    std::uint64_t x = static_cast<std::uint64_t>(key.packed);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return static_cast<std::size_t>(x);
  }
};

constexpr std::int64_t kCellBias = 1 << 20;

CellKey make_key(std::int64_t cx, std::int64_t cy, std::int64_t cz) {
  return CellKey{((cx + kCellBias) << 42) | ((cy + kCellBias) << 21) |
                 (cz + kCellBias)};
}

struct VoxelGrid {
  double cell = 1.0;
  Vec3 origin = Vec3::Zero();  // grid anchored at the cloud's min corner
  std::unordered_map<CellKey, std::vector<int>, CellHash> cells;
  std::span<const Vec3> points;

  // Clamped so the packed key never overflows; clamping is a contraction, so
  // ring lower bounds stay valid and lookups agree with the build pass.
  std::int64_t cell_index(double v, int axis) const {
    const double f = std::floor((v - origin[axis]) / cell);
    const double limit = static_cast<double>(kCellBias - 2);
    return static_cast<std::int64_t>(std::clamp(f, -limit, limit));
  }
};

VoxelGrid build_grid(std::span<const Vec3> reference) {
  VoxelGrid grid;
  grid.points = reference;

  Vec3 lo = reference[0];
  Vec3 hi = reference[0];
  for (const Vec3& p : reference) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  grid.origin = lo;
  const Vec3 extent = hi - lo;
  const double volume =
      std::max(extent.x(), 1e-3) * std::max(extent.y(), 1e-3) *
      std::max(extent.z(), 1e-3);
  grid.cell = std::max(
      1e-6, std::cbrt(volume / static_cast<double>(reference.size())) * 2.0);

  grid.cells.reserve(reference.size());
  for (int i = 0; i < static_cast<int>(reference.size()); ++i) {
    const Vec3& p = reference[i];
    grid.cells[make_key(grid.cell_index(p.x(), 0), grid.cell_index(p.y(), 1),
                        grid.cell_index(p.z(), 2))]
        .push_back(i);
  }
  return grid;
}

double brute_nn2(std::span<const Vec3> points, const Vec3& q) {
  double best2 = std::numeric_limits<double>::infinity();
  for (const Vec3& p : points) {
    best2 = std::min(best2, (p - q).squaredNorm());
  }
  return best2;
}

double grid_nn_distance(const VoxelGrid& grid, const Vec3& q) {
  const std::int64_t qx = grid.cell_index(q.x(), 0);
  const std::int64_t qy = grid.cell_index(q.y(), 1);
  const std::int64_t qz = grid.cell_index(q.z(), 2);

  // Seed with any candidate so the ring lower bound always terminates.
  double best2 = (grid.points[0] - q).squaredNorm();
  for (std::int64_t ring = 0; ring <= 64; ++ring) {
    if (ring > 0) {
      const double lower = (static_cast<double>(ring) - 1.0) * grid.cell;
      if (lower * lower > best2) {
        return std::sqrt(best2);
      }
    }
    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
      for (std::int64_t dy = -ring; dy <= ring; ++dy) {
        for (std::int64_t dz = -ring; dz <= ring; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) {
            continue;
          }
          const auto it = grid.cells.find(make_key(qx + dx, qy + dy, qz + dz));
          if (it == grid.cells.end()) {
            continue;
          }
          for (int idx : it->second) {
            best2 = std::min(best2, (grid.points[idx] - q).squaredNorm());
          }
        }
      }
    }
  }
  // Query far from every occupied cell; fall back to the exact scan.
  return std::sqrt(std::min(best2, brute_nn2(grid.points, q)));
}

AccuracyReport aggregate(std::vector<double> errors, double inlier_threshold) {
  AccuracyReport report;
  report.inlier_threshold = inlier_threshold;
  report.surfel_count = errors.size();
  double sum = 0.0;
  std::size_t inliers = 0;
  for (double e : errors) {
    sum += e;
    if (e < inlier_threshold) {
      ++inliers;
    }
  }
  report.mean_error = sum / static_cast<double>(errors.size());
  report.inlier_fraction =
      static_cast<double>(inliers) / static_cast<double>(errors.size());
  report.median_error = median(std::move(errors));
  return report;
}

}  // namespace

std::vector<double> nn_distances(std::span<const Vec3> queries,
                                 std::span<const Vec3> reference,
                                 int threads) {
  if (reference.empty()) {
    throw std::invalid_argument("empty reference cloud");
  }
  const VoxelGrid grid = build_grid(reference);
  std::vector<double> distances(queries.size());
  parallel_for_blocks(queries.size(), threads,
                      [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      distances[i] = grid_nn_distance(grid, queries[i]);
    }
  });
  return distances;
}

AccuracyReport score_accuracy(std::span<const Surfel> surfels,
                              const SyntheticScene& scene,
                              double inlier_threshold) {
  if (surfels.empty()) {
    throw std::runtime_error("nothing to score");
  }
  std::vector<double> errors;
  errors.reserve(surfels.size());
  for (const Surfel& s : surfels) {
    errors.push_back(surface_distance(scene, s.position));
  }
  return aggregate(std::move(errors), inlier_threshold);
}

AccuracyReport score_accuracy(std::span<const Surfel> surfels,
                              std::span<const Vec3> reference,
                              double inlier_threshold, int threads) {
  if (surfels.empty()) {
    throw std::runtime_error("nothing to score");
  }
  std::vector<Vec3> queries;
  queries.reserve(surfels.size());
  for (const Surfel& s : surfels) {
    queries.push_back(s.position);
  }
  return aggregate(nn_distances(queries, reference, threads),
                   inlier_threshold);
}

void write_accuracy_csv(std::ostream& out, const AccuracyReport& report) {
  out << "mean_error,median_error,inlier_fraction,inlier_threshold,surfel_count\n";
  std::string line;
  textutil::append_double(line, report.mean_error);
  line += ',';
  textutil::append_double(line, report.median_error);
  line += ',';
  textutil::append_double(line, report.inlier_fraction);
  line += ',';
  textutil::append_double(line, report.inlier_threshold);
  line += ',';
  textutil::append_int(line, static_cast<long long>(report.surfel_count));
  line += '\n';
  out << line;
}

void write_perf_csv(std::ostream& out, const PerfReport& report) {
  out << "frame,deform_ms,segment_ms,init_ms,extract_ms,fuse_ms,total_ms,"
         "surfel_count,memory_bytes\n";
  std::string line;
  for (const PerfRow& r : report.rows) {
    line.clear();
    textutil::append_int(line, r.frame);
    line += ',';
    textutil::append_double(line, r.stages.deform_ms);
    line += ',';
    textutil::append_double(line, r.stages.segment_ms);
    line += ',';
    textutil::append_double(line, r.stages.init_ms);
    line += ',';
    textutil::append_double(line, r.stages.extract_ms);
    line += ',';
    textutil::append_double(line, r.stages.fuse_ms);
    line += ',';
    textutil::append_double(line, r.stages.total_ms());
    line += ',';
    textutil::append_int(line, static_cast<long long>(r.surfel_count));
    line += ',';
    textutil::append_int(line, static_cast<long long>(r.memory_bytes));
    line += '\n';
    out << line;
  }
}

std::string summarize(const AccuracyReport& report) {
  std::ostringstream out;
  out << "surfels: " << report.surfel_count
      << "  mean error: " << report.mean_error * 100.0 << " cm"
      << "  median: " << report.median_error * 100.0 << " cm"
      << "  inliers(<" << report.inlier_threshold * 100.0
      << " cm): " << report.inlier_fraction * 100.0 << "%";
  return out.str();
}

std::string summarize(const PerfReport& report) {
  std::ostringstream out;
  if (report.rows.empty()) {
    return "no frames processed";
  }
  std::vector<double> totals;
  std::vector<double> fuse;
  totals.reserve(report.rows.size());
  fuse.reserve(report.rows.size());
  for (const PerfRow& r : report.rows) {
    totals.push_back(r.stages.total_ms());
    fuse.push_back(r.stages.fuse_ms);
  }
  out << "frames: " << report.rows.size()
      << "  mean frame: " << report.mean_total_ms() << " ms"
      << "  median frame: " << median(totals) << " ms"
      << "  mean fuse: " << report.mean_fuse_ms() << " ms"
      << "  median fuse: " << median(fuse) << " ms"
      << "  final surfels: " << report.rows.back().surfel_count;
  return out.str();
}

}  // namespace surfelmap
