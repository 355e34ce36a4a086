#include <benchmark/benchmark.h>

#include <vector>

#include "surfelmap/fusion.hpp"
#include "surfelmap/pose_graph.hpp"
#include "surfelmap/random.hpp"
#include "surfelmap/superpixel.hpp"
#include "surfelmap/surfel_init.hpp"
#include "surfelmap/synthetic.hpp"

namespace {

using namespace surfelmap;

CameraModel bench_camera() {
  CameraModel cam;
  cam.fx = 500.0;
  cam.fy = 500.0;
  cam.cx = 320.0;
  cam.cy = 240.0;
  cam.width = 640;
  cam.height = 480;
  cam.baseline = 0.1;
  cam.disparity_sigma = 1.0;
  return cam;
}

Frame bench_frame(const CameraModel& cam) {
  const SyntheticScene scene = loop_corridor_scene();
  Frame frame = render_scene(scene, loop_corridor_pose(0.0), cam, 0.5, 0.02,
                             /*seed=*/7, /*threads=*/1);
  frame.frame_index = 0;
  return frame;
}

void BM_Segment(benchmark::State& state) {
  const CameraModel cam = bench_camera();
  const Frame frame = bench_frame(cam);
  const SegmentationConfig cfg;
  for (auto _ : state) {
    Segmentation seg = segment(frame, cfg, 1);
    benchmark::DoNotOptimize(seg.centers.data());
  }
}
BENCHMARK(BM_Segment)->Unit(benchmark::kMillisecond);

void BM_AssignPixels(benchmark::State& state) {
  const CameraModel cam = bench_camera();
  const Frame frame = bench_frame(cam);
  const SegmentationConfig cfg;
  const std::vector<ClusterCenter> centers = initialize_centers(frame, cfg);
  const int cols = cam.width / cfg.grid_spacing;
  const int rows = cam.height / cfg.grid_spacing;
  for (auto _ : state) {
    LabelImage labels = assign_pixels(frame, centers, cols, rows, cfg, 1);
    benchmark::DoNotOptimize(labels.data());
  }
}
BENCHMARK(BM_AssignPixels)->Unit(benchmark::kMillisecond);

void BM_UpdateCenters(benchmark::State& state) {
  const CameraModel cam = bench_camera();
  const Frame frame = bench_frame(cam);
  const SegmentationConfig cfg;
  const std::vector<ClusterCenter> initial = initialize_centers(frame, cfg);
  const int cols = cam.width / cfg.grid_spacing;
  const int rows = cam.height / cfg.grid_spacing;
  const LabelImage labels = assign_pixels(frame, initial, cols, rows, cfg, 1);
  for (auto _ : state) {
    std::vector<ClusterCenter> centers = initial;
    update_centers(frame, labels, centers, cfg);
    benchmark::DoNotOptimize(centers.data());
  }
}
BENCHMARK(BM_UpdateCenters)->Unit(benchmark::kMillisecond);

void BM_PixelNormals(benchmark::State& state) {
  const CameraModel cam = bench_camera();
  const Frame frame = bench_frame(cam);
  for (auto _ : state) {
    NormalImage normals = pixel_normals(frame, cam, 1);
    benchmark::DoNotOptimize(normals.data());
  }
}
BENCHMARK(BM_PixelNormals)->Unit(benchmark::kMillisecond);

void BM_InitSurfels(benchmark::State& state) {
  const CameraModel cam = bench_camera();
  const Frame frame = bench_frame(cam);
  const Segmentation seg = segment(frame, {}, 1);
  const NormalImage normals = pixel_normals(frame, cam, 1);
  for (auto _ : state) {
    SurfelInitResult init = initialize_surfels(frame, seg, normals, {}, cam, 1);
    benchmark::DoNotOptimize(init.surfels.data());
  }
}
BENCHMARK(BM_InitSurfels)->Unit(benchmark::kMillisecond);

void BM_FuseFrame(benchmark::State& state) {
  const CameraModel cam = bench_camera();
  const Frame frame = bench_frame(cam);
  const Pose pose = loop_corridor_pose(0.0);
  const Segmentation seg = segment(frame, {}, 1);
  const NormalImage normals = pixel_normals(frame, cam, 1);
  const SurfelInitResult init =
      initialize_surfels(frame, seg, normals, {}, cam, 1);

  std::vector<Surfel> locals = init.surfels;
  for (Surfel& s : locals) {
    s.position = pose.transform_point(s.position);
    s.normal = pose.transform_vector(s.normal);
    s.attached_keyframe = 0;
  }
  for (auto _ : state) {
    FuseResult fused = fuse_frame(locals, init.surfels, init.surfel_of_center,
                                  seg, pose, 0, cam, {});
    benchmark::DoNotOptimize(fused.surfels.data());
  }
}
BENCHMARK(BM_FuseFrame)->Unit(benchmark::kMillisecond);

void BM_DeformMap(benchmark::State& state) {
  const int keyframes = 50;
  const int per_group = 4000;
  PoseGraph graph(20);
  MapDatabase map;
  SplitMix64 rng(11);
  for (int k = 0; k < keyframes; ++k) {
    Pose pose;
    pose.translation = Vec3(k * 0.25, 0.0, 0.0);
    graph.add_keyframe(k, pose);
    if (k > 0) graph.add_edge(k - 1, k);
    for (int i = 0; i < per_group; ++i) {
      Surfel s;
      s.position = Vec3(rng.uniform() * 10.0, rng.uniform() * 10.0,
                        rng.uniform() * 10.0);
      s.weight = 1.0;
      s.radius = 0.01;
      s.attached_keyframe = k;
      map.append(s);
    }
  }
  deform_map(map, graph, 1);

  double shift = 0.0;
  for (auto _ : state) {
    shift += 1e-4;
    for (int k = 0; k < keyframes; ++k) {
      Pose pose;
      pose.translation = Vec3(k * 0.25 + shift, 0.0, 0.0);
      graph.set_current_pose(k, pose);
    }
    deform_map(map, graph, 1);
    benchmark::DoNotOptimize(map.size());
  }
}
BENCHMARK(BM_DeformMap)->Unit(benchmark::kMillisecond);

void BM_FitPlane(benchmark::State& state) {
  SplitMix64 rng(3);
  std::vector<Vec3> points;
  for (int i = 0; i < 64; ++i) {
    const double x = rng.uniform() * 0.2;
    const double y = rng.uniform() * 0.2;
    points.emplace_back(x, y, 2.0 + 0.01 * rng.gaussian());
  }
  for (auto _ : state) {
    PlaneFit fit = fit_plane(points, -Vec3::UnitZ(), 0.05);
    benchmark::DoNotOptimize(fit.normal.data());
  }
}
BENCHMARK(BM_FitPlane);

}  // namespace

BENCHMARK_MAIN();
