#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "surfelmap/core_types.hpp"
#include "surfelmap/pose_graph.hpp"

namespace surfelmap {

/// Binary little-endian surfel cloud. Per vertex: float x,y,z,nx,ny,nz,
/// uchar gray, float radius, float weight, int update_count, int keyframe_id.
void export_ply(std::span<const Surfel> surfels,
                const std::filesystem::path& path);

/// Map export: vertices ordered by ascending keyframe group, insertion order
/// within a group.
void export_ply(const MapDatabase& map, const std::filesystem::path& path);

/// Reads a surfel cloud written by export_ply, in file order.
std::vector<Surfel> import_ply(const std::filesystem::path& path);

/// Tolerant vertex-position reader for reference clouds: ascii or
/// binary_little_endian, any extra vertex properties, trailing elements
/// ignored. Requires float or double x/y/z.
std::vector<Vec3> load_ply_points(const std::filesystem::path& path);

}  // namespace surfelmap
