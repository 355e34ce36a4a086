#pragma once

#include <map>
#include <set>
#include <span>
#include <vector>

#include "surfelmap/core_types.hpp"

namespace surfelmap {

struct Keyframe {
  int id = -1;
  Pose current_pose;        // world from keyframe
  Pose last_deformed_pose;  // pose the attached surfels are consistent with
};

/// Batched graph mutation for one frame: new keyframes and edges are applied
/// first, then pose replacements (typically a loop-closure optimization).
struct GraphUpdate {
  std::vector<Keyframe> new_keyframes;  // uses id + current_pose
  std::vector<std::pair<int, int>> new_edges;
  std::vector<std::pair<int, Pose>> optimized_poses;

  bool empty() const {
    return new_keyframes.empty() && new_edges.empty() &&
           optimized_poses.empty();
  }
};

/// Undirected covisibility graph over keyframes. Keyframes whose current
/// pose differs from the pose their surfels were last deformed with are
/// tracked in a dirty set; map deformation drains it.
class PoseGraph {
 public:
  explicit PoseGraph(int g_delta = 20);

  int g_delta() const { return g_delta_; }
  void set_g_delta(int g_delta);

  bool has_keyframe(int id) const { return keyframes_.count(id) > 0; }
  const Keyframe& keyframe(int id) const;
  const std::map<int, Keyframe>& keyframes() const { return keyframes_; }

  /// New keyframes start clean: last_deformed_pose = pose.
  void add_keyframe(int id, const Pose& pose);

  /// Unknown endpoints and self-loops are errors; duplicates are ignored.
  void add_edge(int a, int b);
  bool has_edge(int a, int b) const;
  std::size_t edge_count() const { return edge_count_; }
  const std::vector<int>& neighbors(int id) const;

  /// Replaces current_pose; the keyframe is dirty while it differs from
  /// last_deformed_pose.
  void set_current_pose(int id, const Pose& pose);

  const std::set<int>& dirty() const { return dirty_; }

  /// Declares id's surfels consistent: last_deformed_pose = current_pose.
  void mark_deformed(int id);

 private:
  Keyframe& keyframe_mutable(int id);

  int g_delta_;
  std::map<int, Keyframe> keyframes_;
  std::map<int, std::vector<int>> adjacency_;  // sorted neighbor lists
  std::size_t edge_count_ = 0;
  std::set<int> dirty_;
};

/// Surfels grouped by attached keyframe, contiguous per group.
class MapDatabase {
 public:
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  const std::map<int, std::vector<Surfel>>& groups() const { return groups_; }

  /// Appends without validation; use insert_surfels to enforce attachment.
  void append(const Surfel& surfel);

  /// Moves a whole group out of the store (empty if absent).
  std::vector<Surfel> take_group(int keyframe_id);

  /// Applies transform to every surfel of the group: position as a point,
  /// normal as a vector.
  void transform_group(int keyframe_id, const Pose& transform);

 private:
  std::map<int, std::vector<Surfel>> groups_;
  std::size_t size_ = 0;
};

/// Applies new keyframes, then new edges, then optimized poses.
void apply_graph_update(PoseGraph& graph, const GraphUpdate& update);

/// Transforms surfels of every dirty keyframe by current * last_deformed^-1
/// and marks them deformed. Keyframes with unchanged poses are untouched.
void deform_map(MapDatabase& map, PoseGraph& graph, int threads = 1);

/// Keyframe ids whose hop distance from ref_id is strictly below the graph's
/// G_delta (ref itself included), ascending.
std::vector<int> locally_consistent_keyframes(const PoseGraph& graph,
                                              int ref_id);

/// Removes and returns the surfels of all locally consistent keyframes,
/// ascending keyframe id, in-group order preserved. Requires a deformed map.
std::vector<Surfel> extract_local_map(MapDatabase& map, const PoseGraph& graph,
                                      int ref_id);

/// Validated insert: every surfel's attached_keyframe must exist.
void insert_surfels(MapDatabase& map, const PoseGraph& graph,
                    std::span<const Surfel> surfels);

}  // namespace surfelmap
